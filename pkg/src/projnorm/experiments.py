"""Metrics, experiment grids and reports.

Two grids are provided.  ``run_moment_accuracy`` compares the Taylor
moments with Monte Carlo moments for random parameters; ``run_moment_matching``
fits parameters to Monte Carlo moments and scores the recovered values.
Each trial draws everything from its own 64-bit seed, stored in the
record, so any row can be reproduced on its own with :func:`accuracy_trial`
or :func:`matching_trial`.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .core import GaussianParams, ProjNormError, ProjectionVariant
from .fit import FitConfig, FitProblem, fit
from .moments import approx_moments
from .sampling import derive_seed, make_rng, mc_moments, sample_b, sample_c, sample_mu, sample_sigma

VARIANTS = ("pn", "pnc", "pnb", "pnbc")
LAMBDA_GRID = (0.66, 0.9, 0.95, 0.98)

# the four metrics of the accuracy grid and the fit-recovery metrics
ACCURACY_METRICS = ("error_gamma_pct", "cosine_gamma", "error_psi_pct", "cosine_psi")
FIT_METRICS = (
    "error_mu_pct",
    "cosine_mu",
    "error_sigma_pct",
    "cosine_sigma",
    "error_b_pct",
    "cosine_b",
    "error_c_pct",
    "final_loss",
)
SUMMARY_COLUMNS = ("variant", "n", "s", "metric", "count", "median", "q25", "q75", "iqr")


class ConfigError(ProjNormError):
    pass


class ZeroTruthError(ProjNormError):
    pass


class ZeroInputError(ProjNormError):
    pass


def rel_error_pct(estimate, truth) -> float:
    """``100 |est - truth|^2 / |truth|^2`` (Frobenius norm for matrices)."""
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ProjNormError(f"shape mismatch {est.shape} vs {tru.shape}")
    denom = float(np.sum(tru * tru))
    if denom == 0.0:
        raise ZeroTruthError("relative error is undefined for a zero truth value")
    diff = est - tru
    return 100.0 * float(np.sum(diff * diff)) / denom


def cosine_sim(estimate, truth) -> float:
    """Cosine similarity; the trace form ``tr(A B) / (|A|_F |B|_F)`` for symmetric matrices."""
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ProjNormError(f"shape mismatch {est.shape} vs {tru.shape}")
    ne, nt = np.linalg.norm(est), np.linalg.norm(tru)
    if ne == 0.0 or nt == 0.0:
        raise ZeroInputError("cosine similarity needs two nonzero inputs")
    if est.ndim == 2:
        inner = float(np.trace(est @ tru))
    else:
        inner = float(np.sum(est * tru))
    return float(np.clip(inner / (ne * nt), -1.0, 1.0))


@dataclass
class ExperimentRecord:
    experiment: str
    variant: str
    n: int
    s: float
    trial: int
    seed: int
    lam: float = math.nan
    status: str = "ok"
    error_gamma_pct: float = math.nan
    cosine_gamma: float = math.nan
    error_psi_pct: float = math.nan
    cosine_psi: float = math.nan
    error_mu_pct: float = math.nan
    cosine_mu: float = math.nan
    error_sigma_pct: float = math.nan
    cosine_sigma: float = math.nan
    error_b_pct: float = math.nan
    cosine_b: float = math.nan
    error_c_pct: float = math.nan
    final_loss: float = math.nan
    wall_time: float = math.nan

    def __post_init__(self):
        for name in ("error_gamma_pct", "error_psi_pct", "error_mu_pct", "error_sigma_pct",
                     "error_b_pct", "error_c_pct"):
            v = getattr(self, name)
            if v < 0:
                raise ProjNormError(f"{name} must be non-negative, got {v}")
        for name in ("cosine_gamma", "cosine_psi", "cosine_mu", "cosine_sigma", "cosine_b"):
            v = getattr(self, name)
            if not (math.isnan(v) or -1.0 <= v <= 1.0):
                raise ProjNormError(f"{name} must lie in [-1, 1], got {v}")


RECORD_COLUMNS = tuple(f.name for f in fields(ExperimentRecord))
_INT_COLUMNS = {"n", "trial", "seed"}
_STR_COLUMNS = {"experiment", "variant", "status"}


@dataclass(frozen=True)
class ExperimentConfig:
    dims: tuple = (3, 12, 48)
    scales: tuple = (0.125, 0.5)
    trials: int = 20
    mc_samples: int = 100_000
    variant: str = "pn"
    lam: float = 0.9
    # when set, matching runs every value and keeps the one with the lowest
    # median error of B in each (n, s) cell
    lambda_grid: Optional[tuple] = None
    seed: int = 0
    eig_dist: str = "exponential"
    exp_convention: str = "mean"
    fit: FitConfig = field(default_factory=FitConfig)
    include_timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if self.lambda_grid is not None:
            object.__setattr__(self, "lambda_grid", tuple(float(x) for x in self.lambda_grid))
        if not self.dims or any(d < 2 for d in self.dims):
            raise ConfigError("dims must be a non-empty list of integers >= 2")
        if not self.scales or any(not s > 0 for s in self.scales):
            raise ConfigError("scales must be a non-empty list of positive numbers")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.mc_samples < 2:
            raise ConfigError("mc_samples must be at least 2")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for lam in (self.lam, *(self.lambda_grid or ())):
            if not 0.0 <= lam <= 1.0:
                raise ConfigError(f"lambda must be in [0, 1], got {lam}")
        if self.eig_dist not in ("exponential", "uniform"):
            raise ConfigError(f"unknown eig_dist {self.eig_dist!r}")
        if self.exp_convention not in ("mean", "rate"):
            raise ConfigError(f"unknown exp_convention {self.exp_convention!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        if "fit" in d and isinstance(d["fit"], dict):
            d["fit"] = FitConfig.from_dict(d["fit"])
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def trial_seed(seed: int, n: int, s: float, trial: int) -> int:
    """The seed of one grid trial, a function of the run seed and the cell."""
    # s enters through its exact binary representation
    s_key = int.from_bytes(np.float64(s).tobytes(), "little")
    return derive_seed(seed, n, s_key, trial)


def sample_truth(n: int, s: float, variant: str, rng: np.random.Generator, config: ExperimentConfig):
    """Random ground-truth parameters for the accuracy grid."""
    params = GaussianParams(sample_mu(n, rng), sample_sigma(n, s, rng, config.eig_dist))
    b_matrix = sample_b(n, rng, "full") if variant in ("pnb", "pnbc") else None
    c = sample_c(params, rng) if variant in ("pnc", "pnbc") else 0.0
    return params, ProjectionVariant(b_matrix=b_matrix, c_const=c)


def accuracy_trial(config: ExperimentConfig, n: int, s: float, trial: int, seed: int) -> ExperimentRecord:
    start = time.perf_counter()
    rng = make_rng(seed)
    params, variant = sample_truth(n, s, config.variant, rng, config)
    truth = mc_moments(params, variant, config.mc_samples, rng)
    approx = approx_moments(params, variant)
    rec = ExperimentRecord(
        experiment="accuracy",
        variant=config.variant,
        n=n,
        s=s,
        trial=trial,
        seed=seed,
        error_gamma_pct=rel_error_pct(approx.gamma, truth.gamma),
        cosine_gamma=cosine_sim(approx.gamma, truth.gamma),
        error_psi_pct=rel_error_pct(approx.psi, truth.psi),
        cosine_psi=cosine_sim(approx.psi, truth.psi),
    )
    if config.include_timing:
        rec.wall_time = time.perf_counter() - start
    return rec


def run_moment_accuracy(config: ExperimentConfig) -> list[ExperimentRecord]:
    """Approximation accuracy over the ``dims x scales x trials`` grid."""
    return [
        accuracy_trial(config, n, s, t, trial_seed(config.seed, n, s, t))
        for n in config.dims
        for s in config.scales
        for t in range(config.trials)
    ]


def _matching_setup(n: int, s: float, variant: str, rng: np.random.Generator, config: ExperimentConfig):
    """Ground truth and fit constraints for one matching trial.

    ``pn`` and ``pnc`` fit a full covariance.  ``pnb`` and ``pnbc`` use an
    isotropic covariance ``sigma^2 I`` with ``sigma^2 ~ U(0.05, 1) s^2 / n`` and
    a rank-one ``B = I + b v v^T`` both in the truth and in the fit.
    """
    mu = sample_mu(n, rng)
    if variant in ("pn", "pnc"):
        params = GaussianParams(mu, sample_sigma(n, s, rng, config.eig_dist))
        b_matrix, extras = None, {}
        problem_kw = dict(constraint_mode="full_sigma", b_mode="none")
    else:
        sigma2 = rng.uniform(0.05, 1.0) * s**2 / n
        params = GaussianParams(mu, sigma2 * np.eye(n))
        b_matrix, b, v = sample_b(n, rng, "rank1", config.exp_convention)
        extras = {"b": b, "v": v, "sigma2": sigma2}
        problem_kw = dict(constraint_mode="isotropic_sigma", b_mode="rank1")
    c = sample_c(params, rng) if variant in ("pnc", "pnbc") else 0.0
    kind = {"pn": "PN", "pnc": "PN_c", "pnb": "PN_B", "pnbc": "PN_Bc"}[variant]
    return params, ProjectionVariant(b_matrix=b_matrix, c_const=c), extras, dict(variant_kind=kind, **problem_kw)


def matching_trial(
    config: ExperimentConfig, n: int, s: float, trial: int, seed: int, lam: Optional[float] = None
) -> ExperimentRecord:
    """One moment-matching fit; fit failures are recorded in ``status``."""
    lam = config.lam if lam is None else lam
    start = time.perf_counter()
    rng = make_rng(seed)
    params, variant, _, problem_kw = _matching_setup(n, s, config.variant, rng, config)
    observed = mc_moments(params, variant, config.mc_samples, rng)
    rec = ExperimentRecord(
        experiment="matching", variant=config.variant, n=n, s=s, trial=trial, seed=seed, lam=lam
    )
    try:
        result = fit(FitProblem.from_moments(observed, lam=lam, **problem_kw), config.fit)
    except ProjNormError as exc:
        rec.status = f"{type(exc).__name__}: {exc}"
    else:
        p_hat, v_hat = result.params_hat, result.variant_hat
        rec.error_mu_pct = rel_error_pct(p_hat.mu, params.mu)
        rec.cosine_mu = cosine_sim(p_hat.mu, params.mu)
        rec.error_sigma_pct = rel_error_pct(p_hat.sigma, params.sigma)
        rec.cosine_sigma = cosine_sim(p_hat.sigma, params.sigma)
        if variant.b_matrix is not None:
            rec.error_b_pct = rel_error_pct(v_hat.b_matrix, variant.b_matrix)
            rec.cosine_b = cosine_sim(v_hat.b_matrix, variant.b_matrix)
        if variant.c_const > 0:
            rec.error_c_pct = rel_error_pct(v_hat.c_const, variant.c_const)
        rec.final_loss = result.final_loss
    if config.include_timing:
        rec.wall_time = time.perf_counter() - start
    return rec


def _median(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return float(np.median(vals)) if vals else math.nan


def run_moment_matching(config: ExperimentConfig) -> list[ExperimentRecord]:
    """Fit recovery over the grid.

    With ``lambda_grid`` set, every trial is fitted for each value and the
    records of the value with the lowest median ``error_b_pct`` in the cell
    are kept (ties and cells without ``B`` fall back to ``error_sigma_pct``).
    """
    out: list[ExperimentRecord] = []
    for n in config.dims:
        for s in config.scales:
            seeds = [trial_seed(config.seed, n, s, t) for t in range(config.trials)]
            grid = config.lambda_grid or (config.lam,)
            best_key, best_recs = None, None
            for lam in grid:
                recs = [matching_trial(config, n, s, t, sd, lam) for t, sd in enumerate(seeds)]
                key = (_median(r.error_b_pct for r in recs), _median(r.error_sigma_pct for r in recs))
                key = tuple(math.inf if math.isnan(k) else k for k in key)
                if best_key is None or key < best_key:
                    best_key, best_recs = key, recs
            out.extend(best_recs)
    return out


# reports


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "" if math.isnan(value) else format(float(value), ".17g")
    return str(value)


def _parse(name: str, text: str):
    if name in _STR_COLUMNS:
        return text
    if name in _INT_COLUMNS:
        return int(text)
    return math.nan if text == "" else float(text)


def _columns(records: Sequence[ExperimentRecord], include_timing: bool) -> list[str]:
    cols = list(RECORD_COLUMNS)
    if not include_timing:
        cols.remove("wall_time")
    return cols


def summarize(records: Sequence[ExperimentRecord]) -> list[dict]:
    """Median and quartiles of every populated metric per (variant, n, s) cell."""
    cells: dict = {}
    for r in records:
        if r.status == "ok":
            cells.setdefault((r.variant, r.n, r.s), []).append(r)
    rows = []
    for (variant, n, s), recs in sorted(cells.items()):
        for metric in ACCURACY_METRICS + FIT_METRICS:
            vals = np.array([getattr(r, metric) for r in recs], dtype=float)
            vals = vals[~np.isnan(vals)]
            if vals.size == 0:
                continue
            q25, med, q75 = np.percentile(vals, [25, 50, 75])
            rows.append(
                dict(variant=variant, n=n, s=s, metric=metric, count=int(vals.size),
                     median=float(med), q25=float(q25), q75=float(q75), iqr=float(q75 - q25))
            )
    return rows


def report(records: Sequence[ExperimentRecord], fmt: str = "csv", include_timing: bool = False) -> bytes:
    """Serialize records followed by a per-cell summary block.

    CSV output holds the record table, then a blank line and the summary
    table.  Floats use 17 significant digits so values round-trip exactly;
    missing values are empty fields.
    """
    cols = _columns(records, include_timing)
    if fmt == "json":
        doc = {
            "records": [{c: _json_value(getattr(r, c)) for c in cols} for r in records],
            "summary": summarize(records),
        }
        return (json.dumps(doc, indent=1, sort_keys=False) + "\n").encode("utf-8")
    if fmt != "csv":
        raise ProjNormError(f"unknown report format {fmt!r}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in records:
        writer.writerow([_fmt(getattr(r, c)) for c in cols])
    summary = summarize(records)
    if summary:
        buf.write("\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in summary:
            writer.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue().encode("utf-8")


def _json_value(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, np.integer):
        return int(v)
    return v


def records_from_json(data: bytes | str) -> list[ExperimentRecord]:
    doc = json.loads(data)
    out = []
    for row in doc["records"]:
        kw = {k: (math.nan if v is None else v) for k, v in row.items()}
        out.append(ExperimentRecord(**kw))
    return out


def records_from_csv(data: bytes | str) -> list[ExperimentRecord]:
    """Parse the record table of a CSV report (the summary block is skipped)."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    table = text.split("\n\n", 1)[0]
    rows = list(csv.reader(io.StringIO(table)))
    if not rows:
        return []
    header = rows[0]
    return [ExperimentRecord(**{h: _parse(h, v) for h, v in zip(header, row)}) for row in rows[1:] if row]


def summary_from_csv(data: bytes | str) -> list[dict]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    parts = text.split("\n\n", 1)
    if len(parts) < 2:
        return []
    rows = list(csv.DictReader(io.StringIO(parts[1])))
    for row in rows:
        row["n"] = int(row["n"])
        row["count"] = int(row["count"])
        for k in ("s", "median", "q25", "q75", "iqr"):
            row[k] = float(row[k])
    return rows


def record_dict(record: ExperimentRecord) -> dict:
    return asdict(record)
