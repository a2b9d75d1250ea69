"""Command-line interface.

Subcommands::

    projnorm moments    --params P.json [--method approx|exact|mc]
    projnorm pdf        --params P.json --points Y.csv
    projnorm sample     --params P.json -m 1000 --out draws.csv
    projnorm fit        --observed M.json [--lambda 0.9]
    projnorm experiment accuracy|matching [--config C.json]

Parameter files are JSON objects with ``mu`` and ``sigma`` and optionally
``b`` (matrix) and ``c``.  ``--variant`` selects which of ``b`` and ``c`` are
used; by default the variant follows from the keys present.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .core import GaussianParams, ProjNormError, ProjectionVariant
from .density import logpdf
from .exact import exact_moments_isotropic
from .experiments import ExperimentConfig, report, run_moment_accuracy, run_moment_matching
from .fit import FitConfig, FitProblem, fit
from .moments import approx_moments
from .sampling import make_rng, mc_moments, sample_projected

log = logging.getLogger("projnorm")

_FIT_SETUP = {
    "pn": dict(variant_kind="PN", constraint_mode="full_sigma", b_mode="none"),
    "pnc": dict(variant_kind="PN_c", constraint_mode="full_sigma", b_mode="none"),
    "pnb": dict(variant_kind="PN_B", constraint_mode="isotropic_sigma", b_mode="rank1"),
    "pnbc": dict(variant_kind="PN_Bc", constraint_mode="isotropic_sigma", b_mode="rank1"),
}


def _read_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _load_params(path: str, variant: str | None) -> tuple[GaussianParams, ProjectionVariant]:
    d = _read_json(path)
    params = GaussianParams.from_dict(d)
    b = d.get("b")
    c = float(d.get("c") or 0.0)
    if variant is not None:
        if variant in ("pn", "pnc"):
            b = None
        elif b is None:
            raise ProjNormError(f"variant {variant} needs a 'b' matrix in {path}")
        if variant in ("pn", "pnb"):
            c = 0.0
        elif not c > 0:
            raise ProjNormError(f"variant {variant} needs a positive 'c' in {path}")
    return params, ProjectionVariant(b_matrix=b, c_const=c)


def _write(data: bytes, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(out).write_bytes(data)


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, indent=1) + "\n").encode("utf-8")


def _rows_csv(header: list[str], rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format(float(v), ".17g") for v in row])
    return buf.getvalue().encode("utf-8")


def _read_points(path: str) -> np.ndarray:
    if path.endswith(".json"):
        return np.asarray(_read_json(path), dtype=float)
    # CSV with an optional header row
    rows = list(csv.reader(Path(path).read_text(encoding="utf-8").splitlines()))
    rows = [r for r in rows if r]
    try:
        float(rows[0][0])
    except ValueError:
        rows = rows[1:]
    return np.asarray(rows, dtype=float)


def cmd_moments(args) -> int:
    params, variant = _load_params(args.params, args.variant)
    if args.method == "approx":
        m = approx_moments(params, variant)
    elif args.method == "exact":
        sigma2 = params.sigma[0, 0]
        if variant.kind != "pn" or not np.allclose(params.sigma, sigma2 * np.eye(params.n)):
            raise ProjNormError("exact moments need variant pn and an isotropic covariance")
        m = exact_moments_isotropic(params.mu, sigma2)
    else:
        m = mc_moments(params, variant, args.samples, make_rng(args.seed))
    out = {"method": args.method, "variant": variant.kind, **m.to_dict()}
    if args.format == "csv":
        rows = [[g, *p] for g, p in zip(m.gamma, m.psi)]
        cols = ["gamma"] + [f"psi_{j}" for j in range(params.n)]
        _write(_rows_csv(cols, rows), args.out)
    else:
        _write(_dump_json(out), args.out)
    return 0


def cmd_pdf(args) -> int:
    params, variant = _load_params(args.params, args.variant)
    y = _read_points(args.points)
    vals = np.atleast_1d(logpdf(y, params, variant))
    if args.format == "json":
        _write(_dump_json({"variant": variant.kind, "logpdf": vals.tolist()}), args.out)
    else:
        _write(_rows_csv(["logpdf"], vals[:, None]), args.out)
    return 0


def cmd_sample(args) -> int:
    params, variant = _load_params(args.params, args.variant)
    y = sample_projected(params, variant, args.m, make_rng(args.seed))
    if args.format == "json":
        _write(_dump_json(y.tolist()), args.out)
    else:
        _write(_rows_csv([f"y{j}" for j in range(params.n)], y), args.out)
    return 0


def cmd_fit(args) -> int:
    observed = _read_json(args.observed)
    config = FitConfig.from_dict(_read_json(args.config)) if args.config else FitConfig()
    variant = args.variant or "pn"
    problem = FitProblem(
        observed["gamma"], observed["psi"], lam=args.lam, **_FIT_SETUP[variant]
    )
    result = fit(problem, config)
    out = {
        "variant": variant,
        "lambda": args.lam,
        **result.params_hat.to_dict(),
        **result.variant_hat.to_dict(),
        "final_loss": result.final_loss,
        "iterations": result.iterations,
        "converged": result.converged,
    }
    for k, v in result.extras.items():
        out[f"fit_{k}"] = np.asarray(v).tolist()
    _write(_dump_json(out), args.out)
    return 0


def cmd_experiment(args) -> int:
    d = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        d["seed"] = args.seed
    if args.variant is not None:
        d["variant"] = args.variant
    config = ExperimentConfig.from_dict(d)
    runner = run_moment_accuracy if args.which == "accuracy" else run_moment_matching
    log.info("running %s grid: dims=%s scales=%s trials=%d", args.which, config.dims, config.scales, config.trials)
    records = runner(config)
    _write(report(records, args.format, include_timing=config.include_timing), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--variant", choices=("pn", "pnc", "pnb", "pnbc"), default=None)
    common.add_argument("--out", default=None, help="output path (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="projnorm", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("moments", parents=[common], help="approximate, exact or Monte Carlo moments")
    p.add_argument("--params", required=True)
    p.add_argument("--method", choices=("approx", "exact", "mc"), default="approx")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.set_defaults(func=cmd_moments, default_format="json")

    p = sub.add_parser("pdf", parents=[common], help="log-density at points")
    p.add_argument("--params", required=True)
    p.add_argument("--points", required=True, help="CSV or JSON file of points, one per row")
    p.set_defaults(func=cmd_pdf, default_format="json")

    p = sub.add_parser("sample", parents=[common], help="draws of the projected variable")
    p.add_argument("--params", required=True)
    p.add_argument("-m", type=int, default=1000, help="number of draws")
    p.set_defaults(func=cmd_sample, default_format="csv")

    p = sub.add_parser("fit", parents=[common], help="moment-matching fit")
    p.add_argument("--observed", required=True, help="JSON with gamma and psi")
    p.add_argument("--lambda", dest="lam", type=float, default=0.9)
    p.set_defaults(func=cmd_fit, default_format="json")

    p = sub.add_parser("experiment", parents=[common], help="run an experiment grid")
    p.add_argument("which", choices=("accuracy", "matching"))
    p.set_defaults(func=cmd_experiment, default_format="csv")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.format is None:
        args.format = args.default_format
    if args.command != "experiment" and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (ProjNormError, OSError, KeyError) as exc:
        print(f"projnorm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
