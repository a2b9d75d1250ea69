import numpy as np
import pytest

from projnorm.core import GaussianParams
from projnorm.sampling import make_rng, sample_mu, sample_sigma


@pytest.fixture
def rng():
    return make_rng(20240611)


def random_params(n, s=0.5, seed=0, stream=0):
    r = make_rng(seed, stream)
    return GaussianParams(sample_mu(n, r), sample_sigma(n, s, r))


def random_spd(n, rng, scale=1.0):
    a = rng.standard_normal((n, n))
    return scale * (a @ a.T / n + 0.1 * np.eye(n))


def random_rotation(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))
