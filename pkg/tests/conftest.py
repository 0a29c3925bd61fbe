import numpy as np
import pytest
from scipy.spatial.distance import cdist


def random_spd(rng, p, spread=1.0):
    """SPD matrix with log-eigenvalues in [-spread, spread] and a random basis."""
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    w = np.exp(rng.uniform(-spread, spread, p))
    P = (Q * w) @ Q.T
    return 0.5 * (P + P.T)


def random_corr(rng, p, spread=0.8):
    P = random_spd(rng, p, spread)
    d = 1.0 / np.sqrt(np.diag(P))
    C = P * d[:, None] * d[None, :]
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    return C


def corr2(x):
    return np.array([[1.0, x], [x, 1.0]])


def gaussian_field(rng, coords, n_fields, range_, nugget=0.0):
    """Independent exponential-covariance fields by a dense numpy Cholesky."""
    C = (1.0 - nugget) * np.exp(-3.0 * cdist(coords, coords) / range_)
    C[np.diag_indices_from(C)] += nugget
    L = np.linalg.cholesky(C + 1e-12 * np.eye(len(C)))
    return L @ rng.standard_normal((len(C), n_fields))


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)


ACCEPTANCE = {}


def record(number, passed, detail):
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
