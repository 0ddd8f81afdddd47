import numpy as np
import pytest


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at flat vector x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def assert_grad_close(analytic, fd, rtol, atol=1e-8):
    """Per-coordinate |a - fd| <= rtol * max(|a|, |fd|) + atol."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    fd = np.asarray(fd, dtype=np.float64).ravel()
    assert analytic.shape == fd.shape
    err = np.abs(analytic - fd)
    bound = rtol * np.maximum(np.abs(analytic), np.abs(fd)) + atol
    worst = int(np.argmax(err - bound))
    assert np.all(err <= bound), (
        f"gradient mismatch at coordinate {worst}: "
        f"analytic={analytic[worst]!r} fd={fd[worst]!r} err={err[worst]:.3e}"
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
