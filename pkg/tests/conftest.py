import numpy as np
import pytest


def numerical_grad(f, arrays, eps=1e-4):
    """Central finite differences of f w.r.t. each array, elementwise.

    f takes the list of float64 arrays and returns a float. Runs entirely
    in float64; this is the oracle the analytic backward passes are checked
    against.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f(arrays)
            flat[i] = orig - eps
            down = f(arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def rel_error(analytic, numeric):
    """Max elementwise |a - n| / max(|a|, |n|, 1)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
