"""Shared oracles for the test suite.

The finite-difference helpers deliberately avoid the package's own tape:
they perturb raw numpy arrays in place and re-evaluate a plain forward
function, so gradient tests compare two independent computations.
"""

import numpy as np


def rel_err(analytic, numeric) -> float:
    """Max elementwise |a - n| / max(1, |a|, |n|)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    assert a.shape == n.shape, f"shape mismatch {a.shape} vs {n.shape}"
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def fd_gradient(scalar_fn, arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar_fn() w.r.t. arr, elementwise.

    Mutates arr in place during probing and restores every entry.
    """
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = scalar_fn()
        flat[i] = orig - step
        fm = scalar_fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad
