"""Central finite-difference gradient oracle shared by the test suite."""

import numpy as np

REL_TOL = 1e-3
ABS_FLOOR = 1e-8


def fd_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Numeric gradient of scalar-valued f() w.r.t. array x, mutated in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def grads_close(analytic: np.ndarray, numeric: np.ndarray,
                rel: float = REL_TOL, floor: float = ABS_FLOOR) -> bool:
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return bool(np.all((diff <= rel * scale) | (diff <= floor)))


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray,
                floor: float = ABS_FLOOR) -> float:
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((diff / scale).max()) if diff.size else 0.0
