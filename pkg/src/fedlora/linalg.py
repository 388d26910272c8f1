"""Dense numeric substrate: seeded RNG streams, symmetric eigendecomposition,
and finite-difference oracles used for gradient/Hessian checks."""

import numpy as np

SYMMETRY_ATOL = 1e-9


def make_rng(seed, *stream):
    """Deterministic RNG. Extra integers select independent sub-streams of
    the same root seed (device id, round index, ...)."""
    return np.random.default_rng([int(seed)] + [int(s) for s in stream])


def eigh_symmetric(m):
    """Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues ascending, eigenvectors as columns).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    if np.max(np.abs(m - m.T)) > SYMMETRY_ATOL:
        raise ValueError("matrix is not symmetric within tolerance")
    w, v = np.linalg.eigh(m)
    return w, v


def default_step(x):
    """Finite-difference step scaled by the magnitude of the argument."""
    x = np.asarray(x, dtype=np.float64)
    return 1e-5 * max(1.0, float(np.max(np.abs(x))) if x.size else 1.0)


def finite_diff_gradient(f, x, h=None):
    """Central-difference gradient of a scalar function, component by component."""
    x = np.asarray(x, dtype=np.float64)
    if h is None:
        h = default_step(x)
    if h <= 0:
        raise ValueError("step must be positive")
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fp = f(x + e)
        fm = f(x - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ArithmeticError(f"non-finite evaluation at component {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return g


def finite_diff_hessian(grad, x, h=None):
    """Symmetrized central-difference Jacobian of a gradient function.

    `grad` maps a vector to a vector of the same size; the result is the
    symmetrized Jacobian, exact for linear maps.
    """
    x = np.asarray(x, dtype=np.float64)
    if h is None:
        h = default_step(x)
    if h <= 0:
        raise ValueError("step must be positive")
    n = x.size
    jac = np.empty((n, n))
    for i in range(n):
        e = np.zeros_like(x)
        e[i] = h
        gp = np.asarray(grad(x + e), dtype=np.float64)
        gm = np.asarray(grad(x - e), dtype=np.float64)
        if not (np.all(np.isfinite(gp)) and np.all(np.isfinite(gm))):
            raise ArithmeticError(f"non-finite gradient at component {i}")
        jac[i] = (gp - gm) / (2.0 * h)
    return 0.5 * (jac + jac.T)
