"""Pure NumPy implementations of the hot kernels.

These mirror the compiled Cython kernels in noisediff._kernels._core and are
selected at import time when the extension is unavailable (or when the
environment variable NOISEDIFF_PURE_PYTHON is set). Results agree with the
compiled versions to floating-point reassociation, not bitwise.
"""
import numpy as np

IS_COMPILED = False


def linear_path(M, m, L, xi, x0, record_every):
    """Run the affine recursion x <- M x + m + L xi[s], recording states.

    Parameters
    ----------
    M : (d, d) array
    m : (d,) array
    L : (d, r) array
    xi : (nsteps, r) array of innovations, consumed one row per step
    x0 : (d,) initial state
    record_every : int
        The state is stored after every ``record_every``-th step;
        nsteps must be a multiple of it.

    Returns
    -------
    (nsteps // record_every + 1, d) array starting at x0.
    """
    xi = np.asarray(xi, dtype=float)
    nsteps = xi.shape[0]
    if nsteps % record_every:
        raise ValueError("nsteps must be a multiple of record_every")
    d = len(x0)
    out = np.empty((nsteps // record_every + 1, d))
    out[0] = x0
    x = np.array(x0, dtype=float)
    inn = xi @ L.T + m
    for s in range(nsteps):
        x = M @ x + inn[s]
        if (s + 1) % record_every == 0:
            out[(s + 1) // record_every] = x
    return out


def block_quad_logdet(a_stack, v, scale):
    """Per-block Gaussian quadratic form and log-determinant sums.

    Returns (qf, logdet, bad) where

        qf     = sum_j v_j^T (scale * A_j)^{-1} v_j
        logdet = sum_j log det A_j

    and bad is -1, or the first block index whose A_j is not positive
    definite (in which case qf and logdet are NaN).
    """
    a_stack = np.asarray(a_stack, dtype=float)
    v = np.asarray(v, dtype=float)
    try:
        chol = np.linalg.cholesky(a_stack)
    except np.linalg.LinAlgError:
        return np.nan, np.nan, _first_bad_block(a_stack)
    logdet = 2.0 * float(np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2))))
    sol = np.linalg.solve(a_stack, v[:, :, None])[:, :, 0]
    qf = float(np.einsum("ji,ji->", v, sol)) / scale
    return qf, logdet, -1


def _first_bad_block(a_stack):
    for j in range(a_stack.shape[0]):
        try:
            np.linalg.cholesky(a_stack[j])
        except np.linalg.LinAlgError:
            return j
    return -1
