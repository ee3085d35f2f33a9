"""Complementarity and penalty solvers for the implicit obstacle step.

Each time step of the constrained schemes solves, for an SPD M-matrix B:

* projected step (linear complementarity): x >= psi, B x - q >= 0,
  (x - psi)' (B x - q) = 0; solved by projected SOR, for which the
  M-matrix property guarantees convergence.  An exact unconstrained solve
  is accepted outright when it is already feasible -- it is then the unique
  LCP solution.
* penalized step: B x - pen * (x - psi)^- = q; solved by a semismooth
  active-set iteration, each pass a sparse solve of (B + pen * D_A).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError

__all__ = ["psor", "penalized_solve"]

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True)
def _psor_sweeps(indptr, indices, data, diag, q, psi, x, omega, tol, max_sweeps):
    n = x.size
    for sweep in range(max_sweeps):
        delta = 0.0
        for i in range(n):
            acc = 0.0
            for jj in range(indptr[i], indptr[i + 1]):
                acc += data[jj] * x[indices[jj]]
            xi = x[i] + omega * (q[i] - acc) / diag[i]
            if xi < psi[i]:
                xi = psi[i]
            d = abs(xi - x[i])
            if d > delta:
                delta = d
            x[i] = xi
        if delta <= tol:
            return sweep + 1
    return -1


def psor(B: sp.csr_matrix, q: np.ndarray, psi: np.ndarray, x0: np.ndarray,
         omega: float = 1.5, tol: float = 1e-10, max_sweeps: int = 100_000):
    """Projected SOR for the LCP (B, q) with lower bound psi.

    After the sweeps converge, the contact set they identified (nodes pinned
    exactly at psi) is polished by one direct solve of the inactive block, so
    off-contact residuals drop to roundoff instead of the sweep tolerance.
    The polish is kept only if it stays feasible and its contact residuals
    stay nonnegative.

    Returns (x, sweeps); raises SolverError on non-convergence.
    """
    q = np.asarray(q, dtype=float)
    psi = np.asarray(psi, dtype=float)
    x = np.maximum(np.asarray(x0, dtype=float).copy(), psi)
    diag = B.diagonal()
    if diag.min() <= 0:
        raise SolverError("PSOR requires a positive diagonal")
    sweeps = _psor_sweeps(B.indptr, B.indices, B.data, diag, q, psi,
                          x, omega, tol, max_sweeps)
    if sweeps < 0:
        raise SolverError(f"projected SOR did not converge in {max_sweeps} sweeps")

    contact = x == psi
    if contact.any() and not contact.all():
        free = ~contact
        Bff = B[free][:, free].tocsc()
        rhs = q[free] - B[free][:, contact] @ psi[contact]
        xf = spla.spsolve(Bff, rhs)
        slack = 1e-12 * (1.0 + np.abs(psi[free]))
        if np.all(xf >= psi[free] - slack):
            polished = x.copy()
            polished[free] = np.maximum(xf, psi[free])
            r_contact = (B @ polished - q)[contact]
            if r_contact.min(initial=0.0) >= -tol:
                x = polished
    elif not contact.any():
        x = spla.spsolve(B.tocsc(), q)
    return x, int(sweeps)


def penalized_solve(B: sp.csc_matrix, lu, q: np.ndarray, psi: np.ndarray,
                    pen: float, tol: float = 1e-12, max_iters: int = 200):
    """Solve B x - pen * (x - psi)^- = q by active-set iteration.

    ``lu`` is a prefactorization of B used for the unconstrained start.
    Returns (x, iterations, residual_inf).
    """
    q = np.asarray(q, dtype=float)
    psi = np.asarray(psi, dtype=float)
    scale = 1.0 + float(np.abs(q).max(initial=0.0))
    x = lu.solve(q)
    active = x < psi
    for it in range(1, max_iters + 1):
        if active.any():
            d = np.where(active, pen, 0.0)
            M = B + sp.diags(d)
            x = spla.spsolve(M.tocsc(), q + d * psi)
        else:
            x = lu.solve(q)
        resid = B @ x - pen * np.maximum(psi - x, 0.0) - q
        new_active = x < psi
        if np.array_equal(new_active, active) and np.abs(resid).max() <= tol * scale:
            return x, it, float(np.abs(resid).max())
        active = new_active
    raise SolverError(f"penalized step did not converge in {max_iters} iterations")
