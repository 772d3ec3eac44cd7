"""Cubic-regularized Newton phase for strongly monotone saddle problems.

Each outer iteration solves the saddle subproblem of the cubic-regularized
second-order model of g, backtracks its regularization weight until the
step is short enough, and keeps either the full or the damped step,
whichever has the smaller merit ``|F|^2 / 2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import brentq

from tensorvi.core import BudgetExceeded, InnerSolveFailed, Phase, PointZ, RunTrace, SolverParams

MAX_FIXED_POINT = 100
STALL_LIMIT = 30
MAX_BACKTRACKS = 200
DAMPING = 0.5


@dataclass(frozen=True, eq=False)
class CubicSubproblem:
    """Saddle model ``g(z_k) + <grad g, d> + hess[d,d]/2 + gamma/3 (|d_x|^3 - |d_y|^3)``.

    Stored through its first-order data: ``f_k = F(z_k)`` and ``jac_k = dF(z_k)``.
    """

    z_k: PointZ
    gamma_k: float
    f_k: np.ndarray
    jac_k: np.ndarray

    @classmethod
    def build(cls, oracle, z_k: PointZ, gamma_k: float) -> "CubicSubproblem":
        z = z_k.stacked()
        return cls(z_k, float(gamma_k), oracle.operator(z), oracle.jacobian_f(z))


def stationarity_residual(f, jac, gamma, d, n) -> float:
    """Norm of ``F + dF d + gamma (|d_x| d_x, |d_y| d_y)``."""
    dx, dy = d[:n], d[n:]
    reg = np.concatenate([np.linalg.norm(dx) * dx, np.linalg.norm(dy) * dy])
    return float(np.linalg.norm(f + jac @ d + gamma * reg))


def _solve_cubic(f: np.ndarray, jac: np.ndarray, gamma: float, n: int, tol: float) -> np.ndarray:
    dim = f.size
    fnorm = float(np.linalg.norm(f))
    target = tol * (1.0 + fnorm)
    if fnorm == 0.0:
        return np.zeros(dim)
    if gamma == 0.0:
        try:
            return lu_solve(lu_factor(jac), -f)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise InnerSolveFailed(f"Newton system factorization failed: {exc}") from exc

    def lin(rx, ry):
        diag = np.concatenate([np.full(n, gamma * rx), np.full(dim - n, gamma * ry)])
        return np.linalg.solve(jac + np.diag(diag), -f)

    def radii(d):
        return float(np.linalg.norm(d[:n])), float(np.linalg.norm(d[n:]))

    # damped fixed point on the block radii, started from the Newton step
    d = lin(0.0, 0.0)
    r = np.array(radii(d))
    best = np.inf
    stalls = 0
    for _ in range(MAX_FIXED_POINT):
        d = lin(*r)
        res = stationarity_residual(f, jac, gamma, d, n)
        if res <= target:
            return d
        if res < best * (1 - 1e-3):
            best = res
        else:
            stalls += 1
            if stalls >= STALL_LIMIT:
                break
        r = DAMPING * r + (1 - DAMPING) * np.array(radii(d))

    # fallback: nested root finding on the radius equations inside [0, |F| / mu_sym]
    mu_sym = float(np.linalg.eigvalsh(0.5 * (jac + jac.T))[0])
    if mu_sym <= 0:
        raise InnerSolveFailed("Jacobian is not strongly monotone; cubic subproblem ill-posed")
    r_max = fnorm / mu_sym * (1 + 1e-9) + 1e-300

    def ry_of(rx):
        h = lambda ry: radii(lin(rx, ry))[1] - ry
        if h(0.0) <= 0:
            return 0.0
        return brentq(h, 0.0, r_max, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)

    hx = lambda rx: radii(lin(rx, ry_of(rx)))[0] - rx
    try:
        rx = 0.0 if hx(0.0) <= 0 else brentq(hx, 0.0, r_max, xtol=1e-300,
                                              rtol=4 * np.finfo(float).eps, maxiter=200)
        d = lin(rx, ry_of(rx))
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise InnerSolveFailed(f"cubic subproblem radius search failed: {exc}") from exc
    res = stationarity_residual(f, jac, gamma, d, n)
    if res > target:
        raise InnerSolveFailed(f"cubic subproblem residual {res:.3e} above {target:.3e}")
    return d


def solve_cubic_subproblem(sub: CubicSubproblem, tol: float = 1e-12) -> PointZ:
    """Saddle point of the cubic model, returned as the displacement ``(d_x, d_y)``."""
    d = _solve_cubic(sub.f_k, sub.jac_k, sub.gamma_k, sub.z_k.n, tol)
    return PointZ.from_stacked(d, sub.z_k.n)


@dataclass(frozen=True)
class CrnState:
    z_k: PointZ
    gamma_k: float
    k: int = 0
    merit: Optional[float] = None
    backtracks: int = 0
    damped: bool = False


def crn_step(oracle, state: CrnState, params: SolverParams,
             gamma_bar: Optional[float] = None) -> CrnState:
    """One outer iteration: reset gamma, backtrack, solve, pick the better candidate."""
    n = oracle.n
    z = state.z_k.stacked()
    f = oracle.operator(z)
    jac = oracle.jacobian_f(z)
    gamma = params.crn_gamma_bar if gamma_bar is None else gamma_bar
    for backtracks in range(MAX_BACKTRACKS + 1):
        d = _solve_cubic(f, jac, gamma, n, params.inner_tol)
        step = np.linalg.norm(d[:n]) + np.linalg.norm(d[n:])
        if gamma * step <= params.mu:
            break
        gamma *= params.rho
    else:
        raise InnerSolveFailed(f"gamma backtracking exceeded {MAX_BACKTRACKS} reductions")
    assert gamma * step <= params.mu
    res = stationarity_residual(f, jac, gamma, d, n)
    assert res <= params.inner_tol * (1.0 + np.linalg.norm(f)), "cubic subproblem not stationary"

    z_damped = z + params.alpha * d
    z_full = z + d
    f_damped = oracle.operator(z_damped)
    f_full = oracle.operator(z_full)
    m_damped = 0.5 * float(f_damped @ f_damped)
    m_full = 0.5 * float(f_full @ f_full)
    if m_damped < m_full:
        z_new, m_new, damped = z_damped, m_damped, True
    else:
        z_new, m_new, damped = z_full, m_full, False
    return CrnState(PointZ.from_stacked(z_new, n), gamma, state.k + 1, m_new, backtracks, damped)


def crn_run(oracle, z0: PointZ, eps_merit: float, params: SolverParams,
            trace: Optional[RunTrace] = None, max_iter: int = 100,
            gamma_bar: Optional[float] = None) -> PointZ:
    """Iterate :func:`crn_step` until the merit drops to ``eps_merit``.

    Raises ``BudgetExceeded`` after ``max_iter`` iterations.
    """
    if not eps_merit > 0:
        raise ValueError("eps_merit must be positive")
    f0 = oracle.operator(z0.stacked())
    state = CrnState(z0, params.crn_gamma_bar if gamma_bar is None else gamma_bar, 0,
                     0.5 * float(f0 @ f0))
    while state.merit > eps_merit:
        if state.k >= max_iter:
            raise BudgetExceeded(f"CRN did not reach merit {eps_merit:.3e} in {max_iter} iterations")
        state = crn_step(oracle, state, params, gamma_bar)
        if trace is not None:
            trace.log(Phase.CRN, 0, state.k, state.gamma_k, np.sqrt(2.0 * state.merit), state.z_k)
    return state.z_k
