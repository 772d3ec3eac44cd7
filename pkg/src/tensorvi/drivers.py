"""Top-level algorithms: restarted mirror-prox, the hybrid with a Newton-type
finish, and the gradient-norm minimizer."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from tensorvi.core import (
    LP_OPERATIONAL,
    BudgetExceeded,
    InnerSolveFailed,
    Phase,
    PointZ,
    RestartInfo,
    RunTrace,
    SolverParams,
    Status,
    ceil_tol,
    norm_z,
)
from tensorvi.crn import _solve_cubic, crn_run
from tensorvi.homp import homp_run
from tensorvi.oracle import CountingOracle, SaddleOracle, _vec, value_difference


class Algorithm(str, enum.Enum):
    HOMP = "HOMP"
    RESTARTED = "RESTARTED"
    HYBRID = "HYBRID"
    GRADNORM = "GRADNORM"
    CRN_ONLY = "CRN_ONLY"


def restarts_for_gap(mu: float, r0: float, eps_gap: float) -> int:
    """``ceil(log2(mu R^2 / eps) / 2)``, at least one restart."""
    return max(1, ceil_tol(0.5 * math.log2(mu * r0**2 / eps_gap)))


def restarts_for_region(l2: float, r0: float, xi: float, mu: float) -> int:
    """Restarts needed before the radius bound enters the quadratic-convergence region.

    With ``l2 == 0`` the region is the whole space and one restart suffices.
    """
    if l2 == 0:
        return 1
    return max(1, ceil_tol(math.log2(l2 * r0 * xi / mu) + 1.0))


def restart_budget(lp: float, radius: float, mu: float, p: int) -> int:
    """``ceil((64 lp R_i^(p-1) / mu)^(2/(p+1)))``, at least one iteration."""
    return max(1, ceil_tol((64.0 * lp * radius ** (p - 1) / mu) ** (2.0 / (p + 1))))


@dataclass(frozen=True)
class RestartSchedule:
    n: int
    radii: tuple
    budgets: tuple

    @classmethod
    def build(cls, n: int, r0: float, params: SolverParams) -> "RestartSchedule":
        if n < 1:
            raise ValueError("at least one restart is required")
        radii = tuple(r0 / 2.0 ** i for i in range(n))
        budgets = tuple(restart_budget(params.lp, r, params.mu, params.p) for r in radii)
        return cls(n, radii, budgets)

    @property
    def total_iterations(self) -> int:
        return sum(self.budgets)


def _counted(oracle: SaddleOracle, trace: Optional[RunTrace]) -> SaddleOracle:
    if trace is None:
        return oracle
    if isinstance(oracle, CountingOracle) and oracle.counts is trace.counts:
        return oracle
    return CountingOracle(oracle, trace.counts)


def restarted_homp(oracle: SaddleOracle, z1: PointZ, params: SolverParams,
                   trace: Optional[RunTrace] = None, n_restarts: Optional[int] = None,
                   reference: Optional[PointZ] = None) -> PointZ:
    """Restart mirror-prox on radii ``R / 2^(i-1)``.

    ``n_restarts`` defaults to the count needed for a gap of ``params.eps_gap``.
    The per-restart start/end points land in ``trace.restarts``.
    """
    oracle = _counted(oracle, trace)
    if reference is None and trace is not None:
        reference = trace.reference
    n = restarts_for_gap(params.mu, params.r0, params.eps_gap) if n_restarts is None else n_restarts
    schedule = RestartSchedule.build(n, params.r0, params)
    z = z1
    g_last = None
    for i, (radius, budget) in enumerate(zip(schedule.radii, schedule.budgets), start=1):
        res = homp_run(oracle, z, params.p, budget, params, trace=trace, restart_index=i,
                       reference=reference, gamma_init=g_last)
        if trace is not None:
            trace.restarts.append(RestartInfo(i, z, res.point, radius, budget,
                                              res.gamma_total, res.weighted_residual))
        g_last = res.gamma_last if res.degenerate_steps == 0 else None
        z = res.point
    return z


def hybrid_solve(oracle: SaddleOracle, z1: PointZ, params: SolverParams,
                 trace: Optional[RunTrace] = None, max_crn_iter: int = 100) -> PointZ:
    """Restarted mirror-prox until the quadratic region is reached, then the CRN phase.

    The CRN phase stops at merit ``mu^2 eps_gap / l1``, which bounds the gap by ``eps_gap``.
    """
    oracle = _counted(oracle, trace)
    n = restarts_for_region(params.l2, params.r0, params.xi, params.mu)
    z_handoff = restarted_homp(oracle, z1, params, trace, n_restarts=n)
    if trace is not None:
        trace.checkpoints.append(("handoff", n, z_handoff))
    eps_merit = params.mu**2 * params.eps_gap / params.l1
    return crn_run(oracle, z_handoff, eps_merit, params, trace, max_iter=max_crn_iter)


def tensor_step(oracle: SaddleOracle, z: PointZ, p: int, M: float,
                lp: Optional[float] = None, tol: float = 1e-12) -> PointZ:
    """Min-max point of the regularized second-order model of g at ``z``.

    Only ``p == 2`` is built in. The model's cubic terms carry weight
    ``M sqrt(2) / 3!`` per block, so stationarity reads
    ``F + dF d + (M sqrt(2)/2)(|d_x| d_x, |d_y| d_y) = 0``.
    """
    if p != 2:
        raise NotImplementedError("tensor_step is built in for p = 2 only")
    if lp is not None and M < math.sqrt(2.0) * p * lp * (1 - 1e-12):
        raise ValueError(f"M={M} is below sqrt(2) p lp = {math.sqrt(2.0) * p * lp}")
    zs = _vec(z)
    f = oracle.operator(zs)
    jac = oracle.jacobian_f(zs)
    d = _solve_cubic(f, jac, M * math.sqrt(2.0) / 2.0, oracle.n, tol)
    return PointZ.from_stacked(zs + d, oracle.n)


def gradient_roundoff(oracle: SaddleOracle, z: PointZ, l1: float) -> float:
    """Floating-point uncertainty of ``|grad g(z)|``, from ``l1 |z|`` plus the gradient at 0."""
    dim = oracle.n + oracle.m
    g0 = float(np.linalg.norm(oracle.grad(np.zeros(dim))))
    return 16.0 * math.sqrt(dim) * np.finfo(float).eps * (l1 * norm_z(z) + g0)


def gradient_gap_bound(oracle: SaddleOracle, center: PointZ, out: PointZ, M: float,
                       p: int = 2, grad_floor: float = 0.0) -> tuple[float, float]:
    """Both sides of the gradient-norm vs. partial-gap inequality at a tensor step.

    Returns ``(lhs, rhs)`` with
    ``lhs = |grad g(out)|^((p+1)/p) M^((3p+1)/(2p)) / (2^((2p^2+p+1)/(2p)) p (p+1)!)`` and
    ``rhs = g(x, y_out) - g(x_out, y)``, ``(x, y)`` being the step's center.
    ``grad_floor`` is subtracted from the measured gradient norm first, so that a
    gradient at roundoff level does not count against an exact-arithmetic bound.
    """
    n = oracle.n
    gnorm = max(0.0, float(np.linalg.norm(oracle.grad(out.stacked()))) - grad_floor)
    lhs = (gnorm ** ((p + 1) / p) * M ** ((3 * p + 1) / (2 * p))
           / (2 ** ((2 * p * p + p + 1) / (2 * p)) * p * math.factorial(p + 1)))
    zc = center.stacked()
    x_side = np.concatenate([zc[:n], out.y])   # (x, y_out)
    y_side = np.concatenate([out.x, zc[n:]])   # (x_out, y)
    rhs = float(value_difference(oracle, zc, x_side) - value_difference(oracle, zc, y_side))
    return lhs, rhs


class RegularizedOracle(SaddleOracle):
    """``g_mu(x, y) = g(x, y) + mu_reg/2 (|x - x1|^2 - |y - y1|^2)``."""

    def __init__(self, base: SaddleOracle, anchor: PointZ, mu_reg: float):
        if not mu_reg > 0:
            raise ValueError("mu_reg must be positive")
        self.base = base
        self.anchor = anchor
        self.mu_reg = float(mu_reg)
        self.n, self.m = base.n, base.m
        self._a = anchor.stacked()
        self._sign = np.concatenate([np.ones(self.n), -np.ones(self.m)])

    def value(self, z):
        d = _vec(z) - self._a
        return self.base.value(z) + 0.5 * self.mu_reg * float(self._sign @ (d * d))

    def grad(self, z):
        return np.asarray(self.base.grad(z)) + self.mu_reg * self._sign * (_vec(z) - self._a)

    def jacobian_f(self, z):
        return np.asarray(self.base.jacobian_f(z)) + self.mu_reg * np.eye(self.n + self.m)

    def apply_third(self, z, d):
        return self.base.apply_third(z, d)


def gradnorm_constants(params: SolverParams, eps_grad: float, r0: float) -> dict:
    """Derived constants of the gradient-norm method (tensor order 2)."""
    mu_reg = eps_grad / (4.0 * r0)
    if params.l2 > 0:
        l_tensor = params.l2
    else:
        l_tensor = params.lp if params.p == 2 else LP_OPERATIONAL
    p = 2
    M = math.sqrt(2.0) * p * l_tensor
    eps_prime = (M ** ((3 * p + 1) / (2 * p)) * eps_grad ** ((p + 1) / p)
                 / (2 ** ((2 * p * p + 3 * p + 3) / (2 * p)) * p * math.factorial(p + 1)))
    reg = params.replace(mu=params.mu + mu_reg, l1=params.l1 + mu_reg, r0=r0, gamma_bar=None)
    return {
        "mu_reg": mu_reg,
        "M": M,
        "l_tensor": l_tensor,
        "eps_prime": eps_prime,
        "eps_merit": mu_reg**2 * eps_prime / reg.l1,
        "params": reg,
        "restarts": restarts_for_region(reg.l2, r0, reg.xi, reg.mu),
    }


def gradnorm_solve(oracle: SaddleOracle, z1: PointZ, eps_grad: float, r0: float,
                   params: SolverParams, trace: Optional[RunTrace] = None,
                   max_crn_iter: int = 100) -> PointZ:
    """Point with ``|grad g| <= eps_grad`` via the regularized problem.

    ``r0`` must bound the distance from ``z1`` to the saddle point of the
    original problem. The regularized phase uses the adjusted moduli
    ``mu + mu_reg`` and ``l1 + mu_reg``.
    """
    if not eps_grad > 0:
        raise ValueError("eps_grad must be positive")
    c = gradnorm_constants(params, eps_grad, r0)
    reg_raw = RegularizedOracle(oracle, z1, c["mu_reg"])
    reg = _counted(reg_raw, trace)
    reg_params = c["params"]
    z_handoff = restarted_homp(reg, z1, reg_params, trace, n_restarts=c["restarts"],
                               reference=None)
    if trace is not None:
        trace.checkpoints.append(("handoff", c["restarts"], z_handoff))
    z_k = crn_run(reg, z_handoff, c["eps_merit"], reg_params, trace, max_iter=max_crn_iter)
    z_out = tensor_step(reg, z_k, 2, c["M"], tol=reg_params.inner_tol)
    if trace is not None:
        f_out = reg.operator(z_out.stacked())
        trace.log(Phase.TENSOR_STEP, 0, 1, c["M"] * math.sqrt(2.0) / 2.0,
                  float(np.linalg.norm(f_out)), z_out)
        floor = gradient_roundoff(reg_raw, z_out, reg_params.l1)
        lhs, rhs = gradient_gap_bound(reg_raw, z_k, z_out, c["M"], grad_floor=floor)
        trace.extras.update({"tensor_center": z_k, "bound_lhs": lhs, "bound_rhs": rhs,
                             "bound_grad_floor": floor, "handoff": z_handoff,
                             "mu_reg": c["mu_reg"], "eps_prime": c["eps_prime"],
                             "eps_merit": c["eps_merit"], "M": c["M"]})
    return z_out


def run(oracle: SaddleOracle, algorithm, params: SolverParams, z1: PointZ,
        reference: Optional[PointZ] = None, max_records: Optional[int] = None,
        homp_iterations: int = 50, max_crn_iter: int = 100) -> RunTrace:
    """Run one algorithm and capture its outcome in a :class:`RunTrace` instead of raising."""
    algorithm = Algorithm(algorithm)
    trace = RunTrace(reference=reference, max_records=max_records)
    oracle = _counted(oracle, trace)
    z = z1
    try:
        if algorithm is Algorithm.HOMP:
            res = homp_run(oracle, z1, params.p, homp_iterations, params, trace,
                           restart_index=1, reference=reference)
            trace.extras["weighted_residual"] = res.weighted_residual
            z = res.point
        elif algorithm is Algorithm.RESTARTED:
            z = restarted_homp(oracle, z1, params, trace)
        elif algorithm is Algorithm.HYBRID:
            z = hybrid_solve(oracle, z1, params, trace, max_crn_iter=max_crn_iter)
        elif algorithm is Algorithm.GRADNORM:
            z = gradnorm_solve(oracle, z1, params.eps_grad, params.r0, params, trace,
                               max_crn_iter=max_crn_iter)
        else:
            eps_merit = params.mu**2 * params.eps_gap / params.l1
            z = crn_run(oracle, z1, eps_merit, params, trace, max_iter=max_crn_iter)
        trace.status = Status.CONVERGED
    except BudgetExceeded:
        trace.status = Status.BUDGET_EXCEEDED
    except InnerSolveFailed:
        trace.status = Status.INNER_SOLVE_FAILED
    if trace.status is not Status.CONVERGED:
        z = _last_point(trace, z)
    trace.final_point = z
    return trace


def _last_point(trace: RunTrace, fallback: PointZ) -> PointZ:
    if trace.restarts:
        return trace.restarts[-1].end
    return fallback
