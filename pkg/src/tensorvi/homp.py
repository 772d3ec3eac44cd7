"""High-order mirror-prox inner loop with the joint step-size/displacement condition."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from tensorvi.core import InnerSolveFailed, Phase, PointZ, RunTrace, SolverParams

logger = logging.getLogger(__name__)

MAX_PROBES = 60
BRACKET_SLACK = 1e-9
STATIONARITY_FLOOR = 1e-13


def bracket_bounds(p: int, lp: float, step_norm: float) -> tuple[float, float]:
    """Admissible step sizes ``[p!/(32 lp |d|^(p-1)), p!/(16 lp |d|^(p-1))]``."""
    denom = lp * step_norm ** (p - 1)
    if denom == 0:
        return math.inf, math.inf
    fac = math.factorial(p)
    return fac / (32 * denom), fac / (16 * denom)


def _displacement(f: np.ndarray, jac: Optional[np.ndarray], gamma: float, p: int) -> np.ndarray:
    if p == 1:
        return -gamma * f
    if p == 2:
        system = np.eye(f.size) + gamma * jac
        try:
            d = lu_solve(lu_factor(system, check_finite=True), -gamma * f)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise InnerSolveFailed(f"implicit step factorization failed: {exc}") from exc
        if not np.all(np.isfinite(d)):
            raise InnerSolveFailed("implicit step produced non-finite values")
        return d
    raise NotImplementedError("built-in implicit steps cover p in {1, 2}; p >= 3 needs a custom solver")


def _check_optimality(f, jac, gamma, p, d, tol):
    model = f if p == 1 else f + jac @ d
    res = np.linalg.norm(gamma * model + d)
    jnorm = 0.0 if jac is None else np.linalg.norm(jac, 2)
    scale = (1.0 + gamma * jnorm) * (1.0 + np.linalg.norm(f)) * max(1.0, gamma)
    if res > max(tol, 1e-15) * scale:
        raise InnerSolveFailed(f"implicit step residual {res:.3e} above tolerance")


def implicit_step(oracle, z_t: PointZ, gamma: float, p: int, inner_tol: float = 1e-12) -> PointZ:
    """Solve ``gamma * Phi(z_hat) + (z_hat - z_t) = 0`` for the degree ``p - 1`` model of F."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    z = z_t.stacked()
    f = oracle.operator(z)
    jac = oracle.jacobian_f(z) if p >= 2 else None
    d = _displacement(f, jac, gamma, p)
    _check_optimality(f, jac, gamma, p, d, inner_tol)
    return PointZ.from_stacked(z + d, oracle.n)


@dataclass
class GammaSearch:
    gamma: float
    z_hat: np.ndarray
    step_norm: float
    probes: int
    degenerate: Optional[str] = None  # "floor" or "cap"
    monotone: bool = True


def _find_gamma_arrays(z, f, jac, params: SolverParams, gamma_init: Optional[float]) -> GammaSearch:
    p, lp = params.p, params.lp
    if not lp > 0:
        raise ValueError("lp must be positive for the mirror-prox step")
    if p == 1:
        # upper end of the bracket: the averaged residual is then at most 16 lp D / T
        gamma = 1.0 / (16.0 * lp)
        d = _displacement(f, None, gamma, 1)
        return GammaSearch(gamma, z + d, float(np.linalg.norm(d)), 0)
    if p != 2:
        raise NotImplementedError("built-in gamma search covers p in {1, 2}")

    fac = math.factorial(p)
    lo, hi = fac / 32.0 * (1 - BRACKET_SLACK), fac / 16.0 * (1 + BRACKET_SLACK)
    floor = STATIONARITY_FLOOR * (1.0 + np.linalg.norm(z))
    gmax = params.gamma_max
    probes = []

    def probe(g):
        if len(probes) >= MAX_PROBES:
            raise InnerSolveFailed(f"gamma search exceeded {MAX_PROBES} probes")
        d = _displacement(f, jac, g, p)
        dn = float(np.linalg.norm(d))
        probes.append((g, dn, d))
        return g * lp * dn ** (p - 1), d, dn

    def done(g, d, dn, degenerate=None):
        srt = sorted(probes, key=lambda t: t[0])
        norms = [t[1] for t in srt]
        monotone = all(b >= a * (1 - 1e-9) - 1e-300 for a, b in zip(norms, norms[1:]))
        if not monotone:
            logger.warning("step length not monotone in gamma across %d probes", len(probes))
        _check_optimality(f, jac, g, p, d, params.inner_tol)
        return GammaSearch(g, z + d, dn, len(probes), degenerate, monotone)

    g = min(gamma_init if gamma_init and gamma_init > 0 else 1.0 / (lp * (1.0 + np.linalg.norm(f))), gmax)
    s, d, dn = probe(g)
    if lo <= s <= hi:
        return done(g, d, dn)
    if s < lo:
        if g < gmax:
            s_max, d_max, dn_max = probe(gmax)
        else:
            s_max, d_max, dn_max = s, d, dn
        if s_max < lo:
            return done(gmax, d_max, dn_max, "floor" if dn_max <= floor else "cap")
        if s_max <= hi:
            return done(gmax, d_max, dn_max)
        g_lo, g_hi = g, gmax
        # expand from the warm start before bisecting the wide [g, gmax] window
        while True:
            g2 = min(2.0 * g_lo, gmax)
            if g2 >= g_hi:
                break
            s2, d2, dn2 = probe(g2)
            if lo <= s2 <= hi:
                return done(g2, d2, dn2)
            if s2 > hi:
                g_hi = g2
                break
            g_lo = g2
    else:
        g_lo, g_hi = g, g
        while True:
            g_lo = 0.5 * g_lo
            s2, d2, dn2 = probe(g_lo)
            if lo <= s2 <= hi:
                return done(g_lo, d2, dn2)
            if s2 < lo:
                break
            g_hi = g_lo
    while True:
        gm = math.sqrt(g_lo * g_hi)
        sm, dm, dnm = probe(gm)
        if lo <= sm <= hi:
            return done(gm, dm, dnm)
        if sm < lo:
            g_lo = gm
        else:
            g_hi = gm


def find_gamma(oracle, z_t: PointZ, params: SolverParams,
               gamma_init: Optional[float] = None) -> tuple[float, PointZ]:
    """Step size and implicit point satisfying the joint bracket condition.

    Returns ``(gamma, z_hat)``. Near a solution, where the bracket would demand
    an unbounded step, ``gamma = params.gamma_max`` is returned instead.
    """
    z = z_t.stacked()
    f = oracle.operator(z)
    jac = oracle.jacobian_f(z) if params.p >= 2 else None
    res = _find_gamma_arrays(z, f, jac, params, gamma_init)
    return res.gamma, PointZ.from_stacked(res.z_hat, oracle.n)


@dataclass
class HompResult:
    """Output of one mirror-prox run.

    ``weighted_residual`` is ``(1/Gamma_T) sum_t gamma_t <F(z_hat_t), z_hat_t - ref>``,
    accumulated online when a reference point is given.
    """

    point: PointZ
    gamma_total: float
    iterations: int
    gamma_last: float
    weighted_residual: Optional[float] = None
    degenerate_steps: int = 0
    monotone_violations: int = 0
    gammas: list = field(default_factory=list)


def homp_run(oracle, z1: PointZ, p: int, T: int, params: SolverParams,
             trace: Optional[RunTrace] = None, restart_index: int = 0,
             reference: Optional[PointZ] = None,
             gamma_init: Optional[float] = None) -> HompResult:
    """``T`` mirror-prox iterations from ``z1``; returns the gamma-weighted average of the implicit points."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if p != params.p:
        params = params.replace(p=p)
    n = oracle.n
    z = z1.stacked()
    ref = None if reference is None else reference.stacked()
    acc = np.zeros_like(z)
    gamma_total = 0.0
    residual = 0.0
    degenerate = violations = 0
    gammas = []
    g_last = gamma_init
    for t in range(1, T + 1):
        f = oracle.operator(z)
        jac = oracle.jacobian_f(z) if p >= 2 else None
        srch = _find_gamma_arrays(z, f, jac, params, g_last)
        gamma, z_hat = srch.gamma, srch.z_hat
        if srch.degenerate:
            degenerate += 1
        else:
            blo, bhi = bracket_bounds(p, params.lp, srch.step_norm)
            assert blo * (1 - 1e-8) <= gamma <= bhi * (1 + 1e-8), "gamma bracket violated"
        if not srch.monotone:
            violations += 1
        f_hat = oracle.operator(z_hat)
        z = z - gamma * f_hat
        acc += gamma * z_hat
        gamma_total += gamma
        gammas.append(gamma)
        if ref is not None:
            residual += gamma * float(f_hat @ (z_hat - ref))
        # the degenerate cap must not pin later searches at gamma_max
        g_last = gamma if not srch.degenerate else None
        if trace is not None:
            trace.log(Phase.HOMP, restart_index, t, gamma, float(np.linalg.norm(f_hat)),
                      PointZ.from_stacked(z_hat, n))
    return HompResult(
        point=PointZ.from_stacked(acc / gamma_total, n),
        gamma_total=gamma_total,
        iterations=T,
        gamma_last=gammas[-1],
        weighted_residual=None if ref is None else residual / gamma_total,
        degenerate_steps=degenerate,
        monotone_violations=violations,
        gammas=gammas,
    )
