"""Concrete saddle problems with declared constants and reference solutions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve
from scipy.special import logsumexp, softmax

from tensorvi.core import LP_OPERATIONAL, InnerSolveFailed, PointZ, SolverParams, norm_z
from tensorvi.oracle import (
    SaddleOracle,
    _vec,
    fd_check,
    lipschitz_ratio,
    monotonicity_slack,
)

FAMILIES = ("quadratic", "smooth")
R0_FLOOR = 1e-12


class QuadraticSaddle(SaddleOracle):
    """``g(x, y) = x'Ax/2 + x'By - y'Cy/2 + a'x - c'y``."""

    def __init__(self, A, B, C, a, c):
        self.A = np.array(A, dtype=np.float64, ndmin=2)
        self.B = np.array(B, dtype=np.float64, ndmin=2)
        self.C = np.array(C, dtype=np.float64, ndmin=2)
        self.a = np.array(a, dtype=np.float64).reshape(-1)
        self.c = np.array(c, dtype=np.float64).reshape(-1)
        self.n, self.m = self.A.shape[0], self.C.shape[0]
        if self.A.shape != (self.n, self.n) or self.C.shape != (self.m, self.m):
            raise ValueError("A and C must be square")
        if self.B.shape != (self.n, self.m):
            raise ValueError(f"B must be {self.n}x{self.m}, got {self.B.shape}")
        if self.a.size != self.n or self.c.size != self.m:
            raise ValueError("linear terms have the wrong size")
        if not (np.allclose(self.A, self.A.T) and np.allclose(self.C, self.C.T)):
            raise ValueError("A and C must be symmetric")
        self._jac = np.block([[self.A, self.B], [-self.B.T, self.C]])
        self._chol = None

    def strong_convexity(self) -> float:
        return float(min(np.linalg.eigvalsh(self.A)[0], np.linalg.eigvalsh(self.C)[0]))

    def lipschitz_l1(self) -> float:
        return float(np.linalg.norm(self._jac, 2))

    def value(self, z):
        z = _vec(z)
        x, y = z[:self.n], z[self.n:]
        return float(0.5 * x @ self.A @ x + x @ self.B @ y - 0.5 * y @ self.C @ y
                     + self.a @ x - self.c @ y)

    def grad(self, z):
        z = _vec(z)
        x, y = z[:self.n], z[self.n:]
        return np.concatenate([self.A @ x + self.B @ y + self.a,
                               self.B.T @ x - self.C @ y - self.c])

    def jacobian_f(self, z):
        return self._jac.copy()

    def apply_third(self, z, d):
        return np.zeros(self.n + self.m)

    def duality_gap(self, z) -> float:
        # g is quadratic in each block, so each best-response gap is a quadratic form
        if self._chol is None:
            self._chol = (cho_factor(self.A), cho_factor(self.C))
        gr = self.grad(z)
        gx, gy = gr[:self.n], gr[self.n:]
        return float(0.5 * gx @ cho_solve(self._chol[0], gx)
                     + 0.5 * gy @ cho_solve(self._chol[1], gy))


class SmoothCoupledSaddle(SaddleOracle):
    """``g = mu/2 |x|^2 + tau lse(x) + x'By - mu/2 |y|^2 - tau lse(y)``."""

    def __init__(self, tau: float, B, mu: float):
        if not tau >= 0 or not mu > 0:
            raise ValueError("tau must be nonnegative and mu positive")
        self.tau = float(tau)
        self.mu = float(mu)
        self.B = np.array(B, dtype=np.float64, ndmin=2)
        self.n, self.m = self.B.shape

    def lipschitz_l1(self) -> float:
        return self.mu + self.tau + float(np.linalg.norm(self.B, 2))

    def lipschitz_l2(self) -> float:
        # |D^3 lse[h,h,h]| = |E_s (h - E_s h)^3| <= max|h - E_s h| * Var_s(h) <= 2 for |h| <= 1
        return 2.0 * self.tau

    def value(self, z):
        z = _vec(z)
        x, y = z[:self.n], z[self.n:]
        return float(0.5 * self.mu * (x @ x - y @ y) + self.tau * (logsumexp(x) - logsumexp(y))
                     + x @ self.B @ y)

    def grad(self, z):
        z = _vec(z)
        x, y = z[:self.n], z[self.n:]
        return np.concatenate([self.mu * x + self.tau * softmax(x) + self.B @ y,
                               self.B.T @ x - self.mu * y - self.tau * softmax(y)])

    @staticmethod
    def _lse_hessian(v):
        s = softmax(v)
        return np.diag(s) - np.outer(s, s)

    def jacobian_f(self, z):
        z = _vec(z)
        x, y = z[:self.n], z[self.n:]
        top = np.hstack([self.mu * np.eye(self.n) + self.tau * self._lse_hessian(x), self.B])
        bot = np.hstack([-self.B.T, self.mu * np.eye(self.m) + self.tau * self._lse_hessian(y)])
        return np.vstack([top, bot])

    def apply_third(self, z, d):
        z, d = _vec(z), _vec(d)
        out = []
        for v, h in ((z[:self.n], d[:self.n]), (z[self.n:], d[self.n:])):
            s = softmax(v)
            dev = h - s @ h
            out.append(self.tau * s * (dev**2 - s @ dev**2))
        return np.concatenate(out)


class FaultyOracle(SaddleOracle):
    """Adds a constant offset to one gradient entry; used to exercise verification."""

    def __init__(self, base: SaddleOracle, index: int, offset: float):
        self.base = base
        self.n, self.m = base.n, base.m
        self.index = int(index)
        self.offset = float(offset)

    def value(self, z):
        return self.base.value(z)

    def grad(self, z):
        g = np.array(self.base.grad(z), dtype=np.float64)
        g[self.index] += self.offset
        return g

    def jacobian_f(self, z):
        return self.base.jacobian_f(z)


@dataclass
class ProblemInstance:
    oracle: SaddleOracle
    params: SolverParams
    reference_solution: Optional[PointZ]
    label: str
    family: str = "custom"
    seed: Optional[int] = None
    z1: Optional[PointZ] = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.oracle.n

    @property
    def m(self) -> int:
        return self.oracle.m

    def params_for(self, p: int, **overrides) -> SolverParams:
        """Parameters for running order ``p``: picks the matching Lipschitz constant as ``lp``."""
        if p == 1:
            lp = self.params.l1
        elif p == 2:
            lp = self.params.l2 if self.params.l2 > 0 else self.meta.get("lp_operational", LP_OPERATIONAL)
        else:
            lp = self.params.lp
        return self.params.replace(p=p, lp=lp, **overrides)


def quadratic_exact_solution(q: QuadraticSaddle) -> PointZ:
    jac = q.jacobian_f(None)
    rhs = -np.concatenate([q.a, q.c])
    z = lu_solve(lu_factor(jac), rhs)
    if not np.all(np.isfinite(z)):
        raise RuntimeError("quadratic saddle system is singular")
    res = np.linalg.norm(q.operator(z))
    if res > 1e-10 * (1.0 + np.linalg.norm(rhs)):
        raise RuntimeError(f"quadratic solve residual {res:.3e} too large")
    return PointZ.from_stacked(z, q.n)


def newton_reference(oracle: SaddleOracle, z0=None, tol: float = 1e-12, max_iter: int = 200) -> PointZ:
    """Damped Newton on ``F(z) = 0`` with backtracking on ``|F|``."""
    z = np.zeros(oracle.dim) if z0 is None else _vec(z0).copy()
    f = oracle.operator(z)
    fn = np.linalg.norm(f)
    for _ in range(max_iter):
        if fn <= tol:
            return PointZ.from_stacked(z, oracle.n)
        d = np.linalg.solve(oracle.jacobian_f(z), -f)
        t = 1.0
        while True:
            z_new = z + t * d
            f_new = oracle.operator(z_new)
            fn_new = np.linalg.norm(f_new)
            if fn_new <= (1 - 1e-4 * t) * fn or t < 1e-12:
                break
            t *= 0.5
        if fn_new >= fn and t < 1e-12:
            # stalled at rounding level
            break
        z, f, fn = z_new, f_new, fn_new
    if fn <= tol:
        return PointZ.from_stacked(z, oracle.n)
    raise InnerSolveFailed(f"reference Newton stalled at |F| = {fn:.3e}")


def smooth_reference_solution(s: SmoothCoupledSaddle, z0=None, tol: float = 1e-12) -> PointZ:
    return newton_reference(s, z0=z0, tol=tol, max_iter=200)


def _spectrum_matrix(rng, k: int, lo: float, hi: float) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    ev = rng.uniform(lo, hi, size=k)
    ev[0] = lo
    mat = (q * ev) @ q.T
    return 0.5 * (mat + mat.T)


def _coupling_matrix(rng, n: int, m: int, scale: float) -> np.ndarray:
    if scale == 0:
        return np.zeros((n, m))
    u, _ = np.linalg.qr(rng.standard_normal((n, n)))
    v, _ = np.linalg.qr(rng.standard_normal((m, m)))
    k = min(n, m)
    sig = rng.uniform(0.0, scale, size=k)
    sig[0] = scale
    return (u[:, :k] * sig) @ v[:, :k].T


def estimate_r0(instance: ProblemInstance, z1: PointZ, user_bound: Optional[float] = None) -> float:
    """Upper bound ``R`` on the initial distance to the solution."""
    if user_bound is not None:
        if not user_bound > 0:
            raise ValueError("user bound must be positive")
        return float(user_bound)
    if instance.reference_solution is None:
        raise ValueError("no reference solution and no user bound for R")
    return max(1.1 * norm_z(z1 - instance.reference_solution), R0_FLOOR)


def _build_instance(family, problem, seed, mu, l1, l2, z1, p, lp_operational, meta,
                    validate=True) -> ProblemInstance:
    n, m = problem.n, problem.m
    if family == "quadratic":
        ref = quadratic_exact_solution(problem)
    else:
        ref = smooth_reference_solution(problem)
    if p == 1:
        lp = l1
    else:
        lp = l2 if l2 > 0 else lp_operational
    params = SolverParams(mu=mu, l1=l1, l2=l2, lp=lp, p=p)
    meta = dict(meta, lp_operational=lp_operational)
    inst = ProblemInstance(
        oracle=problem, params=params, reference_solution=ref,
        label=f"{family}-s{seed}-n{n}-m{m}-mu{mu:g}", family=family, seed=seed, z1=z1, meta=meta)
    inst.params = params.replace(r0=estimate_r0(inst, z1))
    if validate and family == "quadratic" and problem.strong_convexity() < mu * (1 - 1e-10):
        raise ValueError("declared mu exceeds the smallest eigenvalue of A or C")
    return inst


def generate_instance(family: str, seed: int, n: int, m: int, mu: float,
                      coupling_scale: float = 1.0, *, tau: float = 1.0, spread: float = 9.0,
                      p: int = 2, lp_operational: float = LP_OPERATIONAL,
                      start_scale: float = 1.0) -> ProblemInstance:
    """Deterministic random instance of ``family`` ("quadratic" or "smooth").

    Quadratic blocks have spectrum in ``[mu, mu + spread]`` with ``mu`` attained;
    the coupling has spectral norm exactly ``coupling_scale``.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    if not mu > 0:
        raise ValueError("mu must be positive")
    rng = np.random.default_rng(seed)
    B = _coupling_matrix(rng, n, m, coupling_scale)
    meta = {"coupling_scale": coupling_scale}
    if family == "quadratic":
        A = _spectrum_matrix(rng, n, mu, mu + spread)
        C = _spectrum_matrix(rng, m, mu, mu + spread)
        a = rng.standard_normal(n)
        c = rng.standard_normal(m)
        problem = QuadraticSaddle(A, B, C, a, c)
        l1, l2 = problem.lipschitz_l1(), 0.0
        meta["spread"] = spread
    else:
        problem = SmoothCoupledSaddle(tau, B, mu)
        l1, l2 = problem.lipschitz_l1(), problem.lipschitz_l2()
        meta["tau"] = tau
    z1 = PointZ.from_stacked(start_scale * rng.standard_normal(n + m), n)
    inst = _build_instance(family, problem, seed, mu, l1, l2, z1, p, lp_operational, meta)
    if family == "smooth" and tau > 0:
        sampled = lipschitz_ratio(problem.jacobian_f, np.random.default_rng(seed + 1),
                                  inst.reference_solution.stacked(), scale=2.0, count=200)
        if sampled > l2:
            raise RuntimeError(f"sampled Hessian Lipschitz ratio {sampled} exceeds declared {l2}")
        inst.meta["l2_sampled"] = sampled
    return inst


def instance_to_json(inst: ProblemInstance) -> dict:
    prob = inst.oracle
    fault = None
    if isinstance(prob, FaultyOracle):
        fault = {"kind": "grad_offset", "index": prob.index, "value": prob.offset}
        prob = prob.base
    doc = {
        "family": inst.family,
        "seed": inst.seed,
        "n": prob.n,
        "m": prob.m,
        "mu": inst.params.mu,
        "declared": {"l1": inst.params.l1, "l2": inst.params.l2,
                     "lp_operational": inst.meta.get("lp_operational", LP_OPERATIONAL)},
        "z1": inst.z1.to_dict() if inst.z1 is not None else None,
    }
    if isinstance(prob, QuadraticSaddle):
        doc["matrices"] = {"A": prob.A.tolist(), "B": prob.B.tolist(), "C": prob.C.tolist(),
                           "a": prob.a.tolist(), "c": prob.c.tolist()}
    elif isinstance(prob, SmoothCoupledSaddle):
        doc["matrices"] = {"tau": prob.tau, "B": prob.B.tolist()}
    else:
        raise TypeError(f"cannot serialize oracle of type {type(prob).__name__}")
    if fault is not None:
        doc["fault"] = fault
    return doc


_JSON_KEYS = {"family", "seed", "n", "m", "mu", "declared", "z1", "matrices", "fault"}


def instance_from_json(doc: dict, p: int = 2, validate: bool = True) -> ProblemInstance:
    """Rebuild an instance from :func:`instance_to_json` output.

    ``validate=False`` skips construction-time checks so that a verifier can
    report them by name instead.
    """
    unknown = set(doc) - _JSON_KEYS
    if unknown:
        raise ValueError(f"unknown instance fields: {sorted(unknown)}")
    family = doc["family"]
    mats = doc["matrices"]
    mu = float(doc["mu"])
    declared = doc.get("declared", {})
    if family == "quadratic":
        problem = QuadraticSaddle(mats["A"], mats["B"], mats["C"], mats["a"], mats["c"])
        l1 = float(declared.get("l1", problem.lipschitz_l1()))
        l2 = float(declared.get("l2", 0.0))
    elif family == "smooth":
        problem = SmoothCoupledSaddle(mats["tau"], mats["B"], mu)
        l1 = float(declared.get("l1", problem.lipschitz_l1()))
        l2 = float(declared.get("l2", problem.lipschitz_l2()))
    else:
        raise ValueError(f"unknown family {family!r}")
    if (problem.n, problem.m) != (doc["n"], doc["m"]):
        raise ValueError("matrix payload does not match declared n, m")
    z1 = PointZ.from_dict(doc["z1"]) if doc.get("z1") else PointZ.zeros(problem.n, problem.m)
    inst = _build_instance(family, problem, doc.get("seed"), mu, l1, l2, z1, p,
                           float(declared.get("lp_operational", LP_OPERATIONAL)), {},
                           validate=validate)
    fault = doc.get("fault")
    if fault is not None:
        if fault.get("kind") != "grad_offset":
            raise ValueError(f"unknown fault kind {fault.get('kind')!r}")
        inst.oracle = FaultyOracle(problem, fault["index"], fault["value"])
    return inst


def verify_instance(inst: ProblemInstance, seed: int = 0, fd_points: int = 20,
                    pairs: int = 1000, h: float = 1e-6) -> dict:
    """Run the oracle integrity checks; returns ``{check: (passed, measured value)}``."""
    rng = np.random.default_rng(seed)
    oracle = inst.oracle
    center = (inst.reference_solution.stacked() if inst.reference_solution is not None
              else np.zeros(oracle.dim))
    results = {}
    base = getattr(oracle, "base", oracle)
    if isinstance(base, QuadraticSaddle):
        lam = base.strong_convexity()
        results["eigenvalues"] = (lam >= inst.params.mu * (1 - 1e-10), lam)
    grad_err = jac_err = 0.0
    for _ in range(fd_points):
        z = center + rng.standard_normal(oracle.dim)
        rep = fd_check(oracle, z, h=h)
        grad_err = max(grad_err, rep.grad_error)
        jac_err = max(jac_err, rep.jacobian_error)
    results["fd_grad"] = (grad_err <= 1e-5, grad_err)
    results["fd_jacobian"] = (jac_err <= 1e-4, jac_err)
    slack = monotonicity_slack(oracle, inst.params.mu, rng, center, count=pairs)
    results["strong_monotonicity"] = (slack >= -1e-10, slack)
    l1_ratio = lipschitz_ratio(oracle.operator, rng, center, count=pairs // 2)
    results["lipschitz_l1"] = (l1_ratio <= inst.params.l1 * (1 + 1e-10), l1_ratio)
    if inst.params.l2 > 0:
        l2_ratio = lipschitz_ratio(oracle.jacobian_f, rng, center, scale=2.0, count=pairs // 5)
        results["lipschitz_l2"] = (l2_ratio <= inst.params.l2 * (1 + 1e-10), l2_ratio)
    return results


def toy_quadratic() -> QuadraticSaddle:
    """``g = x^2/2 + xy - y^2/2`` with ``n = m = 1``."""
    return QuadraticSaddle([[1.0]], [[1.0]], [[1.0]], [0.0], [0.0])
