"""Problem-evaluation interface: g, the operator F built from it, Taylor models of F,
the merit function and derivative verification."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from tensorvi.core import CallKind, PointZ


def _vec(z) -> np.ndarray:
    if isinstance(z, PointZ):
        return z.stacked()
    return np.asarray(z, dtype=np.float64)


class SaddleOracle:
    """Evaluation interface of a saddle function ``g(x, y)``.

    Subclasses implement ``value``, ``grad`` and ``jacobian_f`` on stacked
    vectors ``z = [x, y]``. ``grad`` returns ``[grad_x g, grad_y g]``;
    ``jacobian_f`` returns the Jacobian of ``F(z) = [grad_x g, -grad_y g]``.
    """

    n: int
    m: int

    def value(self, z) -> float:
        raise NotImplementedError

    def grad(self, z) -> np.ndarray:
        raise NotImplementedError

    def jacobian_f(self, z) -> np.ndarray:
        raise NotImplementedError

    def apply_third(self, z, d) -> np.ndarray:
        """Second derivative of F applied twice to ``d``; needed only by p >= 3 inner solvers."""
        raise NotImplementedError("third-order information is not available for this oracle")

    def operator(self, z) -> np.ndarray:
        g = np.array(self.grad(z), dtype=np.float64)
        g[self.n:] *= -1.0
        return g

    @property
    def dim(self) -> int:
        return self.n + self.m


class CountingOracle(SaddleOracle):
    """Wraps an oracle and counts calls by kind into a run-owned dict."""

    def __init__(self, base: SaddleOracle, counts: Optional[dict] = None):
        self.base = base
        self.n, self.m = base.n, base.m
        self.counts = counts if counts is not None else {k.value: 0 for k in CallKind}

    def _tick(self, kind: CallKind):
        self.counts[kind.value] = self.counts.get(kind.value, 0) + 1

    def value(self, z):
        self._tick(CallKind.G_VALUE)
        return self.base.value(z)

    def grad(self, z):
        self._tick(CallKind.F)
        return self.base.grad(z)

    def jacobian_f(self, z):
        self._tick(CallKind.JF)
        return self.base.jacobian_f(z)

    def apply_third(self, z, d):
        return self.base.apply_third(z, d)


def operator_f(oracle: SaddleOracle, z: PointZ) -> PointZ:
    """``F(z) = (grad_x g, -grad_y g)``."""
    return PointZ.from_stacked(oracle.operator(_vec(z)), oracle.n)


def merit(oracle: SaddleOracle, z) -> float:
    f = oracle.operator(_vec(z))
    return 0.5 * float(f @ f)


@dataclass(frozen=True, eq=False)
class TaylorModelF:
    """Taylor expansion of F around ``center``, truncated at ``degree`` in the displacement.

    A degree ``p - 1`` model corresponds to smoothness order ``p`` of the problem.
    """

    center: PointZ
    degree: int
    f_center: np.ndarray
    jf_center: Optional[np.ndarray] = None

    @classmethod
    def build(cls, oracle: SaddleOracle, center: PointZ, degree: int) -> "TaylorModelF":
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        if degree >= 2:
            raise NotImplementedError(
                "built-in Taylor models stop at degree 1; supply an extension for p >= 3")
        zc = center.stacked()
        fc = oracle.operator(zc)
        jc = oracle.jacobian_f(zc) if degree >= 1 else None
        return cls(center, degree, fc, jc)

    def __call__(self, z_eval) -> np.ndarray:
        d = _vec(z_eval) - self.center.stacked()
        if self.degree == 0:
            return self.f_center.copy()
        if self.degree == 1:
            return self.f_center + self.jf_center @ d
        raise NotImplementedError("degree >= 2 models require a user-supplied extension")


def taylor_f_eval(model: TaylorModelF, z_eval: PointZ) -> PointZ:
    return PointZ.from_stacked(model(z_eval), model.center.n)


def duality_gap_exact(problem, z: PointZ) -> float:
    """Exact duality gap ``max_y' g(x, y') - min_x' g(x', y)``.

    Only available for problems exposing closed-form best responses
    (a ``duality_gap`` method); others raise ``ValueError``.
    """
    target = getattr(problem, "oracle", problem)
    fn = getattr(target, "duality_gap", None)
    if fn is None:
        raise ValueError(f"{type(target).__name__} has no closed-form best responses")
    return float(fn(_vec(z)))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


def value_difference(oracle: SaddleOracle, z_from, z_to) -> float:
    """``g(z_to) - g(z_from)`` by Gauss-Legendre quadrature of the gradient on the segment.

    Keeps relative accuracy when both values are large and nearly equal, which a
    plain difference of ``value`` calls does not.
    """
    a = _vec(z_from)
    delta = _vec(z_to) - a
    ts = 0.5 * (_GL_NODES + 1.0)
    total = 0.0
    for t, w in zip(ts, _GL_WEIGHTS):
        total += 0.5 * w * float(oracle.grad(a + t * delta) @ delta)
    return total


@dataclass
class FDReport:
    grad_error: float
    jacobian_error: Optional[float]

    def passed(self, grad_tol: float = 1e-5, jac_tol: float = 1e-4) -> bool:
        ok = self.grad_error <= grad_tol
        if self.jacobian_error is not None:
            ok = ok and self.jacobian_error <= jac_tol
        return ok


def _rel_err(approx: np.ndarray, exact: np.ndarray) -> float:
    return float(np.max(np.abs(approx - exact) / np.maximum(1.0, np.abs(exact))))


def fd_check(oracle: SaddleOracle, z, h: float = 1e-6, jacobian: bool = True) -> FDReport:
    """Central-difference check of ``grad`` against ``value`` and of ``jacobian_f`` against ``grad``.

    Errors are entrywise ``|approx - exact| / max(1, |exact|)``, maximised.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    z0 = _vec(z)
    dim = z0.size
    fd_grad = np.empty(dim)
    fd_jac = np.empty((dim, dim)) if jacobian else None
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = h
        fd_grad[i] = (oracle.value(z0 + e) - oracle.value(z0 - e)) / (2 * h)
        if jacobian:
            fd_jac[:, i] = (oracle.operator(z0 + e) - oracle.operator(z0 - e)) / (2 * h)
    grad_err = _rel_err(fd_grad, np.asarray(oracle.grad(z0)))
    jac_err = _rel_err(fd_jac, np.asarray(oracle.jacobian_f(z0))) if jacobian else None
    return FDReport(grad_err, jac_err)


def sample_pairs(rng: np.random.Generator, center: np.ndarray, scale: float, count: int):
    dim = center.size
    for _ in range(count):
        z1 = center + scale * rng.standard_normal(dim)
        # mix far and near pairs so local curvature is probed as well
        spread = scale * 10.0 ** rng.uniform(-4, 0)
        z2 = z1 + spread * rng.standard_normal(dim)
        yield z1, z2


def monotonicity_slack(oracle: SaddleOracle, mu: float, rng: np.random.Generator,
                       center: np.ndarray, scale: float = 3.0, count: int = 1000) -> float:
    """Smallest value of <F(z1)-F(z2), z1-z2> - mu*|z1-z2|^2 over sampled pairs (>= 0 passes)."""
    worst = math.inf
    for z1, z2 in sample_pairs(rng, center, scale, count):
        d = z1 - z2
        slack = float((oracle.operator(z1) - oracle.operator(z2)) @ d) - mu * float(d @ d)
        worst = min(worst, slack)
    return worst


def lipschitz_ratio(fn, rng: np.random.Generator, center: np.ndarray,
                    scale: float = 3.0, count: int = 500) -> float:
    """Largest ``|fn(z1) - fn(z2)| / |z1 - z2|`` over sampled pairs (spectral norm for matrices)."""
    worst = 0.0
    for z1, z2 in sample_pairs(rng, center, scale, count):
        diff = np.asarray(fn(z1)) - np.asarray(fn(z2))
        num = np.linalg.norm(diff, 2) if diff.ndim == 2 else np.linalg.norm(diff)
        worst = max(worst, float(num) / float(np.linalg.norm(z1 - z2)))
    return worst
