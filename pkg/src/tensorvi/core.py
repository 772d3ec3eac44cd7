"""Value types shared by every solver: paired points, solver constants and run traces."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np


LP_OPERATIONAL = 1e-3  # stand-in highest-order Lipschitz constant when the true one is 0


class InnerSolveFailed(RuntimeError):
    """An inner solve (gamma search, cubic subproblem, backtracking) did not converge."""


class BudgetExceeded(RuntimeError):
    """A run hit its iteration budget before meeting its stopping rule."""


class Phase(str, enum.Enum):
    HOMP = "HOMP"
    CRN = "CRN"
    TENSOR_STEP = "TENSOR_STEP"


class Status(str, enum.Enum):
    CONVERGED = "CONVERGED"
    BUDGET_EXCEEDED = "BUDGET_EXCEEDED"
    INNER_SOLVE_FAILED = "INNER_SOLVE_FAILED"


class CallKind(str, enum.Enum):
    F = "F"
    JF = "JF"
    G_VALUE = "G_VALUE"


def _as_vector(v) -> np.ndarray:
    arr = np.array(v, dtype=np.float64).reshape(-1)
    return arr


@dataclass(frozen=True, eq=False)
class PointZ:
    """A primal/dual pair ``z = (x, y)``.

    Arithmetic (``+``, ``-``, scalar ``*``) is supported between points of equal
    dimensions; anything else raises ``ValueError``.
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = _as_vector(self.x)
        y = _as_vector(self.y)
        if x.size == 0 or y.size == 0:
            raise ValueError("both blocks of a PointZ must be non-empty")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("PointZ entries must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def m(self) -> int:
        return self.y.size

    @property
    def dims(self) -> tuple[int, int]:
        return self.x.size, self.y.size

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    @classmethod
    def from_stacked(cls, v, n: int) -> "PointZ":
        v = _as_vector(v)
        if not 0 < n < v.size:
            raise ValueError(f"cannot split a vector of size {v.size} at n={n}")
        return cls(v[:n], v[n:])

    @classmethod
    def zeros(cls, n: int, m: int) -> "PointZ":
        return cls(np.zeros(n), np.zeros(m))

    def _check(self, other: "PointZ"):
        if not isinstance(other, PointZ):
            return NotImplemented
        if self.dims != other.dims:
            raise ValueError(f"dimension mismatch: {self.dims} vs {other.dims}")
        return None

    def __add__(self, other: "PointZ") -> "PointZ":
        if self._check(other) is NotImplemented:
            return NotImplemented
        return PointZ(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "PointZ") -> "PointZ":
        if self._check(other) is NotImplemented:
            return NotImplemented
        return PointZ(self.x - other.x, self.y - other.y)

    def __mul__(self, scalar: float) -> "PointZ":
        return PointZ(self.x * float(scalar), self.y * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "PointZ":
        return PointZ(-self.x, -self.y)

    def allclose(self, other: "PointZ", rtol=1e-12, atol=0.0) -> bool:
        self._check(other)
        return bool(
            np.allclose(self.x, other.x, rtol=rtol, atol=atol)
            and np.allclose(self.y, other.y, rtol=rtol, atol=atol)
        )

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PointZ":
        return cls(d["x"], d["y"])

    def __repr__(self) -> str:
        return f"PointZ(x={self.x!r}, y={self.y!r})"


def norm_z(z: PointZ) -> float:
    """Euclidean norm of the stacked pair."""
    return math.sqrt(float(z.x @ z.x) + float(z.y @ z.y))


def bregman(z1: PointZ, z2: PointZ) -> float:
    """Half squared Euclidean distance between two points."""
    d = z1 - z2
    return 0.5 * (float(d.x @ d.x) + float(d.y @ d.y))


def weighted_average(points: Sequence[PointZ], weights: Sequence[float]) -> PointZ:
    if len(points) == 0:
        raise ValueError("weighted_average needs at least one point")
    if len(points) != len(weights):
        raise ValueError("points and weights must have equal length")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be positive and finite")
    n, m = points[0].dims
    stack = np.empty((len(points), n + m))
    for i, p in enumerate(points):
        if p.dims != (n, m):
            raise ValueError(f"dimension mismatch: {p.dims} vs {(n, m)}")
        stack[i] = p.stacked()
    return PointZ.from_stacked(w @ stack / w.sum(), n)


@dataclass(frozen=True)
class SolverParams:
    """Constants consumed by the solvers.

    ``lp`` is the Lipschitz constant of the highest derivative used by the
    mirror-prox inner loop (``l1`` when ``p == 1``, ``l2`` when ``p == 2``).
    On problems with ``l2 == 0`` it is an operational positive stand-in.
    ``gamma_bar=None`` means "derive the CRN regularization from the constants".
    """

    mu: float
    l1: float
    l2: float = 0.0
    lp: float = 1e-3
    p: int = 2
    r0: float = 1.0
    eps_gap: float = 1e-8
    eps_grad: float = 1e-3
    rho: float = 0.5
    alpha: float = 0.5
    gamma_bar: Optional[float] = None
    gamma_max: float = 1e6
    inner_tol: float = 1e-12

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        for name in ("l1", "l2", "lp"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        if int(self.p) != self.p or self.p < 1:
            raise ValueError(f"p must be an integer >= 1, got {self.p}")
        object.__setattr__(self, "p", int(self.p))
        for name in ("r0", "eps_gap", "eps_grad", "gamma_max", "inner_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.gamma_bar is not None and not self.gamma_bar >= 0:
            raise ValueError("gamma_bar must be nonnegative")

    @property
    def xi(self) -> float:
        return max(1.0, self.l1 / self.mu)

    @property
    def crn_gamma_bar(self) -> float:
        if self.gamma_bar is not None:
            return self.gamma_bar
        if self.l1 == 0:
            return 0.0
        return self.l2 * self.mu**2 / (2.0 * self.l1**2)

    def replace(self, **changes) -> "SolverParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass
class IterationRecord:
    phase: Phase
    restart_index: int
    iter: int
    gamma: float
    f_norm: float
    dist_to_ref: Optional[float]
    oracle_calls_cumulative: dict

    def to_dict(self) -> dict:
        return {
            "phase": self.phase.value,
            "restart": self.restart_index,
            "iter": self.iter,
            "gamma": self.gamma,
            "f_norm": self.f_norm,
            "dist_to_ref": self.dist_to_ref,
            "calls": dict(self.oracle_calls_cumulative),
        }


@dataclass
class RestartInfo:
    """Bookkeeping for one restart of the mirror-prox loop."""

    index: int
    start: PointZ
    end: PointZ
    radius: float
    budget: int
    gamma_total: float
    weighted_residual: Optional[float] = None


@dataclass
class RunTrace:
    """Per-iteration records of one run plus its outcome.

    ``counts`` is the cumulative oracle-call accumulator owned by the run; the
    counting oracle wrapper increments it and every record snapshots it.
    ``max_records`` caps the number of iterations a run may take.
    """

    records: list = field(default_factory=list)
    final_point: Optional[PointZ] = None
    status: Optional[Status] = None
    reference: Optional[PointZ] = None
    counts: dict = field(default_factory=lambda: {k.value: 0 for k in CallKind})
    max_records: Optional[int] = None
    restarts: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def distance(self, z: PointZ) -> Optional[float]:
        if self.reference is None:
            return None
        return norm_z(z - self.reference)

    def log(self, phase: Phase, restart_index: int, it: int, gamma: float,
            f_norm: float, z: Optional[PointZ] = None) -> IterationRecord:
        if self.max_records is not None and len(self.records) >= self.max_records:
            raise BudgetExceeded(f"iteration budget of {self.max_records} exhausted")
        rec = IterationRecord(
            phase=phase,
            restart_index=restart_index,
            iter=it,
            gamma=float(gamma),
            f_norm=float(f_norm),
            dist_to_ref=None if z is None else self.distance(z),
            oracle_calls_cumulative=dict(self.counts),
        )
        self.records.append(rec)
        return rec

    def iterations(self, phase: Phase) -> int:
        return sum(1 for r in self.records if r.phase is phase)


def ceil_tol(v: float, rtol: float = 1e-12) -> int:
    """Ceiling that ignores floating-point overshoot of exact integers (64**(2/3) -> 16)."""
    r = round(v)
    if abs(v - r) <= rtol * max(1.0, abs(v)):
        return int(r)
    return int(math.ceil(v))
