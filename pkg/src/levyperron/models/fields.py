"""Functions the nonlocal operators act on.

A Field is a map from points (m, n) to values (m,) with a finite-difference
step for its derivatives and either a sup-norm bound or a growth bound
|u(y)| <= C (1 + |y|)^beta. The bound feeds the certified tail interval of
every operator evaluation.

GridFunction is the lattice-backed field: multilinear interpolation at points
of the domain, exterior datum everywhere else.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from levyperron.models.domain import Domain
from levyperron.models.lattice import Lattice

PointFn = Callable[[np.ndarray], np.ndarray]


def derivative_stencil(x: np.ndarray, step: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centered first and second difference stencils at x.

    Args:
        x: Center point (n,).
        step: Difference step.

    Returns:
        Stencil points (S, n) with the center first, gradient coefficients (n, S)
        and Hessian coefficients (n, n, S).
    """
    n = x.size
    offsets: list[np.ndarray] = [np.zeros(n)]
    eye = np.eye(n)
    for i in range(n):
        offsets.extend((eye[i], -eye[i]))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for i, j in pairs:
        offsets.extend((eye[i] + eye[j], eye[i] - eye[j], -eye[i] + eye[j], -eye[i] - eye[j]))
    points = x + step * np.asarray(offsets)
    size = len(offsets)
    grad = np.zeros((n, size))
    hess = np.zeros((n, n, size))
    inv2 = 1.0 / step**2
    for i in range(n):
        plus, minus = 1 + 2 * i, 2 + 2 * i
        grad[i, plus] = 0.5 / step
        grad[i, minus] = -0.5 / step
        hess[i, i, plus] += inv2
        hess[i, i, minus] += inv2
        hess[i, i, 0] -= 2.0 * inv2
    base = 1 + 2 * n
    for k, (i, j) in enumerate(pairs):
        pp, pm, mp, mm = base + 4 * k, base + 4 * k + 1, base + 4 * k + 2, base + 4 * k + 3
        for a, b in ((i, j), (j, i)):
            hess[a, b, pp] += 0.25 * inv2
            hess[a, b, pm] -= 0.25 * inv2
            hess[a, b, mp] -= 0.25 * inv2
            hess[a, b, mm] += 0.25 * inv2
    return points, grad, hess


class Field(ABC):
    """A real function on R^n evaluable at arbitrary points."""

    dim: int
    step: float
    domain: Domain | None = None

    @abstractmethod
    def __call__(self, points: np.ndarray) -> np.ndarray: ...

    def sup_bound(self) -> float | None:
        """Known bound of the sup norm over R^n, None when only a growth bound holds."""
        return None

    def growth(self) -> tuple[float, float]:
        """(C, beta) with |u(y)| <= C (1 + |y|)^beta."""
        bound = self.sup_bound()
        if bound is None:
            msg = f"{type(self).__name__} declares neither a sup bound nor a growth bound"
            raise ValueError(msg)
        return bound, 0.0

    def value(self, x: np.ndarray) -> float:
        return float(self(np.atleast_2d(x))[0])

    def gradient(self, x: np.ndarray, step: float | None = None) -> np.ndarray:
        pts, grad, _ = derivative_stencil(np.asarray(x, dtype=float), step or self.step)
        return grad @ self(pts)

    def hessian(self, x: np.ndarray, step: float | None = None) -> np.ndarray:
        pts, _, hess = derivative_stencil(np.asarray(x, dtype=float), step or self.step)
        return hess @ self(pts)

    def gradient_norm(self, x: np.ndarray, one_sided: bool = False) -> float:
        """|grad u(x)|; with ``one_sided`` the worse of forward and backward differences per axis."""
        x = np.asarray(x, dtype=float)
        if not one_sided:
            return float(np.linalg.norm(self.gradient(x)))
        eye = np.eye(x.size) * self.step
        center = self.value(x)
        fwd = (self(x + eye) - center) / self.step
        bwd = (center - self(x - eye)) / self.step
        return float(np.linalg.norm(np.maximum(np.abs(fwd), np.abs(bwd))))

    def __neg__(self) -> Field:
        return ScaledField(self, -1.0)

    def __mul__(self, factor: float) -> Field:
        return ScaledField(self, float(factor))

    __rmul__ = __mul__

    def __add__(self, other: Field | float) -> Field:
        if isinstance(other, Field):
            return SumField(self, other, 1.0)
        return ShiftedField(self, float(other))

    def __sub__(self, other: Field | float) -> Field:
        if isinstance(other, Field):
            return SumField(self, other, -1.0)
        return ShiftedField(self, -float(other))


class AnalyticField(Field):
    """Field given by a vectorized callable.

    Args:
        fn: Map (m, n) -> (m,).
        dim: Space dimension.
        step: Finite-difference step for derivatives.
        bound: Sup-norm bound, if the field is bounded.
        growth: (C, beta) growth bound for unbounded fields.
        domain: Domain on which operator evaluations are meaningful.
    """

    def __init__(
        self,
        fn: PointFn,
        dim: int,
        step: float = 1e-3,
        bound: float | None = None,
        growth: tuple[float, float] | None = None,
        domain: Domain | None = None,
    ) -> None:
        if bound is None and growth is None:
            msg = "an analytic field needs a sup bound or a growth bound"
            raise ValueError(msg)
        self.fn = fn
        self.dim = dim
        self.step = step
        self._bound = bound
        self._growth = growth
        self.domain = domain

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.atleast_2d(np.asarray(points, dtype=float))), dtype=float)

    def sup_bound(self) -> float | None:
        return self._bound

    def growth(self) -> tuple[float, float]:
        if self._growth is not None:
            return self._growth
        return super().growth()


class ScaledField(Field):
    def __init__(self, base: Field, factor: float) -> None:
        self.base = base
        self.factor = factor
        self.dim = base.dim
        self.step = base.step
        self.domain = base.domain

    def __call__(self, points: np.ndarray) -> np.ndarray:
        values = self.base(points)
        return -values if self.factor == -1.0 else self.factor * values

    def sup_bound(self) -> float | None:
        bound = self.base.sup_bound()
        return None if bound is None else abs(self.factor) * bound

    def growth(self) -> tuple[float, float]:
        c, beta = self.base.growth()
        return abs(self.factor) * c, beta


class ShiftedField(Field):
    def __init__(self, base: Field, shift: float) -> None:
        self.base = base
        self.shift = shift
        self.dim = base.dim
        self.step = base.step
        self.domain = base.domain

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.base(points) + self.shift

    def sup_bound(self) -> float | None:
        bound = self.base.sup_bound()
        return None if bound is None else bound + abs(self.shift)

    def growth(self) -> tuple[float, float]:
        c, beta = self.base.growth()
        return c + abs(self.shift), beta


class SumField(Field):
    def __init__(self, left: Field, right: Field, sign: float) -> None:
        self.left = left
        self.right = right
        self.sign = sign
        self.dim = left.dim
        self.step = min(left.step, right.step)
        self.domain = left.domain or right.domain

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.left(points) + self.sign * self.right(points)

    def sup_bound(self) -> float | None:
        a, b = self.left.sup_bound(), self.right.sup_bound()
        return None if a is None or b is None else a + b

    def growth(self) -> tuple[float, float]:
        (ca, ba), (cb, bb) = self.left.growth(), self.right.growth()
        return ca + cb, max(ba, bb)


class MinField(Field):
    """Pointwise minimum of fields; the building block of barrier envelopes."""

    def __init__(self, branches: list[Field]) -> None:
        if not branches:
            msg = "MinField needs at least one branch"
            raise ValueError(msg)
        self.branches = branches
        self.dim = branches[0].dim
        self.step = min(b.step for b in branches)
        self.domain = branches[0].domain

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.min(np.stack([b(points) for b in self.branches]), axis=0)

    def active_branches(self, x: np.ndarray, rtol: float = 1e-9) -> list[Field]:
        """Branches attaining the minimum at x (several at a kink)."""
        values = np.array([b.value(x) for b in self.branches])
        low = values.min()
        return [b for b, v in zip(self.branches, values, strict=True) if v <= low + rtol * max(1.0, abs(low))]

    def sup_bound(self) -> float | None:
        bounds = [b.sup_bound() for b in self.branches]
        finite = [b for b in bounds if b is not None]
        if len(finite) == len(bounds):
            return max(finite)
        return None

    def growth(self) -> tuple[float, float]:
        growths = [b.growth() for b in self.branches]
        return max(g[0] for g in growths), max(g[1] for g in growths)


@dataclass(frozen=True)
class ExteriorDatum:
    """Bounded continuous exterior datum g with its modulus of continuity.

    Args:
        fn: Vectorized map (m, n) -> (m,).
        sup_norm: Bound of |g| over R^n.
        lipschitz: Lipschitz constant, None when only boundedness is known.
        label: Name used in reports.
    """

    fn: PointFn
    sup_norm: float
    lipschitz: float | None = None
    label: str = "g"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.atleast_2d(np.asarray(points, dtype=float))), dtype=float)

    def modulus(self, t: float) -> float:
        """rho(t) = min(L t, 2 ||g||)."""
        if self.lipschitz is None:
            return 2.0 * self.sup_norm
        return min(self.lipschitz * t, 2.0 * self.sup_norm)

    @classmethod
    def constant(cls, value: float) -> ExteriorDatum:
        return cls(fn=lambda p: np.full(len(p), value), sup_norm=abs(value), lipschitz=0.0, label=f"const({value:g})")

    @classmethod
    def cosine(cls, amplitude: float, frequency: float, axis: int = 0) -> ExteriorDatum:
        return cls(
            fn=lambda p: amplitude * np.cos(frequency * p[:, axis]),
            sup_norm=abs(amplitude),
            lipschitz=abs(amplitude * frequency),
            label=f"cos({amplitude:g},{frequency:g})",
        )

    @classmethod
    def clipped_affine(cls, slope: list[float], offset: float, clip: float) -> ExteriorDatum:
        a = np.asarray(slope, dtype=float)
        if clip <= 0.0:
            msg = f"clip level must be positive, got {clip}"
            raise ValueError(msg)
        return cls(
            fn=lambda p: np.clip(p @ a + offset, -clip, clip),
            sup_norm=clip,
            lipschitz=float(np.linalg.norm(a)),
            label="clipped_affine",
        )


class GridFunction(Field):
    """Lattice values in the domain plus the exterior datum everywhere else.

    Values are stored for every lattice node; nodes outside the domain always
    hold the datum so the exterior identity u = g holds by construction.

    Args:
        lattice: Lattice carrying the domain.
        values: One value per lattice node (flat, C order).
        datum: Exterior datum g.
        bound: Sup-norm bound; computed from values and the datum when omitted.
    """

    def __init__(self, lattice: Lattice, values: np.ndarray, datum: ExteriorDatum, bound: float | None = None) -> None:
        values = np.asarray(values, dtype=float).ravel().copy()
        if values.size != lattice.size:
            msg = f"expected {lattice.size} lattice values, got {values.size}"
            raise ValueError(msg)
        exterior = ~lattice.interior_mask
        values[exterior] = datum(lattice.nodes[exterior])
        self.lattice = lattice
        self.values = values
        self.datum = datum
        self.dim = lattice.dim
        self.step = lattice.h
        self.domain = lattice.domain
        observed = float(np.abs(values).max(initial=0.0))
        declared = max(observed, datum.sup_norm)
        if bound is not None and bound + 1e-12 < observed:
            msg = f"declared bound {bound} is below the observed sup norm {observed}"
            raise ValueError(msg)
        self.bound = declared if bound is None else max(bound, datum.sup_norm)

    @classmethod
    def from_field(cls, lattice: Lattice, field: Field | PointFn, datum: ExteriorDatum) -> GridFunction:
        values = np.zeros(lattice.size)
        inner = lattice.interior_mask
        values[inner] = field(lattice.nodes[inner])
        return cls(lattice, values, datum)

    @classmethod
    def constant(cls, lattice: Lattice, value: float, datum: ExteriorDatum) -> GridFunction:
        return cls(lattice, np.full(lattice.size, value), datum)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        out = self.datum(p) if len(p) else np.zeros(0)
        inside, idx, w = self.lattice.locate(p)
        if np.any(inside):
            out[inside] = np.sum(self.values[idx] * w, axis=1)
        return out

    def sup_bound(self) -> float | None:
        return self.bound

    @property
    def interior_values(self) -> np.ndarray:
        return self.values[self.lattice.interior_mask]

    def with_values(self, values: np.ndarray) -> GridFunction:
        return GridFunction(self.lattice, values, self.datum)

    def with_interior(self, interior: np.ndarray) -> GridFunction:
        values = self.values.copy()
        values[self.lattice.interior_mask] = interior
        return GridFunction(self.lattice, values, self.datum)

    def __neg__(self) -> GridFunction:
        datum = self.datum
        negated = ExteriorDatum(
            fn=lambda p: -datum(p), sup_norm=datum.sup_norm, lipschitz=datum.lipschitz, label=f"-{datum.label}"
        )
        return GridFunction(self.lattice, -self.values, negated, bound=self.bound)


def pointwise_max(u: GridFunction, v: GridFunction) -> GridFunction:
    """Nodewise maximum of two grid functions on the same lattice and datum."""
    if u.lattice is not v.lattice:
        msg = "pointwise_max needs grid functions on the same lattice"
        raise ValueError(msg)
    return GridFunction(u.lattice, np.maximum(u.values, v.values), u.datum)
