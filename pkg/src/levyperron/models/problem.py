"""Bellman-Isaacs problem over finite index sets.

The operator is sup over a of inf over b of
-I_ab[x, u] + b_ab(x) . grad u(x) + c_ab(x) r + f_ab(x), one kernel, drift,
zeroth-order coefficient and forcing per index pair.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field, replace

import numpy as np

from levyperron.models.domain import Domain
from levyperron.models.fields import ExteriorDatum
from levyperron.models.kernel import Kernel
from levyperron.schemas.params import EllipticityParams

Coefficient = float | Callable[[np.ndarray], float]
VectorCoefficient = np.ndarray | Callable[[np.ndarray], np.ndarray] | None


def _scalar(coef: Coefficient, x: np.ndarray) -> float:
    return float(coef(x)) if callable(coef) else float(coef)


@dataclass(frozen=True)
class PairCoefficients:
    """Coefficients of one index pair (a, b)."""

    a: str
    b: str
    kernel: Kernel
    c: Coefficient = 0.0
    f: Coefficient = 0.0
    drift: VectorCoefficient = None

    def c_at(self, x: np.ndarray) -> float:
        return _scalar(self.c, x)

    def f_at(self, x: np.ndarray) -> float:
        return _scalar(self.f, x)

    def drift_at(self, x: np.ndarray) -> np.ndarray:
        if self.drift is None:
            return np.zeros(self.kernel.dim)
        if callable(self.drift):
            return np.asarray(self.drift(x), dtype=float)
        return np.asarray(self.drift, dtype=float)

    @property
    def has_drift(self) -> bool:
        if self.drift is None:
            return False
        if callable(self.drift):
            return True
        return bool(np.any(np.asarray(self.drift) != 0.0))


@dataclass(frozen=True)
class BellmanProblem:
    """Dirichlet exterior-data problem for a nonlocal Bellman-Isaacs operator.

    Args:
        pairs: One entry per (a, b); every a must be paired with every b.
        domain: Bounded domain with exterior balls.
        datum: Exterior datum g.
        params: Ellipticity constants shared by the kernels.
        gamma: Coercivity floor with c_ab >= gamma.
        modulus: Declared modulus m(t) of the r slot; defaults to c_max t.
    """

    pairs: tuple[PairCoefficients, ...]
    domain: Domain
    datum: ExteriorDatum
    params: EllipticityParams
    gamma: float = 0.0
    modulus: Callable[[float], float] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self.pairs:
            msg = "a Bellman problem needs at least one index pair"
            raise ValueError(msg)
        seen = {(p.a, p.b) for p in self.pairs}
        if len(seen) != len(self.pairs):
            msg = "duplicate (a, b) index pair"
            raise ValueError(msg)
        missing = [(a, b) for a in self.a_labels for b in self.b_labels if (a, b) not in seen]
        if missing:
            msg = f"index table is incomplete, missing pairs {missing}"
            raise ValueError(msg)
        if self.gamma < 0.0:
            msg = f"gamma must be nonnegative, got {self.gamma}"
            raise ValueError(msg)
        for p in self.pairs:
            if p.kernel.dim != self.domain.dim:
                msg = f"kernel {p.kernel.label} has dimension {p.kernel.dim}, domain has {self.domain.dim}"
                raise ValueError(msg)
            if self.params.sigma < 1.0 and p.has_drift:
                msg = f"pair ({p.a}, {p.b}) has a drift but sigma={self.params.sigma} < 1"
                raise ValueError(msg)
            if not callable(p.c) and (p.c < 0.0 or p.c < self.gamma):
                msg = f"pair ({p.a}, {p.b}) has c={p.c} below the floor max(0, gamma={self.gamma})"
                raise ValueError(msg)

    @property
    def a_labels(self) -> list[str]:
        return list(dict.fromkeys(p.a for p in self.pairs))

    @property
    def b_labels(self) -> list[str]:
        return list(dict.fromkeys(p.b for p in self.pairs))

    @property
    def table(self) -> list[list[PairCoefficients]]:
        """Pairs arranged as rows a, columns b in declaration order."""
        lookup = {(p.a, p.b): p for p in self.pairs}
        return [[lookup[(a, b)] for b in self.b_labels] for a in self.a_labels]

    @property
    def kernels(self) -> list[Kernel]:
        """Distinct kernels in declaration order."""
        unique: dict[int, Kernel] = {}
        for p in self.pairs:
            unique.setdefault(id(p.kernel), p.kernel)
        return list(unique.values())

    @property
    def dim(self) -> int:
        return self.domain.dim

    def validate_coefficients(self, points: np.ndarray) -> None:
        """Check c_ab >= max(0, gamma) at sample points for callable coefficients."""
        for p in self.pairs:
            if callable(p.c):
                values = np.array([p.c_at(x) for x in points])
                if np.any(values < max(0.0, self.gamma) - 1e-14):
                    msg = f"pair ({p.a}, {p.b}) has c below max(0, gamma={self.gamma}) at sampled points"
                    raise ValueError(msg)

    def c_max(self, points: np.ndarray) -> float:
        return max(max(abs(p.c_at(x)) for x in points) for p in self.pairs)

    def f_sup(self, points: np.ndarray) -> float:
        """sup over pairs of ||f_ab|| over the sample points."""
        return max(max(abs(p.f_at(x)) for x in points) for p in self.pairs)

    def drift_sup(self, points: np.ndarray) -> float:
        return max(max(float(np.linalg.norm(p.drift_at(x))) for x in points) for p in self.pairs)

    def modulus_at(self, t: float, points: np.ndarray) -> float:
        if self.modulus is not None:
            return self.modulus(t)
        return self.c_max(points) * t

    def with_forcing(self, f: Coefficient) -> BellmanProblem:
        """Same problem with every pair's forcing replaced by f."""
        return replace(self, pairs=tuple(replace(p, f=f) for p in self.pairs))
