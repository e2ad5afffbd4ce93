"""Uniform lattice over a computational box containing the closed domain."""

from __future__ import annotations

import itertools
import math

import numpy as np

from levyperron.models.domain import Domain


class Lattice:
    """Axis-aligned lattice of step h aligned with the domain's bounding box.

    The box is the bounding box of the domain padded by ``margin_nodes`` steps
    on every side, so every interior node has its full derivative stencil
    inside the box.

    Args:
        domain: Domain the lattice discretizes.
        h: Lattice step.
        margin_nodes: Padding in steps around the bounding box.
    """

    def __init__(self, domain: Domain, h: float, margin_nodes: int = 2) -> None:
        if h <= 0.0:
            msg = f"lattice step must be positive, got {h}"
            raise ValueError(msg)
        if margin_nodes < 1:
            msg = f"margin_nodes must be at least 1, got {margin_nodes}"
            raise ValueError(msg)
        lo, up = domain.bbox
        cells = np.ceil((up - lo) / h - 1e-9).astype(int)
        self.domain = domain
        self.h = float(h)
        self.dim = domain.dim
        self.lower = lo - margin_nodes * h
        self.shape = tuple(int(c) + 1 + 2 * margin_nodes for c in cells)
        self.upper = self.lower + (np.asarray(self.shape) - 1) * h
        axes = [self.lower[i] + h * np.arange(self.shape[i]) for i in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        self.nodes = np.column_stack([m.ravel() for m in mesh])
        self.interior_mask = domain.contains(self.nodes)
        self.interior_index = np.flatnonzero(self.interior_mask)
        self._corners = np.array(list(itertools.product((0, 1), repeat=self.dim)), dtype=int)

    @property
    def size(self) -> int:
        return int(math.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def in_box(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= self.lower - 1e-12) & (p <= self.upper + 1e-12), axis=1)

    def interpolation_weights(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Multilinear interpolation corners and weights.

        Args:
            points: (m, n) points inside the box.

        Returns:
            Flat node indices of shape (m, 2^n) and matching weights summing to 1 per row.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        t = (p - self.lower) / self.h
        base = np.clip(np.floor(t + 1e-10).astype(int), 0, np.asarray(self.shape) - 2)
        frac = np.clip(t - base, 0.0, 1.0)
        corner_idx = base[:, None, :] + self._corners[None, :, :]
        flat = np.ravel_multi_index(tuple(corner_idx[..., i] for i in range(self.dim)), self.shape)
        factors = np.where(self._corners[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
        return flat, factors.prod(axis=2)

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Split points into interpolated ones (inside the domain and box) and exterior ones.

        Returns:
            Mask of interpolated points, their corner indices and weights.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        inside = self.domain.contains(p) & self.in_box(p)
        idx, w = self.interpolation_weights(p[inside]) if np.any(inside) else (
            np.zeros((0, len(self._corners)), dtype=int),
            np.zeros((0, len(self._corners))),
        )
        return inside, idx, w

    def node_index(self, multi: tuple[int, ...]) -> int:
        return int(np.ravel_multi_index(multi, self.shape))

    def nearest_node(self, point: np.ndarray) -> int:
        t = np.rint((np.asarray(point, dtype=float) - self.lower) / self.h).astype(int)
        t = np.clip(t, 0, np.asarray(self.shape) - 1)
        return self.node_index(tuple(int(v) for v in t))
