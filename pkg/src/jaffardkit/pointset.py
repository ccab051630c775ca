"""Relatively separated index sets in R^d and the summation constants over them.

Distances inside the polynomial weight ``(1 + |x|)^s`` are Euclidean; the
near/far partition around a center uses the sup-norm with threshold ``ceil(tau)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParameterError

__all__ = [
    "PointSet",
    "NeighborPartition",
    "poly_weight",
    "make_lattice",
    "make_jittered",
    "relsep_count",
    "point_sum_constant",
    "convolution_constant",
    "neighbor_partition",
    "tail_sum",
    "counting_constant",
    "save_pointset",
    "load_pointset",
]


def poly_weight(dist, s):
    """Polynomial weight ``(1 + dist)^s`` evaluated elementwise."""
    return (1.0 + np.asarray(dist, dtype=float)) ** s


@dataclass(frozen=True, eq=False)
class PointSet:
    """Finite ordered set of distinct points in R^d (rows of ``points``)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise ParameterError(f"points must be a nonempty (N, d) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ParameterError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if len(pts) > 1 and self.separation == 0.0:
            raise ParameterError("points must be distinct")

    def __len__(self):
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PointSet):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(np.array_equal(self.points, other.points))

    def __hash__(self):
        return hash((self.points.shape, self.points.tobytes()))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @cached_property
    def separation(self) -> float:
        """Minimum pairwise Euclidean distance (``inf`` for a single point)."""
        if len(self) < 2:
            return math.inf
        dist, _ = cKDTree(self.points).query(self.points, k=2)
        return float(dist[:, 1].min())

    @cached_property
    def relsep_count(self) -> int:
        return relsep_count(self)

    @cached_property
    def distances(self) -> np.ndarray:
        """Euclidean distance matrix, shape (N, N)."""
        diff = self.points[:, None, :] - self.points[None, :, :]
        out = np.sqrt(np.sum(diff * diff, axis=-1))
        out.setflags(write=False)
        return out

    @cached_property
    def sup_distances(self) -> np.ndarray:
        diff = self.points[:, None, :] - self.points[None, :, :]
        out = np.max(np.abs(diff), axis=-1)
        out.setflags(write=False)
        return out

    @property
    def extent(self) -> float:
        """Largest side of the bounding box."""
        return float(np.max(np.ptp(self.points, axis=0)))

    def index_of(self, point) -> int:
        if isinstance(point, (int, np.integer)):
            if not 0 <= point < len(self):
                raise ParameterError(f"point index {point} out of range")
            return int(point)
        p = np.atleast_1d(np.asarray(point, dtype=float))
        if p.shape != (self.dim,):
            raise ParameterError(f"point must have {self.dim} coordinates")
        hits = np.flatnonzero(np.all(self.points == p, axis=1))
        if hits.size == 0:
            raise ParameterError(f"point {p.tolist()} is not in the set")
        return int(hits[0])

    def boundary_distance(self) -> np.ndarray:
        """Per-point distance to the bounding box boundary (sup over axes of the near edge)."""
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return np.min(np.minimum(self.points - lo, hi - self.points), axis=1)

    def describe(self) -> dict:
        return {
            "dim": self.dim,
            "size": len(self),
            "extent": self.extent,
            "separation": self.separation,
            "relsep_count": self.relsep_count,
        }


@dataclass(frozen=True)
class NeighborPartition:
    center: int
    tau: float
    near: tuple = field(default_factory=tuple)
    far: tuple = field(default_factory=tuple)


def _check_dim(d):
    if d not in (1, 2, 3):
        raise ParameterError(f"dimension must be 1, 2 or 3, got {d}")


def make_lattice(d: int, extent: int, spacing: float = 1.0) -> PointSet:
    """Points ``spacing * z`` for integer ``z`` with ``0 <= z_i < extent``."""
    _check_dim(d)
    if int(extent) != extent or extent < 1:
        raise ParameterError(f"extent must be a positive integer, got {extent}")
    if not spacing > 0:
        raise ParameterError("spacing must be positive")
    axes = [np.arange(int(extent), dtype=float)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return PointSet(spacing * grid)


def make_jittered(d: int, extent: int, spacing: float, jitter: float, seed: int) -> PointSet:
    """Lattice points displaced by independent uniform vectors in ``[-jitter, jitter]^d``.

    Randomness comes from ``numpy.random.default_rng(seed)`` (PCG64 seeded through
    ``SeedSequence``), so a given 64-bit seed always produces the same set and the
    generator can be split with ``SeedSequence.spawn`` by callers.
    """
    if not 0 <= jitter < spacing / 2:
        raise ParameterError(f"jitter must lie in [0, spacing/2), got {jitter}")
    base = make_lattice(d, extent, spacing)
    rng = np.random.default_rng(seed)
    offsets = rng.uniform(-jitter, jitter, size=base.points.shape)
    return PointSet(base.points + offsets)


def _max_in_cube(pts: np.ndarray, axis: int) -> int:
    # A maximal closed cube can be slid down until each lower face touches a point.
    if len(pts) == 0:
        return 0
    coords = pts[:, axis]
    if axis == pts.shape[1] - 1:
        c = np.sort(coords)
        hi = np.searchsorted(c, c + 1.0, side="right")
        return int(np.max(hi - np.arange(len(c))))
    best = 0
    for v in np.unique(coords):
        sub = pts[(coords >= v) & (coords <= v + 1.0)]
        if len(sub) > best:
            best = max(best, _max_in_cube(sub, axis + 1))
    return best


def relsep_count(X: PointSet) -> int:
    """Maximum number of points of X in any closed unit cube ``x + [0, 1]^d``."""
    if len(X) == 0:
        raise ParameterError("point set is empty")
    return _max_in_cube(X.points, 0)


def _require_decay(X, s):
    if not s > X.dim:
        raise ParameterError(f"decay exponent s={s} must exceed the dimension d={X.dim}")


def point_sum_constant(X: PointSet, s: float, probe_grid=None) -> float:
    """``max_x sum_k (1 + |x - k|)^(-s)`` over probe points (default: X itself)."""
    _require_decay(X, s)
    probes = X.points if probe_grid is None else np.atleast_2d(np.asarray(probe_grid, dtype=float))
    if probes.shape[1] != X.dim:
        probes = probes.reshape(-1, X.dim)
    best = 0.0
    chunk = max(1, 2_000_000 // len(X))
    for start in range(0, len(probes), chunk):
        p = probes[start:start + chunk]
        diff = p[:, None, :] - X.points[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        best = max(best, float(np.max(np.sum(poly_weight(dist, -s), axis=1))))
    return best


def convolution_constant(X: PointSet, s: float) -> float:
    """``max_{k,l} nu_s(k-l) sum_n nu_s(k-n)^-1 nu_s(n-l)^-1`` over X."""
    _require_decay(X, s)
    inv_w = poly_weight(X.distances, -s)
    return float(np.max((inv_w @ inv_w) * poly_weight(X.distances, s)))


def _center_row(X, center):
    k = X.index_of(center)
    diff = X.points - X.points[k]
    return k, np.max(np.abs(diff), axis=1), np.sqrt(np.sum(diff * diff, axis=1))


def neighbor_partition(X: PointSet, center, tau: float) -> NeighborPartition:
    """Split X into points within sup-distance ``ceil(tau)`` of the center and the rest."""
    if not tau > 0:
        raise ParameterError("tau must be positive")
    k, sup_d, _ = _center_row(X, center)
    near = sup_d <= math.ceil(tau)
    return NeighborPartition(
        center=k,
        tau=float(tau),
        near=tuple(int(i) for i in np.flatnonzero(near)),
        far=tuple(int(i) for i in np.flatnonzero(~near)),
    )


def tail_sum(X: PointSet, center, tau: float, s: float) -> float:
    """Sum of ``(1 + |k - n|)^(-s)`` over the far part of the partition at ``center``."""
    _require_decay(X, s)
    if not tau > 0:
        raise ParameterError("tau must be positive")
    _, sup_d, dist = _center_row(X, center)
    far = sup_d > math.ceil(tau)
    return float(np.sum(poly_weight(dist[far], -s)))


def counting_constant(X: PointSet, s: float, tau_min: float) -> float:
    """Smallest C with ``|near| <= C tau^d`` and ``tail <= C tau^(d-s)`` for all centers, tau >= tau_min.

    Both counts only change when ``ceil(tau)`` does, so the supremum over tau is
    exact: on ``ceil(tau) = j`` the near ratio peaks at the lower end of the
    interval and the tail ratio at ``tau = j``.
    """
    _require_decay(X, s)
    if not tau_min > 0:
        raise ParameterError("tau_min must be positive")
    d = X.dim
    sup_d = X.sup_distances
    inv_w = poly_weight(X.distances, -s)
    j0 = max(1, math.ceil(tau_min))
    j_last = max(j0, math.ceil(float(sup_d.max())))
    best = 0.0
    for j in range(j0, j_last + 1):
        near = sup_d <= j
        lower = tau_min if j == j0 else float(j - 1)
        near_ratio = float(near.sum(axis=1).max()) / lower**d
        tail_ratio = float(np.where(near, 0.0, inv_w).sum(axis=1).max()) * j ** (s - d)
        best = max(best, near_ratio, tail_ratio)
    return best


def save_pointset(X: PointSet, path) -> None:
    Path(path).write_text(json.dumps({"dim": X.dim, "points": X.points.tolist()}))


def pointset_from_json(doc: dict) -> PointSet:
    dim = doc.get("dim")
    rows = doc.get("points")
    if not isinstance(dim, int) or dim < 1 or not isinstance(rows, list) or not rows:
        raise ParameterError("pointset document needs integer 'dim' and nonempty 'points'")
    for row in rows:
        if not isinstance(row, list) or len(row) != dim:
            raise ParameterError(f"ragged pointset row {row!r}; expected {dim} coordinates")
    return PointSet(np.array(rows, dtype=float))


def load_pointset(path) -> PointSet:
    return pointset_from_json(json.loads(Path(path).read_text()))
