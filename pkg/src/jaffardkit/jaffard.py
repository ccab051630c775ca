"""Polynomially decaying block matrices: weighted sup norm, algebra-norm bracket, generation, decay fits."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .blockop import (
    BlockMatrix,
    BlockVector,
    WeightSpec,
    apply,
    block_norms,
    involve,
    multiply,
    vector_pnorm,
)
from .errors import FitError, ParameterError
from .pointset import PointSet, convolution_constant, poly_weight

__all__ = [
    "DecayEnvelope",
    "NormBracket",
    "jaffard_norm",
    "algebra_norm_bracket",
    "random_jaffard",
    "hermitize",
    "decay_fit",
    "decay_pairs",
    "triangle_weight_check",
    "pbound_check",
    "PBoundReport",
]

ZERO_BLOCK_THRESHOLD = 1e-14


@dataclass(frozen=True)
class DecayEnvelope:
    amplitude: float
    exponent: float
    residual: float
    pairs_used: int

    def to_json(self) -> dict:
        return {"C": self.amplitude, "s_fit": self.exponent, "residual": self.residual, "pairs_used": self.pairs_used}


@dataclass(frozen=True)
class NormBracket:
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper * (1 + 1e-12):
            raise ParameterError(f"bracket is inverted: {self.lower} > {self.upper}")

    def to_json(self) -> dict:
        return asdict(self)


def jaffard_norm(A: BlockMatrix, s: float) -> float:
    """``max_{k,l} |A_{k,l}| (1 + |k - l|)^s``."""
    if s < 0:
        raise ParameterError("s must be nonnegative")
    return float(np.max(block_norms(A) * poly_weight(A.index_set.distances, s)))


def random_jaffard(X: PointSet, m: int, s: float, amplitude: float = 1.0, seed: int = 0) -> BlockMatrix:
    """Blocks ``C (1+|k-l|)^-s U_{k,l}`` with independent complex Gaussian ``U`` of unit spectral norm."""
    if not amplitude > 0:
        raise ParameterError("amplitude must be positive")
    n = len(X)
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((n, n, m, m)) + 1j * rng.standard_normal((n, n, m, m))
    U /= np.linalg.norm(U, ord=2, axis=(-2, -1))[..., None, None]
    scale = amplitude * poly_weight(X.distances, -s)
    return BlockMatrix(X, scale[:, :, None, None] * U)


def hermitize(A: BlockMatrix) -> BlockMatrix:
    return BlockMatrix(A.index_set, 0.5 * (A.blocks + involve(A).blocks))


def algebra_norm_bracket(A: BlockMatrix, s: float, samples: int = 200, seed: int = 0) -> NormBracket:
    """Bracket the operator-induced algebra norm ``sup_{|B|=1} |AB|``.

    The lower end maximizes over the identity and ``samples - 1`` random unit-norm
    matrices; the upper end is the convolution constant times the Jaffard norm.
    Sample seeds are spawned from ``seed``, so a larger ``samples`` extends the
    same sample sequence.
    """
    X = A.index_set
    if not s > X.dim:
        raise ParameterError(f"s={s} must exceed the dimension {X.dim}")
    if samples < 1:
        raise ParameterError("samples must be at least 1")
    base = jaffard_norm(A, s)
    lower = base
    seeds = np.random.SeedSequence(seed).spawn(samples - 1)
    for child in seeds:
        B = random_jaffard(X, A.block_dim, s, 1.0, seed=child)
        # dividing by the computed norm keeps the estimate exactly homogeneous
        lower = max(lower, jaffard_norm(multiply(A, B), s) / jaffard_norm(B, s))
    return NormBracket(lower=lower, upper=convolution_constant(X, s) * base)


def decay_pairs(A: BlockMatrix, interior_margin: float = 0.0):
    """Distances and block norms of nonzero blocks between points at least ``interior_margin`` inside the hull."""
    X = A.index_set
    inside = X.boundary_distance() >= interior_margin
    mask = inside[:, None] & inside[None, :]
    norms = block_norms(A)
    mask &= norms > ZERO_BLOCK_THRESHOLD
    return X.distances[mask], norms[mask]


def decay_fit(A: BlockMatrix, interior_margin: float | None = None) -> DecayEnvelope:
    """Least-squares fit of ``log|A_{k,l}| = log C - s log(1 + |k - l|)``.

    ``interior_margin`` defaults to one eighth of the point-set extent.
    """
    if interior_margin is None:
        interior_margin = A.index_set.extent / 8
    dist, norms = decay_pairs(A, interior_margin)
    if dist.size < 2 or np.unique(dist).size < 2:
        raise FitError(f"need pairs at two or more distinct distances, got {np.unique(dist).size}")
    x = -np.log1p(dist)
    y = np.log(norms)
    design = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return DecayEnvelope(
        amplitude=float(math.exp(coef[0])),
        exponent=float(coef[1]),
        residual=float(np.sqrt(np.mean(resid**2))),
        pairs_used=int(dist.size),
    )


def triangle_weight_check(X: PointSet, s: float, trials: int | None = None, seed: int = 0) -> float:
    """Max of ``nu_s(k-l) / (nu_s(k-n) + nu_s(n-l))`` over sampled triples (all triples if ``trials`` is None)."""
    if not s > 0:
        raise ParameterError("s must be positive")
    w = poly_weight(X.distances, s)
    if trials is None:
        return float(np.max(w[:, None, :] / (w[:, :, None] + w[None, :, :])))
    rng = np.random.default_rng(seed)
    k, l, n = rng.integers(0, len(X), size=(3, trials))
    return float(np.max(w[k, l] / (w[k, n] + w[n, l])))


@dataclass(frozen=True)
class PBoundReport:
    ratio: float
    majorant: float


def pbound_check(
    A: BlockMatrix,
    s: float,
    p: float,
    r: float = 0.0,
    t: float = 0.0,
    samples: int = 100,
    seed: int = 0,
) -> PBoundReport:
    """Largest observed ``|Ag| / |g|`` in l^p with weight ``(1+|x|)^t`` over random g.

    ``majorant`` is ``|A|_J * S`` where S is the Schur sum
    ``max_l (sum_k (1+|k-l|)^(-q(s-t)))^(1/q)`` with ``q = min(p, 1)``; it bounds the
    ratio for every g because ``(1+|x+y|)^t <= (1+|x|)^t (1+|y|)^t``.
    """
    d = A.index_set.dim
    if r < 0 or not s > d + r:
        raise ParameterError(f"need r >= 0 and s > d + r (s={s}, d={d}, r={r})")
    if not p > d / (s - r):
        raise ParameterError(f"need p > d/(s-r) = {d / (s - r)}, got {p}")
    if not 0 <= t <= r:
        raise ParameterError(f"weight exponent t={t} must lie in [0, r={r}]")
    w = WeightSpec("moderate", t) if t > 0 else WeightSpec()
    rng = np.random.default_rng(seed)
    n, m = A.size, A.block_dim
    best = 0.0
    for i in range(samples):
        g = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
        if i % 2:
            # sparse probes isolate single columns, which is where small p is tight
            g *= (rng.random(n) < 2.0 / n)[:, None]
            if not np.any(g):
                g[rng.integers(n)] = 1.0
        gv = BlockVector(A.index_set, g)
        best = max(best, vector_pnorm(apply(A, gv), p, w) / vector_pnorm(gv, p, w))
    q = min(p, 1.0)
    schur = float(np.max(np.sum(poly_weight(A.index_set.distances, -q * (s - t)), axis=0))) ** (1 / q)
    return PBoundReport(ratio=best, majorant=jaffard_norm(A, s) * schur)
