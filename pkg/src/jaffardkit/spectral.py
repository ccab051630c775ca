"""Spectral radii through repeated squaring, the squaring inequality, and the two-norm radius comparison."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blockop import BlockMatrix, involve, multiply, operator_norm_l2
from .errors import NumericError, ParameterError
from .jaffard import jaffard_norm
from .pointset import PointSet, counting_constant, point_sum_constant, poly_weight

__all__ = [
    "GelfandSequence",
    "GammaReport",
    "RadiusComparison",
    "gelfand_radius",
    "true_radius_selfadjoint",
    "embedding_constant",
    "norm_equivalence_constant",
    "gamma_constant",
    "gamma_check",
    "radius_comparison",
    "is_selfadjoint",
]

SELFADJOINT_TOL = 1e-10


@dataclass(frozen=True)
class GelfandSequence:
    norm_kind: str
    s: float | None
    powers: tuple = field(default_factory=tuple)  # (n, norm, root) with n = 2**k
    log_norms: tuple = field(default_factory=tuple)

    @property
    def roots(self) -> list:
        return [root for _, _, root in self.powers]

    @property
    def extrapolated_radius(self) -> float:
        return self.powers[-1][2]

    def to_json(self) -> dict:
        return {
            "norm_kind": self.norm_kind,
            "s": self.s,
            "powers": [list(p) for p in self.powers],
            "extrapolated_radius": self.extrapolated_radius,
        }

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "n", "norm", "root"])
            for k, (n, norm, root) in enumerate(self.powers):
                writer.writerow([k, n, repr(norm), repr(root)])


@dataclass(frozen=True)
class GammaReport:
    gamma: float
    lhs: float
    rhs_factor: float
    ratio: float

    def to_json(self) -> dict:
        return {"gamma": self.gamma, "lhs": self.lhs, "rhs_factor": self.rhs_factor, "ratio": self.ratio}


@dataclass(frozen=True)
class RadiusComparison:
    r_jaffard: float
    r_l2: float
    gap: float
    jaffard_sequence: GelfandSequence
    l2_sequence: GelfandSequence

    def __iter__(self):
        return iter((self.r_jaffard, self.r_l2, self.gap))


def _norm_fn(norm_kind, s):
    if norm_kind == "l2":
        return operator_norm_l2
    if norm_kind == "jaffard":
        if s is None or s < 0:
            raise ParameterError("the jaffard norm needs a nonnegative exponent s")
        return lambda M: jaffard_norm(M, s)
    raise ParameterError(f"unknown norm kind {norm_kind!r}")


def _safe_exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def gelfand_radius(A: BlockMatrix, norm_kind: str = "l2", k_max: int = 6, s: float | None = None) -> GelfandSequence:
    """Norms of ``A^(2^k)`` for ``k = 0..k_max`` and their ``2^k``-th roots.

    Each power is divided by its own norm before squaring; the accumulated log
    scale keeps the recorded norms exact without overflowing the iterate.
    """
    if k_max < 1:
        raise ParameterError("k_max must be at least 1")
    norm = _norm_fn(norm_kind, s)
    P = A
    log_scale = 0.0
    powers, logs = [], []
    for k in range(k_max + 1):
        n = 2**k
        value = norm(P)
        if value == 0.0:
            for kk in range(k, k_max + 1):
                powers.append((2**kk, 0.0, 0.0))
                logs.append(-math.inf)
            break
        log_norm = math.log(value) + log_scale
        powers.append((n, _safe_exp(log_norm), math.exp(log_norm / n)))
        logs.append(log_norm)
        if k == k_max:
            break
        P = P.scaled(1.0 / value)
        log_scale += math.log(value)
        P = multiply(P, P)
        log_scale *= 2
        if not np.all(np.isfinite(P.blocks)):
            raise NumericError(
                f"non-finite entries after squaring to power {2 * n}",
                diagnostics={"k": k + 1, "log_scale": log_scale, "last_norm": value},
            )
    return GelfandSequence(norm_kind=norm_kind, s=s, powers=tuple(powers), log_norms=tuple(logs))


def is_selfadjoint(A: BlockMatrix, tol: float = SELFADJOINT_TOL) -> bool:
    scale = max(float(np.max(np.abs(A.blocks))), 1.0)
    return float(np.max(np.abs(A.blocks - involve(A).blocks))) <= tol * scale


def true_radius_selfadjoint(A: BlockMatrix) -> float:
    """Largest absolute eigenvalue of the flattened Hermitian matrix (dense eigensolver)."""
    if not is_selfadjoint(A):
        raise ParameterError("matrix is not self-adjoint")
    F = A.to_dense()
    F = 0.5 * (F + F.conj().T)
    return float(np.max(np.abs(np.linalg.eigvalsh(F))))


def embedding_constant(X: PointSet, s: float) -> float:
    """K with ``|A|_l2 <= K |A|_J`` on X (Schur test on the block-norm kernel)."""
    return point_sum_constant(X, s)


def norm_equivalence_constant(X: PointSet, s: float) -> float:
    """K with ``K^-1 <= |A|_J / |A|_l2 <= K`` for every nonzero A on X."""
    diameter = float(X.distances.max())
    return max(embedding_constant(X, s), float(poly_weight(diameter, s)))


def gamma_constant(X: PointSet, s: float) -> float:
    """``2^(s+2)`` times the counting constant over the range of tau the squaring estimate can reach.

    That tau is ``(|A|_J / |A|_l2)^(1/s)``, which never drops below ``K^(-1/s)`` with K the
    embedding constant.
    """
    tau_min = embedding_constant(X, s) ** (-1.0 / s)
    return 2.0 ** (s + 2) * counting_constant(X, s, tau_min)


def gamma_check(A: BlockMatrix, s: float) -> GammaReport:
    """Compare ``|A^2|_J`` with ``|A|_J^(2-gamma) |A|_l2^gamma`` where ``gamma = 1 - d/s``."""
    d = A.index_set.dim
    if not s > d:
        raise ParameterError(f"s={s} must exceed the dimension {d}")
    if not np.any(A.blocks):
        raise ParameterError("the squaring inequality is checked for nonzero matrices only")
    gamma = 1.0 - d / s
    lhs = jaffard_norm(multiply(A, A), s)
    rhs = jaffard_norm(A, s) ** (2 - gamma) * operator_norm_l2(A) ** gamma
    return GammaReport(gamma=gamma, lhs=lhs, rhs_factor=rhs, ratio=lhs / rhs)


def radius_comparison(A: BlockMatrix, s: float, k_max: int = 6) -> RadiusComparison:
    """Gelfand estimates of the spectral radius of a self-adjoint A in the Jaffard and l2 norms."""
    if not is_selfadjoint(A):
        raise ParameterError("radius comparison needs a self-adjoint matrix")
    if not s > A.index_set.dim:
        raise ParameterError(f"s={s} must exceed the dimension {A.index_set.dim}")
    seq_j = gelfand_radius(A, "jaffard", k_max, s=s)
    seq_2 = gelfand_radius(A, "l2", k_max)
    r_j, r_2 = seq_j.extrapolated_radius, seq_2.extrapolated_radius
    return RadiusComparison(r_jaffard=r_j, r_l2=r_2, gap=r_j - r_2, jaffard_sequence=seq_j, l2_sequence=seq_2)
