"""Inverses of decaying block matrices and the decay of those inverses."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .blockop import BlockMatrix, block_norms, multiply, operator_norm_l2
from .errors import ContractionError, ConvergenceError, FitError, NumericError, ParameterError, SingularityError
from .jaffard import DecayEnvelope, decay_fit, hermitize, random_jaffard
from .pointset import PointSet

__all__ = [
    "InverseReport",
    "neumann_inverse",
    "direct_inverse",
    "inverse_residual",
    "inverse_closedness_experiment",
    "write_decay_csv",
]

logger = logging.getLogger(__name__)

RESIDUAL_CERTIFICATE = 1e-6
PIVOT_THRESHOLD = 1e-12


def inverse_residual(A: BlockMatrix, A_inv: BlockMatrix) -> float:
    """``|A A^-1 - I|`` in the l2 operator norm."""
    return operator_norm_l2(multiply(A, A_inv) - BlockMatrix.identity(A.index_set, A.block_dim))


def _certify(A, A_inv, method):
    residual = inverse_residual(A, A_inv)
    if not residual <= RESIDUAL_CERTIFICATE:
        raise NumericError(
            f"{method} inverse fails the residual certificate: {residual:.3e}",
            diagnostics={"residual": residual},
        )
    return residual


def neumann_inverse(A: BlockMatrix, tol: float = 1e-12, n_max: int = 500, full_output: bool = False):
    """``sum_n (I - A)^n`` up to the first term with l2 norm ``<= tol``.

    With ``full_output`` returns ``(inverse, info)`` where info has ``terms`` and ``residual``.
    """
    eye = BlockMatrix.identity(A.index_set, A.block_dim)
    T = eye - A
    contraction = operator_norm_l2(T)
    if not contraction < 1:
        raise ContractionError(f"|I - A| = {contraction:.6g} is not below 1")
    total = eye
    term = eye
    n = 0
    if contraction > 0:
        for n in range(1, n_max + 1):
            term = multiply(term, T)
            total = total + term
            last = operator_norm_l2(term)
            if last <= tol:
                break
        else:
            raise ConvergenceError(
                f"Neumann series did not reach tol={tol} in {n_max} terms",
                last_iterate=total,
                last_residual=inverse_residual(A, total),
            )
    residual = _certify(A, total, "Neumann")
    logger.debug("Neumann series: %d terms, residual %.3e", n, residual)
    if full_output:
        return total, {"terms": n, "residual": residual}
    return total


def direct_inverse(A: BlockMatrix, full_output: bool = False):
    """Dense LU with partial pivoting on the flattened matrix, re-blocked."""
    F = A.to_dense()
    with warnings.catch_warnings():
        # singular input is reported below with its pivots
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(F, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.max() == 0.0 or pivots.min() < PIVOT_THRESHOLD * pivots.max():
        raise SingularityError(
            f"matrix is singular to tolerance (pivot ratio {pivots.min() / max(pivots.max(), 1e-300):.3e})",
            pivots=pivots,
        )
    inv = scipy.linalg.lu_solve((lu, piv), np.eye(F.shape[0], dtype=complex))
    A_inv = BlockMatrix.from_dense(A.index_set, A.block_dim, inv)
    residual = _certify(A, A_inv, "direct")
    if full_output:
        return A_inv, {"residual": residual, "pivot_ratio": float(pivots.min() / pivots.max())}
    return A_inv


@dataclass
class InverseReport:
    method: str
    residual: float
    inverse_envelope: DecayEnvelope | None
    input_envelope: DecayEnvelope | None
    condition_estimate: float
    epsilon: float = 0.0
    neumann_residual: float | None = None
    method_agreement: float | None = None
    notes: list = field(default_factory=list)
    matrix: BlockMatrix | None = field(default=None, repr=False)
    inverse: BlockMatrix | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "residual": self.residual,
            "neumann_residual": self.neumann_residual,
            "method_agreement": self.method_agreement,
            "epsilon": self.epsilon,
            "condition_estimate": self.condition_estimate,
            "input_envelope": self.input_envelope.to_json() if self.input_envelope else None,
            "inverse_envelope": self.inverse_envelope.to_json() if self.inverse_envelope else None,
            "notes": list(self.notes),
        }


def _fit_or_note(M, margin, label, notes):
    try:
        return decay_fit(M, margin)
    except FitError as exc:
        notes.append(f"{label}: {exc}")
        return None


def inverse_closedness_experiment(
    X: PointSet,
    m: int,
    s: float,
    perturbation: float = 0.5,
    seed: int = 0,
    interior_margin: float | None = None,
) -> InverseReport:
    """Invert ``A = I + eps B`` with B a hermitized random decaying matrix and ``|eps B|_l2 = perturbation``.

    Both inversion routes run and are cross-checked; the decay of A and of its
    inverse is fitted on interior pairs.
    """
    if not 0 <= perturbation <= 0.5:
        raise ParameterError(f"perturbation must lie in [0, 0.5], got {perturbation}")
    if interior_margin is None:
        interior_margin = X.extent / 8
    eye = BlockMatrix.identity(X, m)
    B = hermitize(random_jaffard(X, m, s, 1.0, seed))
    eps = perturbation / operator_norm_l2(B) if perturbation > 0 else 0.0
    A = eye + B.scaled(eps)
    notes = []
    if eps == 0.0:
        notes.append("identity case: the inverse is the identity")
    A_direct, info_d = direct_inverse(A, full_output=True)
    A_neumann, info_n = neumann_inverse(A, full_output=True)
    agreement = operator_norm_l2(A_neumann - A_direct)
    return InverseReport(
        method="direct",
        residual=info_d["residual"],
        inverse_envelope=_fit_or_note(A_direct, interior_margin, "inverse fit", notes),
        input_envelope=_fit_or_note(A, interior_margin, "input fit", notes),
        condition_estimate=operator_norm_l2(A) * operator_norm_l2(A_direct),
        epsilon=eps,
        neumann_residual=info_n["residual"],
        method_agreement=agreement,
        notes=notes,
        matrix=A,
        inverse=A_direct,
    )


def write_decay_csv(report: InverseReport, path) -> None:
    """Rows ``(matrix, distance, block_norm)`` for the input matrix and its inverse."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["matrix", "distance", "block_norm"])
        for label, M in (("A", report.matrix), ("A_inv", report.inverse)):
            if M is None:
                continue
            dist = M.index_set.distances
            norms = block_norms(M)
            for k in range(M.size):
                for l in range(M.size):
                    writer.writerow([label, repr(float(dist[k, l])), repr(float(norms[k, l]))])
