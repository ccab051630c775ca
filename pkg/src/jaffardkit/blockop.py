"""Operator-valued matrices over a point set, truncated to finite index set and block size.

A :class:`BlockMatrix` stores all N^2 blocks densely as an ``(N, N, m, m)`` complex
array; block ``(k, l)`` is the stand-in for the operator entry ``A_{k,l}``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, ParameterError, ShapeError
from .pointset import PointSet, load_pointset, pointset_from_json, poly_weight, save_pointset

__all__ = [
    "BlockMatrix",
    "BlockVector",
    "WeightSpec",
    "multiply",
    "involve",
    "apply",
    "vector_pnorm",
    "block_norm",
    "block_norms",
    "operator_norm_l2",
    "column_pnorm_bound",
    "entry_sup",
    "save_matrix",
    "load_matrix",
]

POWER_SEED = 20240611
COLUMN_RESTARTS = 20
MIN_POWER_CAP = 64
COLUMN_ASCENT_STEPS = 500
JSON_FALLBACK_LIMIT = 64


def _as_blocks(arr, ndim):
    a = np.array(arr, dtype=complex, copy=True)
    if a.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-dimensional block array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ParameterError("blocks must have finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BlockMatrix:
    index_set: PointSet
    blocks: np.ndarray

    def __post_init__(self):
        b = _as_blocks(self.blocks, 4)
        n = len(self.index_set)
        if b.shape[0] != n or b.shape[1] != n or b.shape[2] != b.shape[3]:
            raise ShapeError(f"blocks of shape {b.shape} do not fit {n} points with square blocks")
        object.__setattr__(self, "blocks", b)

    @property
    def block_dim(self) -> int:
        return self.blocks.shape[2]

    @property
    def size(self) -> int:
        return self.blocks.shape[0]

    @classmethod
    def identity(cls, X: PointSet, m: int) -> "BlockMatrix":
        b = np.zeros((len(X), len(X), m, m), dtype=complex)
        b[np.arange(len(X)), np.arange(len(X))] = np.eye(m)
        return cls(X, b)

    @classmethod
    def zeros(cls, X: PointSet, m: int) -> "BlockMatrix":
        return cls(X, np.zeros((len(X), len(X), m, m), dtype=complex))

    @classmethod
    def from_dense(cls, X: PointSet, m: int, dense) -> "BlockMatrix":
        n = len(X)
        dense = np.asarray(dense, dtype=complex)
        if dense.shape != (n * m, n * m):
            raise ShapeError(f"dense matrix must be {(n * m, n * m)}, got {dense.shape}")
        return cls(X, dense.reshape(n, m, n, m).transpose(0, 2, 1, 3))

    def to_dense(self) -> np.ndarray:
        n, m = self.size, self.block_dim
        return self.blocks.transpose(0, 2, 1, 3).reshape(n * m, n * m)

    def scaled(self, c) -> "BlockMatrix":
        return BlockMatrix(self.index_set, c * self.blocks)

    def __add__(self, other):
        _check_compatible(self, other)
        return BlockMatrix(self.index_set, self.blocks + other.blocks)

    def __sub__(self, other):
        _check_compatible(self, other)
        return BlockMatrix(self.index_set, self.blocks - other.blocks)

    def __matmul__(self, other):
        if isinstance(other, BlockVector):
            return apply(self, other)
        return multiply(self, other)


@dataclass(frozen=True, eq=False)
class BlockVector:
    index_set: PointSet
    blocks: np.ndarray

    def __post_init__(self):
        b = _as_blocks(self.blocks, 2)
        if b.shape[0] != len(self.index_set):
            raise ShapeError(f"vector has {b.shape[0]} blocks but the index set has {len(self.index_set)} points")
        object.__setattr__(self, "blocks", b)

    @property
    def block_dim(self) -> int:
        return self.blocks.shape[1]

    def to_dense(self) -> np.ndarray:
        return self.blocks.reshape(-1)

    def __add__(self, other):
        if other.blocks.shape != self.blocks.shape:
            raise ShapeError("vector shapes differ")
        return BlockVector(self.index_set, self.blocks + other.blocks)

    def __rmul__(self, c):
        return BlockVector(self.index_set, c * self.blocks)


@dataclass(frozen=True)
class WeightSpec:
    """Weight on the index set: ``polynomial``/``moderate`` mean ``(1+|x|)^exponent``, ``unit`` is 1."""

    kind: str = "unit"
    exponent: float = 0.0

    def __post_init__(self):
        if self.kind not in ("polynomial", "moderate", "unit"):
            raise ParameterError(f"unknown weight kind {self.kind!r}")
        if self.exponent < 0:
            raise ParameterError("weight exponent must be nonnegative")

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "unit":
            return np.ones(len(pts))
        return poly_weight(np.linalg.norm(pts, axis=1), self.exponent)


def _check_compatible(A, B):
    if A.index_set != B.index_set:
        raise ShapeError("operands live on different index sets")
    if A.block_dim != B.block_dim:
        raise ShapeError(f"block dimensions differ: {A.block_dim} vs {B.block_dim}")


def multiply(A: BlockMatrix, B: BlockMatrix) -> BlockMatrix:
    """Block product ``[AB]_{k,l} = sum_n A_{k,n} B_{n,l}``, summed in ascending n."""
    _check_compatible(A, B)
    N, m = A.size, A.block_dim
    dtype = np.result_type(A.blocks, B.blocks)
    # rows (k, i), columns (l, p); step n adds the rank-m term A[:, n] B[n, :]
    out = np.zeros((N * m, N * m), dtype=dtype)
    for n in range(N):
        out += A.blocks[:, n].reshape(N * m, m) @ B.blocks[n].transpose(1, 0, 2).reshape(m, N * m)
    return BlockMatrix(A.index_set, out.reshape(N, m, N, m).transpose(0, 2, 1, 3))


def involve(A: BlockMatrix) -> BlockMatrix:
    """Blockwise adjoint composed with index transposition."""
    return BlockMatrix(A.index_set, np.conj(A.blocks.transpose(1, 0, 3, 2)))


def apply(A: BlockMatrix, g: BlockVector) -> BlockVector:
    if A.index_set != g.index_set or A.block_dim != g.block_dim:
        raise ShapeError("matrix and vector shapes are incompatible")
    out = np.zeros_like(g.blocks)
    for l in range(A.size):
        out += np.matmul(A.blocks[:, l], g.blocks[l])
    return BlockVector(A.index_set, out)


def vector_pnorm(g: BlockVector, p: float, w: WeightSpec | None = None) -> float:
    """Weighted (quasi-)norm ``(sum_k |g_k|^p w(k)^p)^(1/p)``; ``p = inf`` gives the weighted sup."""
    if not p > 0:
        raise ParameterError(f"p must be positive, got {p}")
    w = w or WeightSpec()
    vals = np.linalg.norm(g.blocks, axis=1) * w(g.index_set.points)
    if math.isinf(p):
        return float(vals.max())
    return float(np.sum(vals**p) ** (1.0 / p))


def block_norm(M) -> float:
    """Spectral norm of a single block."""
    return float(np.linalg.norm(np.asarray(M), 2))


def block_norms(A: BlockMatrix) -> np.ndarray:
    """Spectral norms of all blocks, shape (N, N)."""
    return np.linalg.norm(A.blocks, ord=2, axis=(-2, -1))


def operator_norm_l2(A: BlockMatrix, tol: float = 1e-8, max_iter: int | None = None) -> float:
    """Largest singular value of the flattened matrix by power iteration on ``A* A``.

    Each step applies ``H = (A* A)^Q`` (renormalized) to the iterate and then squares H,
    so ``Q`` doubles per step. The Rayleigh quotient of ``A* A`` is a lower bound for
    the top eigenvalue and ``(scale * trace H)^(1/Q)`` an upper bound; iteration stops
    when they agree to ``tol`` in the singular value, or when the eigen-residual is
    below ``tol``. The start vector is seeded; the cap defaults to ``max(10 N m, 64)``.
    """
    F = A.to_dense()
    dim = F.shape[0]
    cap = max_iter if max_iter is not None else max(10 * dim, MIN_POWER_CAP)
    if not np.any(F):
        return 0.0
    # entry scaling keeps the Gram matrix in range for huge or tiny inputs
    amax = float(np.max(np.abs(F)))
    F = F / amax
    G = F.conj().T @ F
    G = 0.5 * (G + G.conj().T)
    scale = np.linalg.norm(G)
    H = G / scale
    log_scale = math.log(scale)
    power = 1
    rng = np.random.default_rng(POWER_SEED)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    residual = math.inf
    for _ in range(cap):
        w = H @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            w = G @ v
            nw = np.linalg.norm(w)
        v = w / nw
        Gv = G @ v
        lam = float(np.real(np.vdot(v, Gv)))
        if lam <= 0.0:
            lam = 0.0
        else:
            residual = float(np.linalg.norm(Gv - lam * v)) / lam
            upper = math.exp((log_scale + math.log(float(np.real(np.trace(H))))) / power)
            if residual <= tol or upper <= lam * (1 + tol) ** 2:
                return amax * math.sqrt(lam)
        H = H @ H
        nh = np.linalg.norm(H)
        H /= nh
        log_scale = 2 * log_scale + math.log(nh)
        power *= 2
    raise ConvergenceError(
        f"power iteration did not converge in {cap} steps (residual {residual:.3e})",
        last_iterate=v,
        last_residual=residual,
    )


def column_pnorm_bound(A: BlockMatrix, p: float) -> float:
    """``sup_l sup_{|f|=1} (sum_k |A_{k,l} f|^p)^(1/p)``.

    Exact for ``p = 2`` (top eigenvalue of the column Gram block); for other p the
    inner supremum comes from fixed-point gradient ascent on the unit sphere with
    ``COLUMN_RESTARTS`` seeded starts, so the value is a lower bound.
    """
    if not (1 <= p < math.inf):
        raise ParameterError(f"p must satisfy 1 <= p < inf, got {p}")
    m = A.block_dim
    if p == 2:
        gram = np.einsum("klji,kljn->lin", A.blocks.conj(), A.blocks)
        top = np.linalg.eigvalsh(gram)[:, -1]
        return float(math.sqrt(max(float(top.max()), 0.0)))
    rng = np.random.default_rng(POWER_SEED)
    best = 0.0
    for l in range(A.size):
        col = A.blocks[:, l]
        for _ in range(COLUMN_RESTARTS):
            f = rng.standard_normal(m) + 1j * rng.standard_normal(m)
            f /= np.linalg.norm(f)
            val = _column_objective(col, f, p)
            for _ in range(COLUMN_ASCENT_STEPS):
                # F(f) = sum |B_k f|^p is convex, so stepping to the normalized gradient ascends
                images = col @ f
                mags = np.maximum(np.linalg.norm(images, axis=1), 1e-300)
                grad = np.einsum("kji,kj->i", col.conj(), images * (mags ** (p - 2))[:, None])
                ng = np.linalg.norm(grad)
                if ng == 0.0:
                    break
                f_new = grad / ng
                val_new = _column_objective(col, f_new, p)
                if val_new <= val * (1 + 1e-14):
                    val = max(val, val_new)
                    break
                f, val = f_new, val_new
            best = max(best, val)
    return float(best ** (1.0 / p))


def _column_objective(col, f, p):
    return float(np.sum(np.linalg.norm(col @ f, axis=1) ** p))


def entry_sup(A: BlockMatrix) -> float:
    return float(block_norms(A).max())


def _manifest_pointset(manifest, base: Path):
    ref = manifest["pointset"]
    if isinstance(ref, dict):
        return pointset_from_json(ref)
    return load_pointset(base / ref)


def save_matrix(A: BlockMatrix, manifest_path, fmt: str = "binary") -> None:
    """Write a matrix manifest plus its point set; ``fmt='json'`` embeds the blocks (small matrices only)."""
    manifest_path = Path(manifest_path)
    stem = manifest_path.stem
    base = manifest_path.parent
    ps_name = f"{stem}.pointset.json"
    save_pointset(A.index_set, base / ps_name)
    doc = {"dim": A.index_set.dim, "block_dim": A.block_dim, "pointset": ps_name}
    if fmt == "json":
        if A.size * A.block_dim > JSON_FALLBACK_LIMIT:
            raise ParameterError(f"JSON block layout is limited to N*m <= {JSON_FALLBACK_LIMIT}")
        doc["layout"] = "json-nested-complex-pairs"
        doc["blocks"] = np.stack([A.blocks.real, A.blocks.imag], axis=-1).tolist()
    elif fmt == "binary":
        data_name = f"{stem}.blocks.bin"
        (base / data_name).write_bytes(np.ascontiguousarray(A.blocks, dtype="<c16").tobytes())
        doc["layout"] = "row-major-complex-interleaved"
        doc["data"] = data_name
    else:
        raise ParameterError(f"unknown matrix format {fmt!r}")
    manifest_path.write_text(json.dumps(doc))


def load_matrix(manifest_path) -> BlockMatrix:
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    X = _manifest_pointset(doc, manifest_path.parent)
    if doc.get("dim") != X.dim:
        raise ShapeError(f"manifest dim {doc.get('dim')} does not match point set dim {X.dim}")
    n, m = len(X), int(doc["block_dim"])
    if "blocks" in doc:
        arr = np.asarray(doc["blocks"], dtype=float)
        if arr.shape != (n, n, m, m, 2):
            raise ShapeError(f"JSON blocks have shape {arr.shape}, expected {(n, n, m, m, 2)}")
        return BlockMatrix(X, arr[..., 0] + 1j * arr[..., 1])
    if doc.get("layout") != "row-major-complex-interleaved":
        raise ParameterError(f"unsupported layout {doc.get('layout')!r}")
    raw = np.frombuffer((manifest_path.parent / doc["data"]).read_bytes(), dtype="<c16")
    if raw.size != n * n * m * m:
        raise ShapeError(f"data blob holds {raw.size} complex values, expected {n * n * m * m}")
    return BlockMatrix(X, raw.reshape(n, n, m, m))
