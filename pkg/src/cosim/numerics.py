"""Dense numerics: cosine distance and a small PCA.

The eigensolver is a cyclic Jacobi iteration, plenty for the covariance
sizes seen here (a few hundred at most) and free of platform-dependent
LAPACK ordering quirks.  PCA components are rows, eigenvalues descending,
signs canonicalized so results are unique.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptyInput, FormatError, NonFiniteValue, ShapeMismatch, ZeroVector

log = logging.getLogger("cosim.numerics")

CSPC_MAGIC = b"CSPC"

PCA_DEFAULT_DIM = 64

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def cosine_distance(u, v) -> float:
    """1 - cos(u, v); in [0, 2].  Zero-norm input raises ZeroVector."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape[0] != v.shape[0]:
        raise ShapeMismatch(f"length mismatch {u.shape[0]} vs {v.shape[0]}")
    if u.shape[0] == 0:
        raise ShapeMismatch("empty vectors")
    nu = float(np.sqrt(np.sum(u * u)))
    nv = float(np.sqrt(np.sum(v * v)))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine distance undefined for zero-norm vector")
    return 1.0 - float(np.sum(u * v)) / (nu * nv)


def jacobi_eigh(a, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    a : (n, n) array_like, symmetric
    tol : stop once the off-diagonal Frobenius norm drops below this
    max_sweeps : hard cap on full (p, q) sweeps

    Returns
    -------
    w : (n,) eigenvalues, unsorted (diagonal order)
    v : (n, n) orthonormal eigenvectors as columns, a @ v[:, i] = w[i] v[:, i]
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"need a square matrix, got shape {a.shape}")
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off2 = np.sum(np.square(a)) - np.sum(np.square(np.diag(a)))
        if off2 <= tol * tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                # negligible relative to the diagonal: zero it and move on
                if abs(apq) <= 1e-30 * (abs(a[p, p]) + abs(a[q, q]) + 1e-300):
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                sign = 1.0 if theta >= 0.0 else -1.0
                if abs(theta) > 1e10:
                    t = 1.0 / (2.0 * theta)
                else:
                    t = sign / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    return np.diag(a).copy(), v


@dataclass
class PcaModel:
    """Mean vector plus the top ``l`` principal axes (rows of components)."""

    mean: np.ndarray          # (d,)
    components: np.ndarray    # (l, d), orthonormal rows
    eigenvalues: np.ndarray   # (l,), descending, >= 0

    @property
    def input_dim(self) -> int:
        return self.components.shape[1]

    @property
    def output_dim(self) -> int:
        return self.components.shape[0]


def pca_fit(data, l: int) -> PcaModel:
    """Fit an ``l``-component PCA on ``data`` rows.

    The covariance uses the n-1 divisor.  Eigenvalues sort descending with
    ties broken by original axis order; each component's sign is fixed so
    its largest-magnitude entry is positive.

    Requires 2 <= n and 1 <= l <= min(n - 1, d).
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ShapeMismatch(f"need a 2-D data matrix, got shape {data.shape}")
    n, d = data.shape
    if n < 2:
        raise EmptyInput(f"PCA needs at least 2 rows, got {n}")
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue("PCA input contains non-finite values")
    if not 1 <= l <= min(n - 1, d):
        raise DimMismatch(f"l={l} outside [1, min(n-1, d)] = [1, {min(n - 1, d)}]")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (n - 1)
    w, v = jacobi_eigh(cov)
    order = np.argsort(-w, kind="stable")[:l]
    eigenvalues = np.maximum(w[order], 0.0)
    components = v[:, order].T.copy()
    for i in range(components.shape[0]):
        pivot = int(np.argmax(np.abs(components[i])))
        if components[i, pivot] < 0.0:
            components[i] = -components[i]
    return PcaModel(mean=mean, components=components, eigenvalues=eigenvalues)


def pca_transform(model: PcaModel, x) -> np.ndarray:
    """Project a vector (d,) or batch (n, d) onto the principal axes."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.input_dim:
        raise DimMismatch(f"input dim {x.shape[1]}, model expects {model.input_dim}")
    out = (x - model.mean) @ model.components.T
    return out[0] if single else out


def clamp_pca_dim(l: int, n: int, d: int) -> int:
    """Clamp a requested component count to the feasible range, warning."""
    feasible = min(n - 1, d)
    if l > feasible:
        log.warning("requested %d PCA components, clamping to %d", l, feasible)
        return feasible
    return l


def save_pca(model: PcaModel, path) -> None:
    """CSPC layout: magic, u32 d, u32 l, then mean/components/eigenvalues f64."""
    d, l = model.input_dim, model.output_dim
    with open(path, "wb") as fh:
        fh.write(CSPC_MAGIC)
        fh.write(struct.pack("<II", d, l))
        fh.write(model.mean.astype("<f8", copy=False).tobytes())
        fh.write(np.ascontiguousarray(model.components, dtype="<f8").tobytes())
        fh.write(model.eigenvalues.astype("<f8", copy=False).tobytes())


def load_pca(path) -> PcaModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CSPC_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {CSPC_MAGIC!r}")
    d, l = struct.unpack_from("<II", blob, 4)
    expected = 12 + 8 * (d + l * d + l)
    if len(blob) != expected:
        raise DimMismatch(f"CSPC payload is {len(blob)} bytes, expected {expected}")
    offset = 12
    mean = np.frombuffer(blob, dtype="<f8", count=d, offset=offset).copy()
    offset += 8 * d
    components = (
        np.frombuffer(blob, dtype="<f8", count=l * d, offset=offset).reshape(l, d).copy()
    )
    offset += 8 * l * d
    eigenvalues = np.frombuffer(blob, dtype="<f8", count=l, offset=offset).copy()
    return PcaModel(mean=mean, components=components, eigenvalues=eigenvalues)
