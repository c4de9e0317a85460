"""Three-view joint embedding via regularized canonical correlation analysis.

The three views are pooled ground features, overhead features and centered
one-hot labels. Ground/overhead rows are L2-normalized, centered and
PCA-reduced before the joint fit; the label view is normalized and centered
only. The fit solves the symmetric-definite generalized eigenproblem

    [C_ij] w = lambda diag(C_11, C_22, C_33) w,     C_ij = X_i^T X_j,

with eta*I added to every diagonal block on both sides. Projection matrices
are the per-view row-blocks of the top eigenvectors, symmetrically
renormalized per view so that W_i^T (C_ii + eta*I) W_i = I on the directions
each view actually spans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .aggregation import aggregate
from .container import ContainerError, read_arrays, write_arrays
from .io import UrbanObjectRecord

VIEWS = ("ground", "overhead", "label")


@dataclass(frozen=True)
class CcaHyperparams:
    pca_frac: float = 0.1  # fraction of raw feature dims kept by PCA
    demb_frac: float = 0.2  # embedding size as a fraction of d1+d2+d3
    power: float = 6.0  # eigenvalue exponent used by retrieval scaling
    eta: float = 1e-4  # ridge added to the diagonal covariance blocks

    def __post_init__(self):
        if not 0.0 < self.pca_frac <= 1.0:
            raise ValueError(f"pca_frac must be in (0, 1], got {self.pca_frac}")
        if not 0.0 < self.demb_frac <= 1.0:
            raise ValueError(f"demb_frac must be in (0, 1], got {self.demb_frac}")
        if self.power < 0:
            raise ValueError(f"power must be >= 0, got {self.power}")
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")

    def as_array(self) -> np.ndarray:
        return np.array([self.pca_frac, self.demb_frac, self.power, self.eta])

    @staticmethod
    def from_array(arr) -> "CcaHyperparams":
        pca_frac, demb_frac, power, eta = (float(v) for v in arr)
        return CcaHyperparams(pca_frac, demb_frac, power, eta)


def kept_dims(fraction: float, total: int) -> int:
    """max(1, round(fraction * total)) with half-up rounding."""
    return max(1, math.floor(fraction * total + 0.5))


def l2_normalize_rows(features) -> np.ndarray:
    """Divide each row by its L2 norm; all-zero rows pass through unchanged."""
    arr = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    return arr / np.where(norms == 0.0, 1.0, norms)


def _fix_signs(columns: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.abs(columns).argmax(axis=0)
    signs = np.sign(columns[idx, np.arange(columns.shape[1])])
    signs[signs == 0] = 1.0
    return columns * signs


@dataclass
class PcaTransform:
    mean: np.ndarray  # (d_raw,)
    components: np.ndarray  # (d_raw, d_kept), orthonormal columns
    kept_fraction: float
    padded: bool = False  # True when d_kept exceeded the data rank

    @property
    def dim_in(self) -> int:
        return self.mean.shape[0]

    @property
    def dim_out(self) -> int:
        return self.components.shape[1]


def fit_pca(features: np.ndarray, kept_fraction: float) -> PcaTransform:
    """PCA of centered rows via SVD, keeping max(1, round(frac*d)) components.

    Component signs are made deterministic (largest-magnitude entry positive).
    If the requested dimension exceeds the data rank, the remaining columns
    come from the orthonormal complement the SVD provides and the transform
    is flagged ``padded``.
    """
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError(f"need at least 2 samples to fit a PCA, got shape {arr.shape}")
    d_kept = kept_dims(kept_fraction, arr.shape[1])
    mean = arr.mean(axis=0)
    centered = arr - mean
    _, singular, vt = np.linalg.svd(centered, full_matrices=True)
    tol = singular[0] * max(arr.shape) * np.finfo(np.float64).eps if singular.size else 0.0
    rank = int((singular > tol).sum())
    # contiguous copy: a transposed view would take a different BLAS path than
    # the same values reloaded from a checkpoint, breaking bit-reproducibility
    components = np.ascontiguousarray(_fix_signs(vt[:d_kept].T))
    return PcaTransform(mean, components, kept_fraction, padded=d_kept > rank)


def pca_project(transform: PcaTransform, features: np.ndarray) -> np.ndarray:
    arr = np.asarray(features, dtype=np.float64)
    if arr.shape[-1] != transform.dim_in:
        raise ValueError(f"feature dim {arr.shape[-1]} != PCA input dim {transform.dim_in}")
    return (arr - transform.mean) @ transform.components


@dataclass
class EmbeddingModel:
    pca_ground: PcaTransform
    pca_overhead: PcaTransform
    label_mean: np.ndarray  # (num_classes,) train mean of one-hot rows
    w_ground: np.ndarray  # (d1, d_emb)
    w_overhead: np.ndarray  # (d2, d_emb)
    w_label: np.ndarray  # (num_classes, d_emb)
    eigenvalues: np.ndarray  # (d_emb,) descending
    eigenvectors: np.ndarray  # (d1+d2+d3, d_emb) raw generalized eigenvectors
    hyperparams: CcaHyperparams

    @property
    def num_classes(self) -> int:
        return self.label_mean.shape[0]

    @property
    def dim_embedding(self) -> int:
        return self.eigenvalues.shape[0]


def build_cca_system(x1: np.ndarray, x2: np.ndarray, x3: np.ndarray, eta: float):
    """Assemble the (A, B) pencil from centered view matrices.

    A is the full cross-covariance block matrix, B its block diagonal;
    eta*I is added to each diagonal block of both. Both are symmetrized
    explicitly to suppress floating-point asymmetry.
    """
    views = [np.asarray(x, dtype=np.float64) for x in (x1, x2, x3)]
    n = views[0].shape[0]
    if any(v.shape[0] != n for v in views):
        raise ValueError("views disagree on sample count")
    dims = [v.shape[1] for v in views]
    offsets = np.concatenate([[0], np.cumsum(dims)])
    total = offsets[-1]
    a = np.empty((total, total))
    for i in range(3):
        for j in range(3):
            block = views[i].T @ views[j]
            if i == j:
                block = block + eta * np.eye(dims[i])
            a[offsets[i] : offsets[i + 1], offsets[j] : offsets[j + 1]] = block
    b = np.zeros_like(a)
    for i in range(3):
        sl = slice(offsets[i], offsets[i + 1])
        b[sl, sl] = a[sl, sl]
    return (a + a.T) / 2.0, (b + b.T) / 2.0


def solve_gev_descending(a: np.ndarray, b: np.ndarray):
    """All eigenpairs of the symmetric-definite pencil (a, b), descending."""
    eigvals, eigvecs = sla.eigh(a, b)
    return eigvals[::-1].copy(), eigvecs[:, ::-1].copy()


def _per_view_normalize(block: np.ndarray, c_tilde: np.ndarray) -> np.ndarray:
    """Symmetric renormalization so block^T c_tilde block = I where attainable.

    The Gram matrix can be rank-deficient (e.g. the centered one-hot view has
    rank K-1, so with d_emb > K-1 the label block cannot span d_emb
    directions). Deficient directions are left unscaled.
    """
    gram = block.T @ c_tilde @ block
    gram = (gram + gram.T) / 2.0
    vals, vecs = np.linalg.eigh(gram)
    cutoff = vals.max() * 1e-10 if vals.size else 0.0
    inv_sqrt = np.where(vals > cutoff, 1.0 / np.sqrt(np.where(vals > cutoff, vals, 1.0)), 1.0)
    return block @ (vecs * inv_sqrt) @ vecs.T


def fit_embedding(
    ground: np.ndarray,
    overhead: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    hyperparams: CcaHyperparams = CcaHyperparams(),
) -> EmbeddingModel:
    """Fit the three-view embedding on paired train data.

    ``ground`` holds one pooled ground-view descriptor per object,
    ``overhead`` the overhead descriptors, ``labels`` integer class indices.
    All objects must carry both modalities; route incomplete objects away
    before calling.
    """
    ground = np.asarray(ground, dtype=np.float64)
    overhead = np.asarray(overhead, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = ground.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 paired samples, got {n}")
    if overhead.shape[0] != n or labels.shape[0] != n:
        raise ValueError("views disagree on sample count")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError("label out of range")

    pca_ground = fit_pca(l2_normalize_rows(ground), hyperparams.pca_frac)
    pca_overhead = fit_pca(l2_normalize_rows(overhead), hyperparams.pca_frac)
    x1 = pca_project(pca_ground, l2_normalize_rows(ground))
    x2 = pca_project(pca_overhead, l2_normalize_rows(overhead))

    onehot = np.eye(num_classes)[labels]
    label_mean = onehot.mean(axis=0)
    x3 = onehot - label_mean

    dims = [x1.shape[1], x2.shape[1], num_classes]
    d_emb = min(kept_dims(hyperparams.demb_frac, sum(dims)), sum(dims))
    a, b = build_cca_system(x1, x2, x3, hyperparams.eta)
    eigvals, eigvecs = solve_gev_descending(a, b)
    eigvals = eigvals[:d_emb]
    eigvecs = _fix_signs(eigvecs[:, :d_emb])

    offsets = np.concatenate([[0], np.cumsum(dims)])
    blocks = [eigvecs[offsets[i] : offsets[i + 1]] for i in range(3)]
    normalized = [
        _per_view_normalize(blocks[i], b[offsets[i] : offsets[i + 1], offsets[i] : offsets[i + 1]])
        for i in range(3)
    ]
    return EmbeddingModel(
        pca_ground=pca_ground,
        pca_overhead=pca_overhead,
        label_mean=label_mean,
        w_ground=normalized[0],
        w_overhead=normalized[1],
        w_label=normalized[2],
        eigenvalues=eigvals,
        eigenvectors=eigvecs,
        hyperparams=hyperparams,
    )


def training_views(records: list[UrbanObjectRecord], pooling: str = "avg"):
    """Per-object (ground, overhead, labels, ids) arrays from records that
    carry both modalities; view-less records are dropped."""
    usable = [rec for rec in records if rec.n_views > 0]
    if not usable:
        raise ValueError("no records with both modalities present")
    ground = np.asarray([aggregate(rec.ground_views, pooling).values for rec in usable])
    overhead = np.asarray([rec.overhead for rec in usable], dtype=np.float64)
    labels = np.asarray([rec.label for rec in usable], dtype=np.int64)
    return ground, overhead, labels, [rec.object_id for rec in usable]


def project(model: EmbeddingModel, view: str, features: np.ndarray) -> np.ndarray:
    """Project raw view features (M x d_raw, or M x K one-hot) into the
    embedding space using train-time statistics."""
    arr = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if view == "ground":
        return pca_project(model.pca_ground, l2_normalize_rows(arr)) @ model.w_ground
    if view == "overhead":
        return pca_project(model.pca_overhead, l2_normalize_rows(arr)) @ model.w_overhead
    if view == "label":
        if arr.shape[1] != model.num_classes:
            raise ValueError(f"label view dim {arr.shape[1]} != {model.num_classes}")
        return (l2_normalize_rows(arr) - model.label_mean) @ model.w_label
    raise ValueError(f"unknown view {view!r}; expected one of {VIEWS}")


def save_embedding(model: EmbeddingModel, path) -> None:
    write_arrays(
        path,
        {
            "hyperparams": model.hyperparams.as_array(),
            "pca_ground_mean": model.pca_ground.mean,
            "pca_ground_components": model.pca_ground.components,
            "pca_ground_padded": np.array([float(model.pca_ground.padded)]),
            "pca_overhead_mean": model.pca_overhead.mean,
            "pca_overhead_components": model.pca_overhead.components,
            "pca_overhead_padded": np.array([float(model.pca_overhead.padded)]),
            "label_mean": model.label_mean,
            "w_ground": model.w_ground,
            "w_overhead": model.w_overhead,
            "w_label": model.w_label,
            "eigenvalues": model.eigenvalues,
            "eigenvectors": model.eigenvectors,
        },
    )


def load_embedding(path) -> EmbeddingModel:
    arrays = read_arrays(path)
    try:
        hyper = CcaHyperparams.from_array(arrays["hyperparams"])
        pca_ground = PcaTransform(
            arrays["pca_ground_mean"],
            arrays["pca_ground_components"],
            hyper.pca_frac,
            bool(arrays["pca_ground_padded"][0]),
        )
        pca_overhead = PcaTransform(
            arrays["pca_overhead_mean"],
            arrays["pca_overhead_components"],
            hyper.pca_frac,
            bool(arrays["pca_overhead_padded"][0]),
        )
        model = EmbeddingModel(
            pca_ground=pca_ground,
            pca_overhead=pca_overhead,
            label_mean=arrays["label_mean"],
            w_ground=arrays["w_ground"],
            w_overhead=arrays["w_overhead"],
            w_label=arrays["w_label"],
            eigenvalues=arrays["eigenvalues"],
            eigenvectors=arrays["eigenvectors"],
            hyperparams=hyper,
        )
    except KeyError as exc:
        raise ContainerError(f"{path}: not an embedding checkpoint (missing {exc})") from exc
    return model
