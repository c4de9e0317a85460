"""Cross-modal nearest-neighbor retrieval in the joint embedding space.

An overhead-only query is projected into the embedding, scaled by the
eigenvalue powers diag(lambda^p), and compared by cosine similarity against
the scaled projections of the training ground-view descriptors. The nearest
neighbors' pooled ground features then stand in for the missing modality in
the multimodal head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingModel, project
from .fusion import FusionModel, predict


@dataclass(frozen=True)
class Neighbor:
    object_id: str
    label: int
    similarity: float
    train_index: int


@dataclass(frozen=True)
class QueryResult:
    neighbors: tuple[Neighbor, ...]
    zero_query: bool  # True when the projected query had zero norm


@dataclass
class RetrievalIndex:
    keys: np.ndarray  # (n_train, d_emb) scaled ground projections
    key_norms: np.ndarray  # (n_train,)
    object_ids: tuple[str, ...]
    labels: np.ndarray  # (n_train,)
    ground_features: np.ndarray  # (n_train, dim_ground) pooled raw features
    power: float

    def __len__(self) -> int:
        return self.keys.shape[0]


def eigenvalue_scaling(model: EmbeddingModel, power: float) -> np.ndarray:
    """Diagonal of diag(lambda^p) for the retained eigenvalues."""
    if power < 0:
        raise ValueError(f"power must be >= 0, got {power}")
    return np.power(model.eigenvalues, power)


def build_index(
    model: EmbeddingModel,
    ground_features: np.ndarray,
    labels: np.ndarray,
    object_ids=None,
    power: float | None = None,
) -> RetrievalIndex:
    """Index the training set's pooled ground features for cosine search."""
    ground_features = np.atleast_2d(np.asarray(ground_features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = ground_features.shape[0]
    if n == 0:
        raise ValueError("cannot build an index from an empty training set")
    if labels.shape[0] != n:
        raise ValueError("labels and features disagree on length")
    if object_ids is None:
        object_ids = tuple(str(i) for i in range(n))
    else:
        object_ids = tuple(object_ids)
        if len(object_ids) != n:
            raise ValueError("object_ids and features disagree on length")
    if power is None:
        power = model.hyperparams.power
    keys = project(model, "ground", ground_features) * eigenvalue_scaling(model, power)
    return RetrievalIndex(
        keys=keys,
        key_norms=np.linalg.norm(keys, axis=1),
        object_ids=object_ids,
        labels=labels,
        ground_features=ground_features,
        power=float(power),
    )


def _similarities(index: RetrievalIndex, model: EmbeddingModel, overhead_feature) -> tuple[np.ndarray, bool]:
    query = project(model, "overhead", np.asarray(overhead_feature, dtype=np.float64))[0]
    query = query * eigenvalue_scaling(model, index.power)
    qnorm = np.linalg.norm(query)
    if qnorm == 0.0:
        return np.zeros(len(index)), True
    denom = index.key_norms * qnorm
    sims = np.where(denom == 0.0, 0.0, (index.keys @ query) / np.where(denom == 0.0, 1.0, denom))
    return sims, False


def query(index: RetrievalIndex, model: EmbeddingModel, overhead_feature, k: int = 1) -> QueryResult:
    """Top-k training neighbors by cosine similarity, ties broken by lowest
    training index. k is capped at the index size."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    sims, zero_query = _similarities(index, model, overhead_feature)
    order = np.argsort(-sims, kind="stable")[: min(k, len(index))]
    neighbors = tuple(
        Neighbor(index.object_ids[i], int(index.labels[i]), float(sims[i]), int(i)) for i in order
    )
    return QueryResult(neighbors, zero_query)


def predict_missing(
    fusion: FusionModel,
    model: EmbeddingModel,
    index: RetrievalIndex,
    overhead_feature,
    k: int = 1,
):
    """Complete a ground-less prediction through retrieval.

    The pooled ground features of the k nearest training objects (their mean
    for k > 1) substitute for the missing modality; the multimodal head then
    predicts from [substitute, overhead].
    """
    if fusion.mode != "multimodal":
        raise ValueError(f"predict_missing needs a multimodal head, got {fusion.mode!r}")
    result = query(index, model, overhead_feature, k)
    picks = np.array([n.train_index for n in result.neighbors])
    substitute = index.ground_features[picks].mean(axis=0)
    label, probs = predict(fusion, overhead=overhead_feature, ground=substitute)
    return label, probs, tuple(n.object_id for n in result.neighbors)


def label_coherence_curve(
    index: RetrievalIndex,
    model: EmbeddingModel,
    overhead_features: np.ndarray,
    labels: np.ndarray,
    k_max: int,
) -> np.ndarray:
    """hit_rate[k-1] = fraction of queries with a correct-class neighbor in
    the top k; non-decreasing in k by construction. k_max caps at the index."""
    overhead_features = np.atleast_2d(np.asarray(overhead_features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if overhead_features.shape[0] != labels.shape[0]:
        raise ValueError("features and labels disagree on length")
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    k_max = min(k_max, len(index))
    hits = np.zeros((labels.shape[0], k_max), dtype=bool)
    for row, (feat, truth) in enumerate(zip(overhead_features, labels)):
        sims, _ = _similarities(index, model, feat)
        order = np.argsort(-sims, kind="stable")[:k_max]
        correct = index.labels[order] == truth
        hits[row] = np.maximum.accumulate(correct)
    return hits.mean(axis=0)
