"""Independent brute-force reference implementations used only by tests.

These deliberately avoid the production code paths: plain Python loops where
feasible, and numpy-only linear algebra routes that differ from the scipy
ones the package uses.
"""

from __future__ import annotations

import math

import numpy as np


def two_loop_aggregate(features, pooling: str):
    """Elementwise pooling with explicit loops."""
    n = len(features)
    dim = len(features[0])
    out = [0.0] * dim
    for j in range(dim):
        if pooling == "avg":
            acc = 0.0
            for i in range(n):
                acc += float(features[i][j])
            out[j] = acc / n
        else:
            best = float(features[0][j])
            for i in range(1, n):
                best = max(best, float(features[i][j]))
            out[j] = best
    return np.array(out)


def two_loop_scores(weights, bias, x):
    """Linear scores via explicit dot products."""
    k, d = len(weights), len(x)
    out = [0.0] * k
    for c in range(k):
        acc = float(bias[c])
        for j in range(d):
            acc += float(weights[c][j]) * float(x[j])
        out[c] = acc
    return np.array(out)


def naive_cross_entropy(scores, labels):
    """Unstabilized mean cross-entropy; only valid for small-magnitude scores."""
    total = 0.0
    for row, label in zip(scores, labels):
        z = sum(math.exp(float(s)) for s in row)
        total += math.log(z) - float(row[label])
    return total / len(labels)


def central_difference_gradient(f, values: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function over a flat array."""
    grad = np.zeros_like(values, dtype=np.float64)
    flat = values.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return grad


def pca_components_oracle(data: np.ndarray, n_components: int) -> np.ndarray:
    """PCA components from a dense eigendecomposition of the covariance."""
    centered = data - data.mean(axis=0)
    cov = centered.T @ centered / (data.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    comps = eigvecs[:, order[:n_components]]
    for col in range(comps.shape[1]):
        idx = int(np.abs(comps[:, col]).argmax())
        if comps[idx, col] < 0:
            comps[:, col] = -comps[:, col]
    return comps


def cca_blocks_oracle(views, eta: float):
    """Block pencil (A, B) assembled with explicit loops over view pairs."""
    dims = [v.shape[1] for v in views]
    total = sum(dims)
    offsets = [0]
    for d in dims:
        offsets.append(offsets[-1] + d)
    a = np.zeros((total, total))
    b = np.zeros((total, total))
    for i in range(3):
        for j in range(3):
            block = views[i].T @ views[j]
            if i == j:
                block = block + eta * np.eye(dims[i])
                b[offsets[i] : offsets[i + 1], offsets[j] : offsets[j + 1]] = block
            a[offsets[i] : offsets[i + 1], offsets[j] : offsets[j + 1]] = block
    return (a + a.T) / 2.0, (b + b.T) / 2.0


def cca_small_oracle(x1, x2, x3, eta: float):
    """Three-view CCA eigenpairs through a whitening route.

    B = R R^T via eigendecomposition, then the standard symmetric problem
    R^-1 A R^-T, all with numpy (the package solves the pencil directly with
    scipy). Returns eigenvalues descending and the matching eigenvectors of
    the original pencil.
    """
    views = [np.asarray(v, dtype=np.float64) for v in (x1, x2, x3)]
    a, b = cca_blocks_oracle(views, eta)
    bw, bv = np.linalg.eigh(b)
    if bw.min() <= 0:
        raise ValueError("oracle expects a positive-definite right-hand side")
    inv_sqrt_b = bv @ np.diag(1.0 / np.sqrt(bw)) @ bv.T
    sym = inv_sqrt_b @ a @ inv_sqrt_b
    sym = (sym + sym.T) / 2.0
    eigvals, y = np.linalg.eigh(sym)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    vecs = inv_sqrt_b @ y[:, order]
    return eigvals, vecs, a, b


def cosine_knn_oracle(keys: np.ndarray, q: np.ndarray, k: int):
    """Exhaustive cosine ranking; ties keep the lower index first."""
    sims = []
    qn = math.sqrt(float(sum(v * v for v in q)))
    for i, row in enumerate(keys):
        rn = math.sqrt(float(sum(v * v for v in row)))
        if qn == 0.0 or rn == 0.0:
            sims.append((0.0, i))
            continue
        dot = float(sum(a * b for a, b in zip(row, q)))
        sims.append((dot / (rn * qn), i))
    sims.sort(key=lambda pair: (-pair[0], pair[1]))
    return [i for _, i in sims[:k]], [s for s, _ in sims[:k]]


def nearest_centroid_accuracy(train_x, train_y, test_x, test_y) -> float:
    """1-nearest-centroid classifier accuracy on concatenated features."""
    classes = sorted(set(int(v) for v in train_y))
    centroids = {c: train_x[train_y == c].mean(axis=0) for c in classes}
    correct = 0
    for x, y in zip(test_x, test_y):
        best = min(classes, key=lambda c: float(np.sum((x - centroids[c]) ** 2)))
        correct += int(best == int(y))
    return correct / len(test_y)
