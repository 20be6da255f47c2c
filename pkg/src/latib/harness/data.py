"""Synthetic datasets: Gaussian blobs and stochastic-block-model graphs."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..datamodel import DatasetError, NoisyDataset, one_hot


def simplex_means(num_classes: int, dim: int, separation: float) -> np.ndarray:
    """``num_classes`` points in R^dim with every pairwise distance equal to ``separation``."""
    if dim < num_classes - 1:
        raise DatasetError(f"a {num_classes}-class simplex needs dim >= {num_classes - 1}")
    eye = np.eye(num_classes)
    centred = eye - eye.mean(axis=0)
    # orthonormal basis of the (C-1)-dim span, so the layout fits in dim >= C-1
    u, s, _ = np.linalg.svd(centred.T, full_matrices=False)
    coords = centred @ u[:, :num_classes - 1]
    means = np.zeros((num_classes, dim))
    means[:, :num_classes - 1] = coords * (separation / np.sqrt(2.0))
    return means


def _split_masks(n: int, rng, fractions=(0.6, 0.2)):
    order = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    masks = np.zeros((3, n), bool)
    masks[0, order[:n_train]] = True
    masks[1, order[n_train:n_train + n_val]] = True
    masks[2, order[n_train + n_val:]] = True
    return masks


def generate_blobs(num_classes: int = 4, dim: int = 8, n: int = 2000, separation: float = 8.0,
                   seed: int = 0) -> NoisyDataset:
    """Balanced unit-covariance Gaussian clusters on a simplex, 60/20/20 split."""
    if separation <= 0:
        raise DatasetError("separation must be > 0")
    if num_classes < 2 or dim < 1 or n < num_classes:
        raise DatasetError("need num_classes >= 2, dim >= 1 and n >= num_classes")
    rng = np.random.default_rng(seed)
    means = simplex_means(num_classes, dim, separation)
    y = rng.permutation(np.arange(n) % num_classes)
    x = means[y] + rng.standard_normal((n, dim))
    masks = _split_masks(n, rng)
    return NoisyDataset(x, one_hot(y, num_classes), y, np.zeros(n, bool), *masks, num_classes)


def generate_sbm_graph(num_communities: int = 4, nodes_per_community: int = 100, p_in: float = 0.1,
                       p_out: float = 0.01, feature_dim: int = 16, seed: int = 0, feature_signal: float = 1.0,
                       train_per_class: int = 20, val_cap: int = 500) -> NoisyDataset:
    """Planted-partition graph with Gaussian node features around community means.

    Each class contributes ``train_per_class`` training nodes; validation takes
    ``min(val_cap, rest // 2)`` of the remaining nodes and test the rest.
    """
    if not (0 < p_out < 1 and 0 < p_in < 1):
        raise DatasetError("edge probabilities must lie in (0, 1)")
    if p_in <= p_out:
        raise DatasetError("p_in must exceed p_out")
    if num_communities < 2 or nodes_per_community <= train_per_class:
        raise DatasetError("need >= 2 communities larger than the per-class training quota")
    rng = np.random.default_rng(seed)
    n = num_communities * nodes_per_community
    y = np.repeat(np.arange(num_communities), nodes_per_community)
    prob = np.where(y[:, None] == y[None, :], p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    adj = sp.csr_matrix((upper | upper.T).astype(np.float64))
    means = rng.standard_normal((num_communities, feature_dim))
    means *= feature_signal / np.linalg.norm(means, axis=1, keepdims=True)
    x = means[y] + rng.standard_normal((n, feature_dim))
    masks = np.zeros((3, n), bool)
    for c in range(num_communities):
        members = rng.permutation(np.flatnonzero(y == c))
        masks[0, members[:train_per_class]] = True
    rest = rng.permutation(np.flatnonzero(~masks[0]))
    n_val = min(val_cap, len(rest) // 2)
    masks[1, rest[:n_val]] = True
    masks[2, rest[n_val:]] = True
    return NoisyDataset(x, one_hot(y, num_communities), y, np.zeros(n, bool), *masks, num_communities, adjacency=adj)


def modularity(adjacency, communities) -> float:
    """Newman modularity Q of a partition of an undirected graph."""
    a = sp.csr_matrix(adjacency)
    communities = np.asarray(communities)
    deg = np.asarray(a.sum(axis=1)).ravel()
    two_m = deg.sum()
    if two_m == 0:
        raise ValueError("graph has no edges")
    coo = a.tocoo()
    inside = coo.data[communities[coo.row] == communities[coo.col]].sum()
    k_c = np.bincount(communities, weights=deg)
    return float(inside / two_m - ((k_c / two_m) ** 2).sum())
