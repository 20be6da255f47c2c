"""Label corruption through transition matrices and FGSM input perturbation."""

from __future__ import annotations

from typing import Callable

import numpy as np
import torch

from .datamodel import NoisyDataset, TransitionMatrix, one_hot


def build_transition_matrix(kind: str, rate: float, num_classes: int) -> TransitionMatrix:
    """Symmetric: off-diagonal mass spread evenly. Pair: all mass to (i + 1) mod C."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    c = num_classes
    if kind == "symmetric":
        if not 0 <= rate < (c - 1) / c:
            raise ValueError(f"symmetric rate must be in [0, {(c - 1) / c:.4g}) for {c} classes")
        m = np.full((c, c), rate / (c - 1))
        np.fill_diagonal(m, 1.0 - rate)
    elif kind == "pair":
        if not 0 <= rate < 0.5:
            raise ValueError("pair rate must be in [0, 0.5)")
        m = np.eye(c) * (1.0 - rate)
        m[np.arange(c), (np.arange(c) + 1) % c] += rate
    else:
        raise ValueError(f"unknown noise kind {kind!r}; expected 'symmetric' or 'pair'")
    return TransitionMatrix(m, kind, float(rate))


def inject_noise(dataset: NoisyDataset, matrix: TransitionMatrix, seed: int) -> NoisyDataset:
    """Resample training labels from the rows of ``matrix`` indexed by the true class.

    Validation and test labels are reset to their clean one-hot values.
    """
    if matrix.num_classes != dataset.num_classes:
        raise ValueError(f"matrix has {matrix.num_classes} classes, dataset has {dataset.num_classes}")
    rng = np.random.default_rng(seed)
    true = dataset.true_labels
    cdf = np.cumsum(matrix.matrix, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(len(dataset))
    sampled = (u[:, None] >= cdf[true]).sum(axis=1)
    observed = np.where(dataset.train_mask, sampled, true)
    return dataset.replace(labels=one_hot(observed, dataset.num_classes), noise_mask=observed != true)


def fgsm_perturb(loss_fn: Callable[[torch.Tensor], torch.Tensor], features, epsilon: float,
                 box: tuple | None = None) -> np.ndarray:
    """One signed-gradient step of size ``epsilon`` in max-norm, clipped to ``box``.

    ``loss_fn`` maps a feature tensor to a scalar loss (cross-entropy against
    the observed labels for the attacked model). ``box`` is ``(lo, hi)``, each a
    scalar or per-feature vector.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    x0 = np.asarray(features, dtype=np.float64)
    if epsilon == 0:
        return x0.copy()
    x = torch.tensor(x0, requires_grad=True)
    loss = loss_fn(x)
    (grad,) = torch.autograd.grad(loss, x)
    out = x0 + epsilon * np.sign(grad.numpy())
    if box is not None:
        lo, hi = box
        out = np.clip(out, lo, hi)
    return out
