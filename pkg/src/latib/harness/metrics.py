"""Evaluation metrics; the only training-side consumer of the hidden ground truth."""

from __future__ import annotations

import numpy as np
import torch

from ..datamodel import NoisyDataset
from ..model import GraphTensors


def accuracy(probs: np.ndarray, targets: np.ndarray) -> float:
    if len(targets) == 0:
        raise ValueError("empty split")
    return float((np.asarray(probs).argmax(1) == np.asarray(targets)).mean())


def _graph(model, dataset):
    return GraphTensors.from_adjacency(dataset.adjacency) if dataset.is_graph else None


def predictions(model, dataset: NoisyDataset, features=None, graph=None):
    x = torch.tensor(dataset.features if features is None else features)
    if graph is None:
        graph = _graph(model, dataset)
    return model.predict(x, graph)


def evaluate(model, dataset: NoisyDataset, split: str = "test", features=None, graph=None) -> dict:
    """Mean-latent accuracy of each branch and of the branch with the lower
    validation cross-entropy, against the true labels."""
    idx = dataset.indices(split)
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    ps, pt = predictions(model, dataset, features, graph)
    truth = dataset.true_labels
    out = {"split": split, "acc_s": accuracy(ps[idx], truth[idx]), "acc_t": accuracy(pt[idx], truth[idx])}
    val = dataset.indices("val")
    if len(val):
        if features is not None:
            ps_v, pt_v = predictions(model, dataset, None, graph)
        else:
            ps_v, pt_v = ps, pt
        y = dataset.labels[val]
        ce_s = -(y * np.log(np.clip(ps_v[val], 1e-12, None))).sum(1).mean()
        ce_t = -(y * np.log(np.clip(pt_v[val], 1e-12, None))).sum(1).mean()
        out["best_branch"] = "s" if ce_s <= ce_t else "t"
    else:
        out["best_branch"] = "s"
    out["acc_best"] = out["acc_" + out["best_branch"]]
    out["acc"] = out["acc_s"]
    return out


def empirical_noise_rate(dataset: NoisyDataset, split: str = "train") -> float:
    idx = dataset.indices(split)
    return float(dataset.noise_mask[idx].mean()) if len(idx) else 0.0


def selector_quality(masks, dataset: NoisyDataset) -> dict:
    """Precision and recall of the clean and noise sets against the hidden noise
    mask. Ratios with an empty denominator are reported as ``None``."""
    noisy = dataset.noise_mask[dataset.indices("train")]
    if len(noisy) != len(masks):
        raise ValueError("masks do not match the train split")
    clean_truth = ~noisy

    def ratio(a, b):
        b = int(b)
        return None if b == 0 else float(a) / b

    return {
        "clean_precision": ratio((masks.clean & clean_truth).sum(), masks.clean.sum()),
        "clean_recall": ratio((masks.clean & clean_truth).sum(), clean_truth.sum()),
        "noise_precision": ratio((masks.noise & noisy).sum(), masks.noise.sum()),
        "noise_recall": ratio((masks.noise & noisy).sum(), noisy.sum()),
    }
