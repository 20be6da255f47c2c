"""Clean / noise / uncertain partition of the training set.

Samples are ranked within their observed class by the S-branch cross-entropy
and by the JS divergence between the two branch posteriors; confident
predictions are then added on an absolute scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .datamodel import CONFIDENCE_MODES, NoisyDataset, one_hot
from .infomath import antithetic_noise, gaussian_js

@dataclass(frozen=True, eq=False)
class SelectionMasks:
    """Boolean vectors over the training rows (in ``dataset.indices('train')`` order)."""

    clean: np.ndarray
    noise: np.ndarray
    uncertain: np.ndarray

    def __post_init__(self):
        n = len(self.clean)
        if len(self.noise) != n or len(self.uncertain) != n:
            raise ValueError("mask lengths differ")
        c, z, u = (np.asarray(m, bool) for m in (self.clean, self.noise, self.uncertain))
        if (c & z).any() or (c & u).any() or (z & u).any():
            raise ValueError("selection masks overlap")
        if not (c | z | u).all():
            raise ValueError("selection masks do not cover the train set")
        object.__setattr__(self, "clean", c)
        object.__setattr__(self, "noise", z)
        object.__setattr__(self, "uncertain", u)

    def __len__(self):
        return len(self.clean)

    def counts(self) -> dict[str, int]:
        return {"clean": int(self.clean.sum()), "noise": int(self.noise.sum()),
                "uncertain": int(self.uncertain.sum())}


@dataclass(frozen=True)
class SelectionScores:
    loss: np.ndarray
    js: np.ndarray
    confidence: np.ndarray
    observed: np.ndarray


def class_cap(group_size: int, delta: float, total: int, num_classes: int) -> int:
    # ceil guarded against representation error (0.3 * 10 = 3.0000000000000004)
    want = math.ceil(delta * group_size - 1e-9)
    return max(1, min(want, total // num_classes))


def _bottom(values: np.ndarray, k: int) -> np.ndarray:
    return np.argsort(values, kind="stable")[:k]


def _top(values: np.ndarray, k: int) -> np.ndarray:
    return np.argsort(-values, kind="stable")[:k]


def select_from_scores(loss, js, confidence, observed, num_classes: int, delta: float,
                       conf_hi: float, conf_lo: float) -> SelectionMasks:
    """The ranking rule on precomputed per-sample scores."""
    loss, js, confidence = (np.asarray(v, dtype=np.float64) for v in (loss, js, confidence))
    observed = np.asarray(observed)
    n = len(loss)
    if n == 0:
        raise ValueError("empty train set")
    if not 0 < delta <= 1:
        raise ValueError("delta must be in (0,1]")
    if not (len(js) == len(confidence) == len(observed) == n):
        raise ValueError("score vectors have different lengths")
    clean = np.zeros(n, bool)
    noise = np.zeros(n, bool)
    for j in range(num_classes):
        idx = np.flatnonzero(observed == j)
        if len(idx) == 0:
            continue
        k = class_cap(len(idx), delta, n, num_classes)
        for score in (loss[idx], js[idx]):
            clean[idx[_bottom(score, k)]] = True
            noise[idx[_top(score, k)]] = True
    clean |= confidence >= conf_hi
    noise |= confidence <= conf_lo
    conflict = clean & noise
    clean &= ~conflict
    noise &= ~conflict
    return SelectionMasks(clean, noise, ~(clean | noise))


@torch.no_grad()
def selection_scores(model, dataset: NoisyDataset, labels: np.ndarray, graph=None,
                     js_samples: int = 64, seed: int = 0, confidence: str = "observed") -> SelectionScores:
    """Per-train-sample CE of the S branch, S/T JS divergence and confidence.

    Uses eval-mode posteriors; ``labels`` are the (N, C) labels the scores are
    computed against. ``confidence="observed"`` scores the S probability of the
    observed class, ``"max"`` the top S probability.
    """
    if confidence not in CONFIDENCE_MODES:
        raise ValueError(f"confidence must be one of {CONFIDENCE_MODES}")
    train = dataset.indices("train")
    if len(train) == 0:
        raise ValueError("empty train set")
    was = model.training
    model.eval()
    try:
        x = torch.tensor(dataset.features)
        if graph is None:
            x = x[train]
        enc = model.encode(x, graph, sample=False)
        if graph is not None:
            enc = enc[torch.as_tensor(train)]
        probs = model.decode(enc.s_sample)[1]
    finally:
        model.train(was)
    y = torch.tensor(labels[train])
    obs = y.argmax(-1)
    loss = -(y * torch.log(probs.clamp_min(1e-12))).sum(-1)
    gen = torch.Generator().manual_seed(int(seed))
    js = gaussian_js(enc.s_dist, enc.t_dist, antithetic_noise(js_samples, enc.s_dist.dim, gen))
    if confidence == "observed":
        conf = probs.gather(1, obs[:, None]).squeeze(1)
    else:
        conf = probs.max(-1).values
    return SelectionScores(loss.numpy(), js.numpy(), conf.numpy(), obs.numpy())


def infojs_select(model, dataset: NoisyDataset, labels: np.ndarray, params, graph=None,
                  js_samples: int = 64, seed: int = 0, confidence: str = "observed",
                  return_scores: bool = False):
    scores = selection_scores(model, dataset, labels, graph, js_samples, seed, confidence)
    masks = select_from_scores(scores.loss, scores.js, scores.confidence, scores.observed,
                               dataset.num_classes, params.delta, params.conf_hi, params.conf_lo)
    return (masks, scores) if return_scores else masks


def assign_targets(masks: SelectionMasks, labels: np.ndarray, pred_s: np.ndarray, pred_t: np.ndarray):
    """Per-branch targets over the train rows: observed labels on clean and
    noise samples, one-hot branch predictions on uncertain ones."""
    labels = np.asarray(labels, dtype=np.float64)
    if not (len(labels) == len(pred_s) == len(pred_t) == len(masks)):
        raise ValueError(f"masks cover {len(masks)} samples but labels/predictions have "
                         f"{len(labels)}/{len(pred_s)}/{len(pred_t)}")
    c = labels.shape[1]
    u = masks.uncertain[:, None]
    target_s = np.where(u, one_hot(np.argmax(pred_s, axis=1), c), labels)
    target_t = np.where(u, one_hot(np.argmax(pred_t, axis=1), c), labels)
    return target_s, target_t
