"""Domain records shared by every module: labels, datasets, configuration."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp

from .container import ContainerError, read_arrays, write_arrays

SIMPLEX_TOL = 1e-9


class ConfigError(ValueError):
    pass


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# labels

def one_hot(indices, num_classes: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.shape[0], num_classes), dtype=np.float64)
    out[np.arange(indices.shape[0]), indices] = 1.0
    return out


def check_label_distributions(labels: np.ndarray, num_classes: int | None = None) -> None:
    """Raise ``DatasetError`` unless every row is a probability vector."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DatasetError(f"labels must be 2-D (N, C), got shape {labels.shape}")
    if num_classes is not None and labels.shape[1] != num_classes:
        raise DatasetError(f"labels have {labels.shape[1]} columns, dataset has {num_classes} classes")
    if labels.size and (labels.min() < 0 or labels.max() > 1):
        raise DatasetError("label probabilities must lie in [0, 1]")
    if labels.shape[0] and np.max(np.abs(labels.sum(axis=1) - 1.0)) > SIMPLEX_TOL:
        raise DatasetError("label rows must sum to 1")


def renormalize(labels: np.ndarray) -> np.ndarray:
    labels = np.clip(labels, 0.0, None)
    return labels / labels.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# datasets

SPLITS = ("train", "val", "test")


def _frozen(arr, dtype) -> np.ndarray:
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class NoisyDataset:
    """Examples with observed labels plus hidden ground truth.

    ``true_labels`` and ``noise_mask`` are evaluation-only; training code must
    never read them. ``adjacency`` is set for graph datasets (node
    classification) and ``None`` for plain vector datasets.
    """

    features: np.ndarray
    labels: np.ndarray
    true_labels: np.ndarray
    noise_mask: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int
    adjacency: sp.csr_matrix | None = None

    def __post_init__(self):
        n = self.features.shape[0] if np.ndim(self.features) == 2 else -1
        if n < 0:
            raise DatasetError("features must be a 2-D array")
        object.__setattr__(self, "features", _frozen(self.features, np.float64))
        object.__setattr__(self, "labels", _frozen(self.labels, np.float64))
        object.__setattr__(self, "true_labels", _frozen(self.true_labels, np.int64))
        for name in ("noise_mask", "train_mask", "val_mask", "test_mask"):
            object.__setattr__(self, name, _frozen(getattr(self, name), bool))
        if self.num_classes < 2:
            raise DatasetError("num_classes must be at least 2")
        for name in ("labels", "true_labels", "noise_mask", "train_mask", "val_mask", "test_mask"):
            if getattr(self, name).shape[0] != n:
                raise DatasetError(f"{name} has {getattr(self, name).shape[0]} rows, features have {n}")
        check_label_distributions(self.labels, self.num_classes)
        if n and (self.true_labels.min() < 0 or self.true_labels.max() >= self.num_classes):
            raise DatasetError("true_labels out of class range")
        overlap = (self.train_mask & self.val_mask) | (self.train_mask & self.test_mask) | (self.val_mask & self.test_mask)
        if overlap.any():
            raise DatasetError("split masks must be disjoint")
        if self.adjacency is not None:
            adj = sp.csr_matrix(self.adjacency, dtype=np.float64)
            if adj.shape != (n, n):
                raise DatasetError(f"adjacency shape {adj.shape} does not match {n} nodes")
            adj.sort_indices()
            adj.data.flags.writeable = False
            object.__setattr__(self, "adjacency", adj)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def is_graph(self) -> bool:
        return self.adjacency is not None

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def mask(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise DatasetError(f"unknown split {split!r}")
        return getattr(self, f"{split}_mask")

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.mask(split))

    def replace(self, **changes) -> "NoisyDataset":
        return dataclasses.replace(self, **changes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NoisyDataset) or self.num_classes != other.num_classes:
            return False
        arrays_equal = all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name))
            and getattr(self, f.name).dtype == getattr(other, f.name).dtype
            for f in fields(self) if f.name not in ("num_classes", "adjacency")
        )
        if not arrays_equal or (self.adjacency is None) != (other.adjacency is None):
            return False
        if self.adjacency is None:
            return True
        a, b = self.adjacency, other.adjacency
        return (a.shape == b.shape and np.array_equal(a.indptr, b.indptr)
                and np.array_equal(a.indices, b.indices) and np.array_equal(a.data, b.data))


def save_dataset(dataset: NoisyDataset, path) -> None:
    arrays = {
        "features": dataset.features,
        "labels": dataset.labels,
        "true_labels": dataset.true_labels,
        "noise_mask": dataset.noise_mask,
        "split_masks": np.stack([dataset.train_mask, dataset.val_mask, dataset.test_mask]),
    }
    if dataset.adjacency is not None:
        coo = dataset.adjacency.tocoo()
        arrays["adjacency_indices"] = np.stack([coo.row, coo.col]).astype(np.int64)
        arrays["adjacency_values"] = coo.data
    meta = {"kind": "graph" if dataset.is_graph else "vector",
            "num_classes": dataset.num_classes, "num_examples": len(dataset)}
    write_arrays(path, arrays, meta)


def load_dataset(path) -> NoisyDataset:
    arrays, meta = read_arrays(path)
    for name in ("features", "labels", "true_labels", "noise_mask", "split_masks"):
        if name not in arrays:
            raise ContainerError(f"{path}: missing array {name!r}")
    n = meta.get("num_examples")
    if n is not None and arrays["features"].shape[0] != n:
        raise DatasetError(f"{path}: features have {arrays['features'].shape[0]} rows, manifest says {n}")
    masks = arrays["split_masks"]
    adjacency = None
    if "adjacency_indices" in arrays:
        idx = arrays["adjacency_indices"]
        n_nodes = arrays["features"].shape[0]
        adjacency = sp.csr_matrix((arrays["adjacency_values"], (idx[0], idx[1])), shape=(n_nodes, n_nodes))
    return NoisyDataset(
        features=arrays["features"], labels=arrays["labels"], true_labels=arrays["true_labels"],
        noise_mask=arrays["noise_mask"], train_mask=masks[0], val_mask=masks[1], test_mask=masks[2],
        num_classes=int(meta["num_classes"]), adjacency=adjacency,
    )


# ---------------------------------------------------------------------------
# transition matrices

@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    matrix: np.ndarray
    kind: str
    rate: float

    def __post_init__(self):
        m = _frozen(self.matrix, np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("transition matrix must be square")
        if m.min() < 0 or m.max() > 1:
            raise ValueError("transition probabilities must lie in [0, 1]")
        if np.max(np.abs(m.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to 1")
        if self.kind not in ("symmetric", "pair"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        object.__setattr__(self, "matrix", m)

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[0]


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class HyperParams:
    beta: float = 1e-3
    gamma: float = 1e-2
    delta: float = 0.3
    lambda_smooth: float = 10.0
    tau: float = 0.9
    ema_period: int = 5
    ema_rate: float = 0.3
    conf_hi: float = 0.9
    conf_lo: float = 0.3
    agree_threshold: float = 0.9
    latent_dim: int = 16

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if not 0 < self.delta <= 1:
            raise ConfigError("delta must be in (0,1]")
        if self.lambda_smooth <= 0:
            raise ConfigError("lambda_smooth must be > 0")
        if not 0 < self.tau < 1:
            raise ConfigError("tau must be in (0,1)")
        if self.ema_period < 1:
            raise ConfigError("ema_period must be a positive integer")
        if not 0 <= self.ema_rate <= 1:
            raise ConfigError("ema_rate must be in [0,1]")
        if not (0 < self.conf_lo < 0.5 < self.conf_hi < 1):
            raise ConfigError("confidence bounds must satisfy 0 < conf_lo < 0.5 < conf_hi < 1")
        if not 0 < self.agree_threshold < 1:
            raise ConfigError("agree_threshold must be in (0,1)")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be a positive integer")


@dataclass(frozen=True)
class PhaseSchedule:
    epochs_warmup: int = 20
    epochs_injection: int = 30
    epochs_robust: int = 50

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"{f.name} must be non-negative")
        if self.epochs_warmup < 1:
            raise ConfigError("epochs_warmup must be >= 1")

    @property
    def total(self) -> int:
        return self.epochs_warmup + self.epochs_injection + self.epochs_robust

    def phase_of(self, epoch: int) -> str:
        """Phase name for a 1-based epoch index."""
        if epoch <= self.epochs_warmup:
            return "warmup"
        if epoch <= self.epochs_warmup + self.epochs_injection:
            return "injection"
        return "robust"


CONFIDENCE_MODES = ("observed", "max")


@dataclass(frozen=True)
class TrainSettings:
    """Optimisation knobs that are not part of the objective itself.

    ``lr`` drives SGD in vector mode and ``graph_lr`` Adam in graph mode.
    ``selector_confidence`` picks the score the confidence thresholds apply to:
    the S probability of the observed label or the top S probability.
    """

    hidden_dim: int = 128
    batch_size: int = 64
    lr: float = 0.005
    graph_lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    js_samples: int = 64
    selector_confidence: str = "observed"

    def __post_init__(self):
        if self.hidden_dim < 1 or self.batch_size < 2 or self.js_samples < 1:
            raise ConfigError("hidden_dim >= 1, batch_size >= 2 and js_samples >= 1 are required")
        if self.lr <= 0 or self.graph_lr <= 0:
            raise ConfigError("lr and graph_lr must be > 0")
        if self.selector_confidence not in CONFIDENCE_MODES:
            raise ConfigError(f"selector_confidence must be one of {CONFIDENCE_MODES}")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0,1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


MODES = ("vector", "graph")


@dataclass(frozen=True)
class RunConfig:
    params: HyperParams = field(default_factory=HyperParams)
    schedule: PhaseSchedule = field(default_factory=PhaseSchedule)
    settings: TrainSettings = field(default_factory=TrainSettings)
    seed: int = 0
    mode: str = "vector"
    defaulted: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def meta(self) -> dict[str, Any]:
        return {"seed": self.seed, "mode": self.mode, "defaulted": list(self.defaulted),
                **dataclasses.asdict(self.settings)}

    def __iter__(self):
        # allows ``params, schedule, meta = load_config(path)``
        return iter((self.params, self.schedule, self.meta))

    def as_dict(self) -> dict[str, Any]:
        out = {**dataclasses.asdict(self.params), **dataclasses.asdict(self.schedule),
               **dataclasses.asdict(self.settings), "seed": self.seed, "mode": self.mode}
        return out

    def with_(self, **changes) -> "RunConfig":
        """Copy with any mix of top-level, params, schedule or settings keys replaced."""
        values = self.as_dict()
        unknown = set(changes) - set(values)
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        values.update(changes)
        return build_config(values, defaulted=self.defaulted)


_SECTIONS = {HyperParams: "params", PhaseSchedule: "schedule", TrainSettings: "settings"}
_TOP_LEVEL = {"seed": int, "mode": str}


def _key_types() -> dict[str, type]:
    types: dict[str, type] = dict(_TOP_LEVEL)
    for cls in _SECTIONS:
        for f in fields(cls):
            types[f.name] = type(f.default)
    return types


CONFIG_KEYS = tuple(_key_types())


def _coerce(key: str, raw: Any, typ: type):
    if isinstance(raw, typ) and not (typ is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if typ is int:
            value = float(text)
            if not value.is_integer():
                raise ValueError
            return int(value)
        if typ is float:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {text!r}") from exc
    return text


def build_config(values: dict[str, Any], defaulted: tuple[str, ...] | None = None) -> RunConfig:
    types = _key_types()
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError(f"unknown config key(s): {unknown}")
    typed = {k: _coerce(k, v, types[k]) for k, v in values.items()}
    parts = {}
    for cls, name in _SECTIONS.items():
        parts[name] = cls(**{f.name: typed[f.name] for f in fields(cls) if f.name in typed})
    if defaulted is None:
        defaulted = tuple(k for k in CONFIG_KEYS if k not in values)
    top = {k: typed[k] for k in _TOP_LEVEL if k in typed}
    return RunConfig(**parts, **top, defaulted=tuple(defaulted))


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",),
                                       inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return build_config(dict(parser["run"]))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


def dump_config(config: RunConfig) -> str:
    lines = [f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}" for k, v in config.as_dict().items()]
    return "\n".join(lines) + "\n"


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(dump_config(config), encoding="utf-8")
