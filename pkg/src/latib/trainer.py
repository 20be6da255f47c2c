"""Three-phase training loop: warmup, knowledge injection, robust training."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from . import losses
from .container import read_arrays, write_arrays
from .datamodel import NoisyDataset, PhaseSchedule, RunConfig, check_label_distributions, one_hot, renormalize
from .infomath import antithetic_noise
from .model import GraphTensors, LaTIBModel
from .selector import SelectionMasks, assign_targets, infojs_select

PHASES = ("warmup", "injection", "robust")
ABLATIONS = (None, "no-ki", "no-rt")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainState:
    model: LaTIBModel
    opt_q: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    config: RunConfig
    generator: torch.Generator
    rng: np.random.Generator
    labels: np.ndarray                  # working labels, refined during robust training
    observed: np.ndarray                # labels as loaded; the selector ranks against these
    graph: GraphTensors | None = None
    epoch: int = 0
    steps: dict = field(default_factory=lambda: {p: 0 for p in PHASES} | {"discriminator": 0})
    done: list = field(default_factory=list)
    history: list = field(default_factory=list)
    selections: list = field(default_factory=list)  # (epoch, SelectionMasks) per injection epoch

    @property
    def params(self):
        return self.config.params

    @property
    def settings(self):
        return self.config.settings

    @property
    def schedule(self) -> PhaseSchedule:
        return self.config.schedule


def _optimizer(params, config: RunConfig):
    s = config.settings
    if config.mode == "graph":
        return torch.optim.Adam(params, lr=s.graph_lr, weight_decay=s.weight_decay)
    return torch.optim.SGD(params, lr=s.lr, momentum=s.momentum, weight_decay=s.weight_decay)


def init_state(dataset: NoisyDataset, config: RunConfig) -> TrainState:
    if dataset.is_graph != (config.mode == "graph"):
        raise ValueError(f"config mode {config.mode!r} does not match the dataset")
    if len(dataset.indices("train")) < 2:
        raise ValueError("need at least two training examples")
    model = LaTIBModel(dataset.dim, dataset.num_classes, config.params.latent_dim, config.settings.hidden_dim,
                       config.mode, seed=config.seed)
    graph = GraphTensors.from_adjacency(dataset.adjacency) if dataset.is_graph else None
    labels = np.array(dataset.labels, dtype=np.float64)
    return TrainState(model, _optimizer(model.q_parameters(), config), _optimizer(model.d_parameters(), config),
                      config, torch.Generator().manual_seed(config.seed + 1), np.random.default_rng(config.seed + 2),
                      labels, labels.copy(), graph)


# ---------------------------------------------------------------------------
# batching and forward helpers

def _batches(state: TrainState, train_idx: np.ndarray) -> list[np.ndarray]:
    if state.graph is not None:
        return [train_idx]
    order = state.rng.permutation(len(train_idx))
    bs = state.settings.batch_size
    chunks = [order[i:i + bs] for i in range(0, len(order), bs)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return [train_idx[c] for c in chunks]


def batches_per_epoch(num_train: int, batch_size: int, graph: bool) -> int:
    if graph:
        return 1
    n = -(-num_train // batch_size)
    return n - 1 if n > 1 and num_train % batch_size == 1 else n


def _encode(state: TrainState, x: torch.Tensor, rows: np.ndarray):
    """Sampled encoding of ``rows``; graph mode encodes every node and slices."""
    m = state.model
    if state.graph is None:
        return m.encode(x[rows], sample=True, generator=state.generator)
    # the sliced encoding keeps whole-graph stats for the compression term
    return m.encode(x, state.graph, sample=True, generator=state.generator)[torch.as_tensor(rows)]


def _js_noise(state: TrainState) -> torch.Tensor:
    return antithetic_noise(state.settings.js_samples, state.params.latent_dim, state.generator)


def _accuracy(probs, labels, idx) -> float | None:
    if len(idx) == 0:
        return float("nan")
    return float((probs[idx].argmax(1) == labels[idx].argmax(1)).mean())


def _epoch_record(state: TrainState, dataset: NoisyDataset, phase: str, terms: dict) -> dict:
    ps, pt = state.model.predict(torch.tensor(dataset.features), state.graph)
    rec = {"record": "epoch", "epoch": state.epoch, "phase": phase}
    rec.update({k: None if v is None else float(v) for k, v in terms.items()})
    for split in ("train", "val", "test"):
        idx = dataset.indices(split)
        # train accuracy is measured against the labels the model sees
        ref = state.observed if split == "train" else dataset.labels
        rec[f"acc_s_{split}"] = _accuracy(ps, ref, idx)
        rec[f"acc_t_{split}"] = _accuracy(pt, ref, idx)
    return rec


def _mean_terms(acc: list[dict]) -> dict:
    keys = acc[0].keys()
    return {k: float(np.mean([a[k] for a in acc])) for k in keys}


def _require(cond, msg):
    if not cond:
        raise TrainingError(msg)


def _wrap(phase, state, fn):
    try:
        return fn()
    except TrainingError:
        raise
    except Exception as exc:  # component errors abort with context
        raise TrainingError(f"{phase} epoch {state.epoch}: {exc}") from exc


# ---------------------------------------------------------------------------
# phases

def run_warmup(state: TrainState, dataset: NoisyDataset, epochs: int | None = None) -> TrainState:
    """Cross-entropy on encoder S and the decoder only."""
    epochs = state.schedule.epochs_warmup if epochs is None else epochs
    _require(state.epoch == 0 and "warmup" not in state.done, "schedule already past warmup")
    x = torch.tensor(dataset.features)
    train = dataset.indices("train")
    m = state.model
    for _ in range(epochs):
        def epoch():
            acc = []
            for rows in _batches(state, train):
                state.opt_q.zero_grad(set_to_none=True)
                dist, _ = m.encoder_s(x if state.graph is not None else x[rows], state.graph)
                if state.graph is not None:
                    dist = dist[torch.as_tensor(rows)]
                z = dist.rsample(torch.randn(dist.mean.shape, generator=state.generator, dtype=torch.float64))
                loss = losses.warmup_loss(m.decode(z)[1], torch.as_tensor(state.labels[rows]))
                loss.backward()
                state.opt_q.step()
                state.steps["warmup"] += 1
                acc.append({"loss_warmup": loss.item()})
            return _mean_terms(acc)
        terms = _wrap("warmup", state, epoch)
        state.epoch += 1
        state.history.append(_epoch_record(state, dataset, "warmup", terms))
    state.done.append("warmup")
    return state


def run_injection(state: TrainState, dataset: NoisyDataset, epochs: int | None = None) -> TrainState:
    """Per epoch: fresh selection, per-branch targets, one pass of the injection loss."""
    epochs = state.schedule.epochs_injection if epochs is None else epochs
    _require("warmup" in state.done, "injection needs a completed warmup")
    _require("injection" not in state.done and "robust" not in state.done, "injection already ran")
    x = torch.tensor(dataset.features)
    train = dataset.indices("train")
    pos = np.full(len(dataset), -1)
    pos[train] = np.arange(len(train))
    m, p = state.model, state.params
    for _ in range(epochs):
        def epoch():
            masks, scores = infojs_select(m, dataset, state.observed, p, state.graph,
                                          state.settings.js_samples, seed=state.config.seed * 7919 + state.epoch,
                                          confidence=state.settings.selector_confidence, return_scores=True)
            state.selections.append((state.epoch + 1, masks))
            ps, pt = m.predict(x, state.graph)
            tgt_s, tgt_t = assign_targets(masks, state.labels[train], ps[train], pt[train])
            acc = []
            for rows in _batches(state, train):
                r = pos[rows]
                state.opt_q.zero_grad(set_to_none=True)
                enc = _encode(state, x, rows)
                probs_s = m.decode(enc.s_sample)[1]
                probs_t = m.decode(enc.t_sample)[1]
                loss, parts = losses.injection_loss(
                    enc, probs_s, probs_t, masks.clean[r], masks.noise[r], masks.uncertain[r],
                    torch.as_tensor(tgt_s[r]), torch.as_tensor(tgt_t[r]), p.beta, _js_noise(state))
                loss.backward()
                state.opt_q.step()
                state.steps["injection"] += 1
                acc.append({"loss_injection": loss.item()} | {f"term_{k}": v for k, v in parts.items()})
            terms = _mean_terms(acc)
            terms.update({f"n_{k}": v for k, v in masks.counts().items()})
            terms["js_clean"] = float(scores.js[masks.clean].mean()) if masks.clean.any() else None
            return terms
        terms = _wrap("injection", state, epoch)
        state.epoch += 1
        state.history.append(_epoch_record(state, dataset, "injection", terms))
    state.done.append("injection")
    return state


def refine_labels_vector(labels, predictions, ema_rate: float, epoch: int, ema_period: int) -> np.ndarray:
    """Every ``ema_period`` epochs: y <- (1 - rate) y + rate * prediction."""
    if not 0 <= ema_rate <= 1:
        raise ValueError("ema_rate must be in [0,1]")
    if ema_period < 1:
        raise ValueError("ema_period must be >= 1")
    labels = np.asarray(labels, dtype=np.float64)
    if epoch % ema_period != 0:
        return labels.copy()
    out = renormalize((1.0 - ema_rate) * labels + ema_rate * np.asarray(predictions, dtype=np.float64))
    check_label_distributions(out)
    return out


def refine_labels_graph(labels, predictions, tau: float) -> np.ndarray:
    """Replace labels whose prediction confidence exceeds ``tau`` by the one-hot prediction."""
    if not 0 < tau < 1:
        raise ValueError("tau must be in (0,1)")
    labels = np.asarray(labels, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    hit = predictions.max(1) > tau
    out = labels.copy()
    out[hit] = one_hot(predictions[hit].argmax(1), labels.shape[1])
    return out


def run_robust(state: TrainState, dataset: NoisyDataset, epochs: int | None = None) -> TrainState:
    """Alternating q-side robust loss and discriminator steps, one each per batch."""
    epochs = state.schedule.epochs_robust if epochs is None else epochs
    _require("warmup" in state.done, "robust training needs a completed warmup")
    _require("robust" not in state.done, "robust training already ran")
    x = torch.tensor(dataset.features)
    train = dataset.indices("train")
    m, p = state.model, state.params
    for k in range(1, epochs + 1):
        def epoch():
            acc = []
            for rows in _batches(state, train):
                _require(len(rows) >= 2, "robust training needs batches of at least 2")
                y = torch.as_tensor(state.labels[rows])
                state.opt_q.zero_grad(set_to_none=True)
                enc = _encode(state, x, rows)
                probs_s = m.decode(enc.s_sample)[1]
                probs_t = m.decode(enc.t_sample)[1]
                loss, parts = losses.robust_loss(enc, probs_s, probs_t, y, m, p)
                loss.backward()
                state.opt_q.step()
                state.steps["robust"] += 1

                state.opt_d.zero_grad(set_to_none=True)
                shift = losses.cyclic_shift(len(rows), state.generator)
                d_loss = losses.discriminator_loss(m, enc.s_sample, y, enc.t_sample, shift)
                d_loss.backward()
                state.opt_d.step()
                state.steps["discriminator"] += 1
                acc.append({"loss_robust": loss.item(), "loss_discriminator": d_loss.item()}
                           | {f"term_{k_}": v for k_, v in parts.items()})
            ps, _ = m.predict(x, state.graph)
            if state.graph is None:
                state.labels[train] = refine_labels_vector(state.labels[train], ps[train], p.ema_rate, k,
                                                           p.ema_period)
            else:
                state.labels[train] = refine_labels_graph(state.labels[train], ps[train], p.tau)
            terms = _mean_terms(acc)
            terms["label_agreement"] = float((state.labels[train].argmax(1) == state.observed[train].argmax(1)).mean())
            return terms
        terms = _wrap("robust", state, epoch)
        state.epoch += 1
        state.history.append(_epoch_record(state, dataset, "robust", terms))
    state.done.append("robust")
    return state


# ---------------------------------------------------------------------------
# drivers

def train(dataset: NoisyDataset, config: RunConfig, ablate: str | None = None) -> tuple[TrainState, list[dict]]:
    """Run the phases in order. ``ablate`` drops injection (``no-ki``) or robust
    training (``no-rt``) without handing their epochs to another phase."""
    if ablate not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablate!r}; expected one of {ABLATIONS[1:]}")
    state = init_state(dataset, config)
    run_warmup(state, dataset)
    if ablate != "no-ki":
        run_injection(state, dataset)
    if ablate != "no-rt":
        run_robust(state, dataset)
    return state, state.history


def baseline_config(config: RunConfig) -> RunConfig:
    """Same backbone, data and epoch budget, cross-entropy on one stochastic encoder."""
    return config.with_(epochs_warmup=config.schedule.total, epochs_injection=0, epochs_robust=0)


def train_baseline(dataset: NoisyDataset, config: RunConfig) -> tuple[TrainState, list[dict]]:
    return train(dataset, baseline_config(config))


# ---------------------------------------------------------------------------
# checkpoints

def _optimizer_arrays(prefix: str, opt: torch.optim.Optimizer, arrays: dict) -> dict:
    sd = opt.state_dict()
    for pid, st in sd["state"].items():
        for key, val in st.items():
            arrays[f"{prefix}/{pid}/{key}"] = torch.as_tensor(val).detach().numpy().copy()
    return {"param_groups": sd["param_groups"]}


def save_checkpoint(state: TrainState, path) -> None:
    arrays = {f"model/{k}": v.detach().numpy().copy() for k, v in state.model.state_dict().items()}
    arrays["labels"] = state.labels
    arrays["observed"] = state.observed
    arrays["generator"] = state.generator.get_state().numpy().copy()
    meta = {
        "kind": "checkpoint",
        "epoch": state.epoch,
        "done": list(state.done),
        "steps": dict(state.steps),
        "config": state.config.as_dict(),
        "in_dim": state.model.in_dim,
        "num_classes": state.model.num_classes,
        "rng": json.loads(json.dumps(state.rng.bit_generator.state)),
        "opt_q": _optimizer_arrays("opt_q", state.opt_q, arrays),
        "opt_d": _optimizer_arrays("opt_d", state.opt_d, arrays),
    }
    write_arrays(path, arrays, meta)


def _load_optimizer(prefix: str, opt: torch.optim.Optimizer, arrays: dict, meta: dict):
    state: dict = {}
    for name, val in arrays.items():
        if name.startswith(prefix + "/"):
            _, pid, key = name.split("/", 2)
            t = torch.as_tensor(val.copy())
            state.setdefault(int(pid), {})[key] = t
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def load_checkpoint(path, dataset: NoisyDataset | None = None) -> TrainState:
    from .datamodel import build_config

    arrays, meta = read_arrays(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError(f"{path} is not a checkpoint")
    config = build_config(meta["config"])
    model = LaTIBModel(meta["in_dim"], meta["num_classes"], config.params.latent_dim, config.settings.hidden_dim,
                       config.mode, seed=config.seed)
    model.load_state_dict({k[len("model/"):]: torch.as_tensor(v.copy()) for k, v in arrays.items()
                           if k.startswith("model/")})
    opt_q, opt_d = _optimizer(model.q_parameters(), config), _optimizer(model.d_parameters(), config)
    _load_optimizer("opt_q", opt_q, arrays, meta["opt_q"])
    _load_optimizer("opt_d", opt_d, arrays, meta["opt_d"])
    gen = torch.Generator()
    gen.set_state(torch.as_tensor(arrays["generator"].copy()))
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    graph = GraphTensors.from_adjacency(dataset.adjacency) if dataset is not None and dataset.is_graph else None
    st = TrainState(model, opt_q, opt_d, config, gen, rng, arrays["labels"].copy(), arrays["observed"].copy(), graph,
                    epoch=meta["epoch"], steps=meta["steps"], done=meta["done"])
    return st
