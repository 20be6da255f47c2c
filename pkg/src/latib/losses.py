"""Training objectives for the three phases.

All functions take class probabilities (not logits) and label distributions
as float64 tensors and return scalar tensors; composite losses also return a
``{term: float}`` breakdown for logging.
"""

from __future__ import annotations

import contextlib
import math

import torch

from .infomath import DiagonalGaussian, gaussian_js, kl_to_standard_normal, softmin
from .model import DualEncoding, LaTIBModel

PROB_FLOOR = 1e-12
LOG_FLOOR = math.log(PROB_FLOOR)


def cross_entropy(probs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Per-sample -sum_c y_c log p_c with probabilities floored at 1e-12."""
    if probs.shape != targets.shape:
        raise ValueError(f"prediction shape {tuple(probs.shape)} != target shape {tuple(targets.shape)}")
    return -(targets * torch.log(probs.clamp_min(PROB_FLOOR))).sum(-1)


def _nonempty(probs):
    if probs.shape[0] == 0:
        raise ValueError("empty batch")


def warmup_loss(probs_s: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    _nonempty(probs_s)
    return cross_entropy(probs_s, y).mean()


# ---------------------------------------------------------------------------
# compression

def minimal_loss_vector(enc: DualEncoding) -> torch.Tensor:
    return (kl_to_standard_normal(enc.s_dist) + kl_to_standard_normal(enc.t_dist)).mean()


def bernoulli_kl(phi: torch.Tensor, alpha: float) -> torch.Tensor:
    return phi * torch.log(phi / alpha) + (1 - phi) * torch.log((1 - phi) / (1 - alpha))


def minimal_loss_graph(edge_probs, edge_prior: float, z: torch.Tensor, posterior: DiagonalGaussian,
                       mixture_weights: torch.Tensor, mixture_mean: torch.Tensor,
                       mixture_log_var: torch.Tensor, aib_weight: float = 1.0,
                       xib_weight: float = 1.0) -> torch.Tensor:
    """Structural (Bernoulli KL over edge gates) plus feature (posterior vs.
    Gaussian-mixture prior log-ratio) compression estimate, summed over
    layers, edges and nodes."""
    if not 0 < edge_prior < 1:
        raise ValueError("edge prior must lie in (0, 1)")
    w = mixture_weights
    if (w < 0).any() or abs(w.detach().sum().item() - 1.0) > 1e-9:
        raise ValueError("mixture weights must lie on the simplex")
    aib = z.new_zeros(())
    for phi in edge_probs:
        if ((phi <= 0) | (phi >= 1)).any():
            raise ValueError("edge probabilities must lie strictly inside (0, 1)")
        aib = aib + bernoulli_kl(phi, edge_prior).sum()
    prior = DiagonalGaussian(mixture_mean, mixture_log_var)
    log_q = torch.logsumexp(torch.log(w) + prior.log_prob(z.unsqueeze(-2)), dim=-1)
    xib = (posterior.log_prob(z) - log_q).sum()
    return aib_weight * aib + xib_weight * xib


def graph_minimal_term(enc: DualEncoding, eps: float = 1e-12) -> torch.Tensor:
    """Per-node compression for both graph branches."""
    total = enc.s_sample.new_zeros(())
    n = enc.s_sample.shape[0]
    for key, dist, z in (("s", enc.s_dist, enc.s_sample), ("t", enc.t_dist, enc.t_sample)):
        st = enc.graph_stats[key]
        phis = [p.clamp(eps, 1 - eps) for p in st.edge_probs]
        total = total + minimal_loss_graph(phis, st.edge_prior, z, dist, torch.softmax(st.prior_logits, -1),
                                           st.prior_mean, st.prior_log_var)
    return total / n


def minimal_term(enc: DualEncoding) -> torch.Tensor:
    return graph_minimal_term(enc) if enc.graph_stats else minimal_loss_vector(enc)


# ---------------------------------------------------------------------------
# knowledge injection

def injection_loss(enc: DualEncoding, probs_s, probs_t, clean, noise, uncertain, targets_s, targets_t,
                   beta: float, js_noise: torch.Tensor, minimal: torch.Tensor | None = None):
    """Set-wise objective: clean CE_S - JS, noise CE_T - JS, uncertain
    CE_S + CE_T + JS, plus ``beta`` times the compression term.

    Masks are boolean tensors over the batch rows of ``enc``; empty sets add 0.
    """
    clean, noise, uncertain = (torch.as_tensor(m, dtype=torch.bool) for m in (clean, noise, uncertain))
    if not (clean.any() or noise.any() or uncertain.any()):
        raise ValueError("all selection sets are empty")
    js = gaussian_js(enc.s_dist, enc.t_dist, js_noise)
    ce_s = cross_entropy(probs_s, targets_s)
    ce_t = cross_entropy(probs_t, targets_t)
    zero = js.new_zeros(())

    def set_mean(values, mask):
        return values[mask].mean() if mask.any() else zero

    parts = {
        "clean": set_mean(ce_s - js, clean),
        "noise": set_mean(ce_t - js, noise),
        "uncertain": set_mean(ce_s + ce_t + js, uncertain),
        "minimal": minimal_term(enc) if minimal is None else minimal,
    }
    total = parts["clean"] + parts["noise"] + parts["uncertain"] + beta * parts["minimal"]
    logged = {k: float(v.detach()) for k, v in parts.items()}
    logged["js"] = float(js.detach().mean())
    return total, logged


# ---------------------------------------------------------------------------
# robust training

def conce_graph(probs_s, probs_t, y, lambda_smooth: float) -> torch.Tensor:
    _nonempty(probs_s)
    return softmin(cross_entropy(probs_s, y), cross_entropy(probs_t, y), lambda_smooth).mean()


def conce_image(probs_s, probs_t, y, agree_threshold: float) -> torch.Tensor:
    """Consistency CE with label replacement; masks are built from detached copies."""
    _nonempty(probs_s)
    with torch.no_grad():
        a = cross_entropy(probs_s, y)
        b = cross_entropy(probs_t, y)
        pred_s = probs_s.argmax(-1)
        pred_t = probs_t.argmax(-1)
        agree = pred_s == pred_t
        if agree.double().mean() > agree_threshold:
            mask_a, mask_b = (a < b) | agree, a > b
        else:
            mask_a, mask_b = a < b, (a > b) | agree
        eye = torch.eye(y.shape[-1], dtype=y.dtype)
        y1 = torch.where(mask_a.unsqueeze(-1), eye[pred_s], y)
        y2 = torch.where(mask_b.unsqueeze(-1), eye[pred_t], y)
    return 0.5 * (cross_entropy(probs_s, y1).mean() + cross_entropy(probs_t, y2).mean())


@contextlib.contextmanager
def frozen(module: torch.nn.Module):
    """Temporarily stop gradients into ``module``'s parameters."""
    flags = [p.requires_grad for p in module.parameters()]
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield module
    finally:
        for p, f in zip(module.parameters(), flags):
            p.requires_grad_(f)


def adversarial_term(model: LaTIBModel, s, y, t) -> torch.Tensor:
    """Per-sample -log(1 - d(s, y; t, y)): small when joint pairs pass as independent."""
    with frozen(model.discriminator):
        d = model.discriminate(s, y, t, y)
    return -torch.log((1 - d).clamp_min(PROB_FLOOR))


def robust_loss(enc: DualEncoding, probs_s, probs_t, y, model: LaTIBModel, params, mode: str | None = None,
                minimal: torch.Tensor | None = None):
    """ConCE + beta * compression + gamma * adversarial disentanglement."""
    _nonempty(probs_s)
    mode = mode or model.mode
    if mode == "graph":
        conce = conce_graph(probs_s, probs_t, y, params.lambda_smooth)
    else:
        conce = conce_image(probs_s, probs_t, y, params.agree_threshold)
    mini = minimal_term(enc) if minimal is None else minimal
    adv = adversarial_term(model, enc.s_sample, y, enc.t_sample).mean()
    total = conce + params.beta * mini + params.gamma * adv
    return total, {"conce": float(conce.detach()), "minimal": float(mini.detach()), "adversarial": float(adv.detach())}


def cyclic_shift(batch_size: int, generator: torch.Generator | None = None) -> int:
    """Offset r in [1, B-1]; i -> (i + r) mod B has no fixed point."""
    if batch_size < 2:
        raise ValueError("discriminator pairing needs a batch of at least 2")
    return int(torch.randint(1, batch_size, (1,), generator=generator))


def discriminator_loss(model: LaTIBModel, s, y, t, shift: int) -> torch.Tensor:
    """mean_i[-log(1 - d(s_i, y_i; t_pi(i), y_pi(i))) - log d(s_i, y_i; t_i, y_i)],
    pi(i) = (i + shift) mod B. Encoder outputs are detached."""
    b = s.shape[0]
    if b < 2:
        raise ValueError("discriminator pairing needs a batch of at least 2")
    if not 0 < shift % b:
        raise ValueError("shift must not be a multiple of the batch size")
    s, t = s.detach(), t.detach()
    perm = (torch.arange(b) + shift) % b
    d_pos = model.discriminate(s, y, t, y)
    d_neg = model.discriminate(s, y, t[perm], y[perm])
    return (-torch.log((1 - d_neg).clamp_min(PROB_FLOOR)) - torch.log(d_pos.clamp_min(PROB_FLOOR))).mean()
