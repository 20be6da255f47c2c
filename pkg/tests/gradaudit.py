"""Central finite-difference audits of every training objective.

Each builder takes a seed and returns ``(closure, params)``: the closure
recomputes the scalar loss from scratch with all randomness pinned, so it can
be re-evaluated under parameter perturbations.
"""

import numpy as np
import scipy.sparse as sp
import torch

from latib.datamodel import HyperParams
from latib.infomath import antithetic_noise
from latib.losses import (
    conce_graph, conce_image, discriminator_loss, graph_minimal_term, injection_loss, minimal_loss_graph,
    minimal_loss_vector, robust_loss, warmup_loss,
)
from latib.model import GraphTensors, LaTIBModel

IN, C, K, H, B = 3, 3, 2, 4, 6


def _graph(n, seed):
    rng = np.random.default_rng(seed)
    a = sp.random(n, n, density=0.4, random_state=rng, data_rvs=np.ones)
    a = ((a + a.T) > 0).astype(float)
    a.setdiag(0)
    return GraphTensors.from_adjacency(sp.csr_matrix(a))


def _setup(seed, mode="vector"):
    model = LaTIBModel(IN, C, latent_dim=K, hidden_dim=H, mode=mode, seed=seed, disc_hidden=H)
    g = torch.Generator().manual_seed(1000 + seed)
    x = torch.randn(B, IN, generator=g, dtype=torch.float64)
    noise = (torch.randn(B, K, generator=g, dtype=torch.float64), torch.randn(B, K, generator=g, dtype=torch.float64))
    y = torch.eye(C, dtype=torch.float64)[torch.randint(0, C, (B,), generator=g)]
    graph = _graph(B, seed) if mode == "graph" else None
    return model, x, noise, y, graph, g


def _forward(model, x, noise, graph):
    enc = model.encode(x, graph, sample=True, noise=noise)
    return enc, model.decode(enc.s_sample)[1], model.decode(enc.t_sample)[1]


def warmup(seed):
    model, x, noise, y, _, _ = _setup(seed)
    soft = torch.softmax(torch.randn(B, C, generator=torch.Generator().manual_seed(seed), dtype=torch.float64), -1)
    target = y if seed % 2 else soft

    def closure():
        z = model.encoder_s(x)[0].rsample(noise[0])
        return warmup_loss(model.decode(z)[1], target)
    return closure, [*model.encoder_s.parameters(), *model.decoder.parameters()]


def injection(seed):
    model, x, noise, y, _, g = _setup(seed)
    sets = torch.arange(B) % 3
    sets = sets[torch.randperm(B, generator=g)]
    ts = torch.eye(C, dtype=torch.float64)[torch.randint(0, C, (B,), generator=g)]
    js_noise = antithetic_noise(16, K, g)

    def closure():
        enc, ps, pt = _forward(model, x, noise, None)
        return injection_loss(enc, ps, pt, sets == 0, sets == 1, sets == 2, y, ts, 0.1, js_noise)[0]
    return closure, model.q_parameters()


def minimal_vector(seed):
    model, x, noise, _, _, _ = _setup(seed)

    def closure():
        return minimal_loss_vector(model.encode(x, sample=True, noise=noise))
    return closure, [*model.encoder_s.parameters(), *model.encoder_t.parameters()]


def _minimal_graph(seed, aib, xib):
    model, x, noise, _, graph, _ = _setup(seed, "graph")

    def closure():
        enc = model.encode(x, graph, sample=True, noise=noise)
        st = enc.graph_stats["s"]
        return minimal_loss_graph(st.edge_probs, st.edge_prior, enc.s_sample, enc.s_dist,
                                  torch.softmax(st.prior_logits, -1), st.prior_mean, st.prior_log_var,
                                  aib_weight=aib, xib_weight=xib)
    return closure, list(model.encoder_s.parameters())


def minimal_graph_aib(seed):
    return _minimal_graph(seed, 1.0, 0.0)


def minimal_graph_xib(seed):
    return _minimal_graph(seed, 0.0, 1.0)


def minimal_graph_both_branches(seed):
    model, x, noise, _, graph, _ = _setup(seed, "graph")

    def closure():
        return graph_minimal_term(model.encode(x, graph, sample=True, noise=noise))
    return closure, [*model.encoder_s.parameters(), *model.encoder_t.parameters()]


def conce_graph_loss(seed):
    model, x, noise, y, _, _ = _setup(seed)
    lam = (0.5, 1.0, 10.0, 3.0, 30.0)[seed % 5]

    def closure():
        _, ps, pt = _forward(model, x, noise, None)
        return conce_graph(ps, pt, y, lam)
    return closure, model.q_parameters()


def conce_image_loss(seed):
    model, x, noise, y, _, _ = _setup(seed)
    t = (0.1, 0.5, 0.9, 0.3, 0.99)[seed % 5]

    def closure():
        _, ps, pt = _forward(model, x, noise, None)
        return conce_image(ps, pt, y, t)
    return closure, model.q_parameters()


def robust(seed):
    mode = "graph" if seed >= 3 else "vector"
    model, x, noise, y, graph, _ = _setup(seed, mode)
    params = HyperParams(beta=0.1, gamma=0.5)

    def closure():
        enc, ps, pt = _forward(model, x, noise, graph)
        return robust_loss(enc, ps, pt, y, model, params)[0]
    return closure, model.q_parameters()


def discriminator(seed):
    model, x, noise, y, _, _ = _setup(seed)
    with torch.no_grad():
        enc = model.encode(x, sample=True, noise=noise)
    shift = 1 + seed % (B - 1)

    def closure():
        return discriminator_loss(model, enc.s_sample, y, enc.t_sample, shift)
    return closure, model.d_parameters()


AUDITS = {
    "warmup": warmup,
    "injection": injection,
    "minimal_vector": minimal_vector,
    "minimal_graph_aib": minimal_graph_aib,
    "minimal_graph_xib": minimal_graph_xib,
    "minimal_graph": minimal_graph_both_branches,
    "conce_graph": conce_graph_loss,
    "conce_image": conce_image_loss,
    "robust": robust,
    "discriminator": discriminator,
}


def relative_error(closure, params, h: float = 1e-6) -> float:
    """||g_analytic - g_fd|| / max(||g_analytic||, ||g_fd||) over all params."""
    loss = closure()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    analytic = torch.cat([(torch.zeros_like(p) if g is None else g).reshape(-1) for p, g in zip(params, grads)])
    numeric = []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = closure().item()
                flat[i] = old - h
                down = closure().item()
                flat[i] = old
                numeric.append((up - down) / (2 * h))
    numeric = torch.tensor(numeric, dtype=torch.float64)
    scale = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
    return (analytic - numeric).norm().item() / scale


def audit(name: str, seeds=range(5)) -> list[float]:
    out = []
    for s in seeds:
        closure, params = AUDITS[name](s)
        out.append(relative_error(closure, params))
    return out
