"""Dual stochastic encoders, shared decoder and the (s, y, t, y') discriminator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn as nn
import torch.nn.functional as F

from .infomath import LOG_VAR_RANGE, DiagonalGaussian

DISC_LOGIT_CLAMP = 15.0


@dataclass
class GraphTensors:
    """Edge list (with self loops) for message passing; messages flow src -> dst."""

    src: torch.Tensor
    dst: torch.Tensor
    num_nodes: int
    is_self: torch.Tensor

    @classmethod
    def from_adjacency(cls, adjacency: sp.spmatrix) -> "GraphTensors":
        coo = sp.coo_matrix(adjacency)
        off = coo.row != coo.col
        n = adjacency.shape[0]
        loops = np.arange(n)
        src = np.concatenate([coo.row[off], loops])
        dst = np.concatenate([coo.col[off], loops])
        is_self = np.concatenate([np.zeros(off.sum(), bool), np.ones(n, bool)])
        return cls(torch.as_tensor(src, dtype=torch.long), torch.as_tensor(dst, dtype=torch.long),
                   n, torch.as_tensor(is_self))


@dataclass
class GraphLayerStats:
    """Per-branch quantities consumed by the graph compression estimator."""

    edge_probs: list[torch.Tensor]
    prior_logits: torch.Tensor
    prior_mean: torch.Tensor
    prior_log_var: torch.Tensor
    edge_prior: float


@dataclass
class DualEncoding:
    s_dist: DiagonalGaussian
    t_dist: DiagonalGaussian
    s_sample: torch.Tensor
    t_sample: torch.Tensor
    graph_stats: dict[str, GraphLayerStats] = field(default_factory=dict)

    def __getitem__(self, idx) -> "DualEncoding":
        return DualEncoding(self.s_dist[idx], self.t_dist[idx], self.s_sample[idx], self.t_sample[idx],
                            self.graph_stats)


def _split_gaussian(out: torch.Tensor, latent_dim: int) -> DiagonalGaussian:
    mean, log_var = out[..., :latent_dim], out[..., latent_dim:]
    return DiagonalGaussian(mean, log_var.clamp(*LOG_VAR_RANGE))


class MLPEncoder(nn.Module):
    def __init__(self, in_dim: int, hidden_dim: int, latent_dim: int):
        super().__init__()
        self.latent_dim = latent_dim
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, 2 * latent_dim),
        )

    def forward(self, x, graph=None):
        return _split_gaussian(self.net(x), self.latent_dim), None


class GatedAttentionLayer(nn.Module):
    """Single-head attention aggregation with Bernoulli edge gates.

    Each edge gets a gate ``phi = sigmoid(leaky_relu(a_src.h_u + a_dst.h_v))``;
    neighbour messages are averaged with weights ``phi / sum(phi)``.
    """

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.lin = nn.Linear(in_dim, out_dim, bias=False)
        self.att_src = nn.Parameter(torch.empty(out_dim))
        self.att_dst = nn.Parameter(torch.empty(out_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim))
        nn.init.normal_(self.att_src, std=out_dim ** -0.5)
        nn.init.normal_(self.att_dst, std=out_dim ** -0.5)

    def forward(self, x, graph: GraphTensors):
        h = self.lin(x)
        score = F.leaky_relu((h * self.att_src).sum(-1)[graph.src] + (h * self.att_dst).sum(-1)[graph.dst], 0.2)
        phi = torch.sigmoid(score)
        norm = torch.zeros(graph.num_nodes, dtype=h.dtype).index_add(0, graph.dst, phi)
        weight = phi / norm[graph.dst]
        out = torch.zeros_like(h).index_add(0, graph.dst, weight.unsqueeze(-1) * h[graph.src])
        return out + self.bias, phi


class GraphEncoder(nn.Module):
    """Two gated-attention layers producing a Gaussian per node, plus a
    learnable Gaussian-mixture prior for the feature compression term."""

    def __init__(self, in_dim: int, hidden_dim: int, latent_dim: int, prior_components: int = 4,
                 edge_prior: float = 0.5):
        super().__init__()
        self.latent_dim = latent_dim
        self.edge_prior = edge_prior
        self.layer1 = GatedAttentionLayer(in_dim, hidden_dim)
        self.layer2 = GatedAttentionLayer(hidden_dim, 2 * latent_dim)
        self.prior_logits = nn.Parameter(torch.zeros(prior_components))
        self.prior_mean = nn.Parameter(torch.randn(prior_components, latent_dim))
        self.prior_log_var = nn.Parameter(torch.zeros(prior_components, latent_dim))

    def forward(self, x, graph: GraphTensors):
        h, phi1 = self.layer1(x, graph)
        h = F.elu(h)
        out, phi2 = self.layer2(h, graph)
        keep = ~graph.is_self
        stats = GraphLayerStats([phi1[keep], phi2[keep]], self.prior_logits, self.prior_mean,
                                self.prior_log_var, self.edge_prior)
        return _split_gaussian(out, self.latent_dim), stats


class Discriminator(nn.Module):
    """Scores ((s, y), (t, y')) pairs; output is the probability of a joint pair."""

    def __init__(self, latent_dim: int, num_classes: int, hidden_dim: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(2 * (latent_dim + num_classes), hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, 1),
        )

    def logit(self, s, y, t, y_prime):
        z = self.net(torch.cat([s, y, t, y_prime], dim=-1)).squeeze(-1)
        return z.clamp(-DISC_LOGIT_CLAMP, DISC_LOGIT_CLAMP)

    def forward(self, s, y, t, y_prime):
        return torch.sigmoid(self.logit(s, y, t, y_prime))


class LaTIBModel(nn.Module):
    """Encoders S (clean label space) and T (noise space) with one decoder.

    ``mode`` is ``"vector"`` (MLP backbone) or ``"graph"`` (attention backbone
    over a fixed graph passed to :meth:`encode`).
    """

    def __init__(self, in_dim: int, num_classes: int, latent_dim: int = 16, hidden_dim: int = 128,
                 mode: str = "vector", seed: int = 0, disc_hidden: int = 64):
        super().__init__()
        if mode not in ("vector", "graph"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.latent_dim = latent_dim
        # initialise in float64 whatever the global default, so weights do not depend on it
        prev = torch.get_default_dtype()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            torch.set_default_dtype(torch.float64)
            try:
                enc = MLPEncoder if mode == "vector" else GraphEncoder
                self.encoder_s = enc(in_dim, hidden_dim, latent_dim)
                self.encoder_t = enc(in_dim, hidden_dim, latent_dim)
                self.decoder = nn.Linear(latent_dim, num_classes)
                self.discriminator = Discriminator(latent_dim, num_classes, disc_hidden)
            finally:
                torch.set_default_dtype(prev)
        self.double()

    def q_parameters(self) -> list[nn.Parameter]:
        return [*self.encoder_s.parameters(), *self.encoder_t.parameters(), *self.decoder.parameters()]

    def d_parameters(self) -> list[nn.Parameter]:
        return list(self.discriminator.parameters())

    def _check_features(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected features of shape (N, {self.in_dim}), got {tuple(x.shape)}")

    def encode(self, x, graph: GraphTensors | None = None, *, sample: bool | None = None,
               generator: torch.Generator | None = None, noise: tuple | None = None) -> DualEncoding:
        """Encode through both branches.

        ``sample`` defaults to ``self.training``; when false the mean is
        returned as the sample. ``noise`` pins the standard-normal draws
        ``(eps_s, eps_t)``; otherwise they come from ``generator``.
        """
        x = torch.as_tensor(x, dtype=torch.float64)
        self._check_features(x)
        if self.mode == "graph" and graph is None:
            raise ValueError("graph mode needs the graph tensors")
        s_dist, s_stats = self.encoder_s(x, graph)
        t_dist, t_stats = self.encoder_t(x, graph)
        if sample is None:
            sample = self.training
        if not sample:
            s, t = s_dist.mean, t_dist.mean
        else:
            if noise is None:
                noise = (torch.randn(s_dist.mean.shape, generator=generator, dtype=x.dtype),
                         torch.randn(t_dist.mean.shape, generator=generator, dtype=x.dtype))
            s, t = s_dist.rsample(noise[0]), t_dist.rsample(noise[1])
        stats = {"s": s_stats, "t": t_stats} if self.mode == "graph" else {}
        return DualEncoding(s_dist, t_dist, s, t, stats)

    def decode(self, z):
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"latent of width {z.shape[-1]} does not match decoder width {self.latent_dim}")
        logits = self.decoder(z)
        return logits, torch.softmax(logits, dim=-1)

    def discriminate(self, s, y, t, y_prime):
        for v in (s, t):
            if v.shape[-1] != self.latent_dim:
                raise ValueError("latent width mismatch in discriminator input")
        for v in (y, y_prime):
            if v.shape[-1] != self.num_classes:
                raise ValueError("label width mismatch in discriminator input")
        return self.discriminator(s, y, t, y_prime)

    @torch.no_grad()
    def predict(self, x, graph: GraphTensors | None = None):
        """Eval-mode (mean latent) class probabilities of both branches as numpy."""
        was = self.training
        self.eval()
        try:
            enc = self.encode(x, graph, sample=False)
            return self.decode(enc.s_sample)[1].numpy(), self.decode(enc.t_sample)[1].numpy()
        finally:
            self.train(was)
