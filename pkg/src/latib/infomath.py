"""Information quantities: Gaussian closed forms, Monte-Carlo JS, smooth minimum,
and an exact dense-table oracle for discrete mutual information.

Everything is in nats.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch

LOG_VAR_RANGE = (-10.0, 10.0)
LOG2 = math.log(2.0)
MAX_TABLE_CELLS = 10 ** 6


# ---------------------------------------------------------------------------
# diagonal Gaussians

@dataclass(frozen=True, eq=False)
class DiagonalGaussian:
    """Batch of diagonal Gaussians; the last axis is the latent dimension."""

    mean: torch.Tensor
    log_var: torch.Tensor

    def __post_init__(self):
        mean = torch.as_tensor(self.mean, dtype=torch.float64) if not torch.is_tensor(self.mean) else self.mean
        log_var = torch.as_tensor(self.log_var, dtype=mean.dtype) if not torch.is_tensor(self.log_var) else self.log_var
        if mean.shape != log_var.shape:
            raise ValueError(f"mean shape {tuple(mean.shape)} != log_var shape {tuple(log_var.shape)}")
        if not torch.isfinite(log_var).all():
            raise ValueError("log_var must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_var", log_var.clamp(*LOG_VAR_RANGE))

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.log_var)

    def log_prob(self, x: torch.Tensor) -> torch.Tensor:
        """Log density of ``x``; broadcast over leading sample axes."""
        z = (x - self.mean) ** 2 / torch.exp(self.log_var)
        return -0.5 * (z + self.log_var + math.log(2 * math.pi)).sum(-1)

    def rsample(self, noise: torch.Tensor) -> torch.Tensor:
        return self.mean + self.std * noise

    def detach(self) -> "DiagonalGaussian":
        return DiagonalGaussian(self.mean.detach(), self.log_var.detach())

    def __getitem__(self, idx) -> "DiagonalGaussian":
        return DiagonalGaussian(self.mean[idx], self.log_var[idx])


def kl_to_standard_normal(g: DiagonalGaussian) -> torch.Tensor:
    """KL(g || N(0, I)) summed over the latent axis (one value per batch row)."""
    return 0.5 * (g.mean ** 2 + torch.exp(g.log_var) - g.log_var - 1.0).sum(-1)


def antithetic_noise(num_samples: int, dim: int, generator: torch.Generator | None = None,
                     dtype=torch.float64) -> torch.Tensor:
    """``num_samples`` standard-normal rows built from reflected pairs (eps, -eps)."""
    half = (num_samples + 1) // 2
    eps = torch.randn(half, dim, generator=generator, dtype=dtype)
    return torch.cat([eps, -eps], dim=0)[:num_samples]


def gaussian_js(g1: DiagonalGaussian, g2: DiagonalGaussian, noise: torch.Tensor) -> torch.Tensor:
    """Monte-Carlo JS divergence between row-matched Gaussians, differentiable.

    ``noise`` has shape (M, k) or (B, M, k). The same standard-normal draws feed
    both halves of the estimator, so swapping the arguments reorders the two
    halves and nothing else.
    """
    if g1.dim != g2.dim:
        raise ValueError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    if noise.shape[-1] != g1.dim:
        raise ValueError("noise dimension does not match the Gaussians")
    m1, lv1 = g1.mean.unsqueeze(-2), g1.log_var.unsqueeze(-2)
    m2, lv2 = g2.mean.unsqueeze(-2), g2.log_var.unsqueeze(-2)
    p = DiagonalGaussian(m1, lv1)
    q = DiagonalGaussian(m2, lv2)

    def half(src: DiagonalGaussian) -> torch.Tensor:
        x = src.rsample(noise)
        lp, lq = p.log_prob(x), q.log_prob(x)
        lm = torch.logaddexp(lp, lq) - LOG2
        return (src.log_prob(x) - lm).mean(-1)

    js = 0.5 * (half(p) + half(q))
    return js.clamp(0.0, LOG2)


def js_divergence(g1: DiagonalGaussian, g2: DiagonalGaussian, num_samples: int = 64, seed: int = 0):
    """Seeded JS estimate with ``num_samples`` draws per distribution.

    Returns a float for unbatched inputs and a numpy vector for batches.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    if g1.dim != g2.dim:
        raise ValueError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    gen = torch.Generator().manual_seed(int(seed))
    noise = antithetic_noise(num_samples, g1.dim, gen, g1.mean.dtype)
    with torch.no_grad():
        out = gaussian_js(g1, g2, noise)
    return float(out) if out.ndim == 0 else out.numpy()


def softmin(a, b, lambda_smooth: float):
    """Smooth minimum -(1/lambda) log(exp(-lambda a) + exp(-lambda b)).

    Works on floats, numpy arrays and tensors; ``lambda_smooth`` may broadcast.
    """
    if np.any(np.asarray(lambda_smooth) <= 0):
        raise ValueError("lambda_smooth must be > 0")
    # min(a, b) minus a non-negative correction, so the result never rounds above the min
    if torch.is_tensor(a) or torch.is_tensor(b):
        a, b = torch.as_tensor(a), torch.as_tensor(b)
        return torch.minimum(a, b) - torch.log1p(torch.exp(-lambda_smooth * (a - b).abs())) / lambda_smooth
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    out = np.minimum(a, b) - np.log1p(np.exp(-lambda_smooth * np.abs(a - b))) / lambda_smooth
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# discrete oracle

class DiscreteJoint:
    """Dense joint table over named finite variables (one axis per name)."""

    def __init__(self, table, names: Sequence[str]):
        table = np.asarray(table, dtype=np.float64)
        names = tuple(names)
        if table.ndim != len(names) or len(set(names)) != len(names):
            raise ValueError("need one unique name per table axis")
        if table.size > MAX_TABLE_CELLS:
            raise ValueError(f"table has {table.size} cells; the oracle is capped at {MAX_TABLE_CELLS}")
        if (table < 0).any():
            raise ValueError("probabilities must be non-negative")
        if abs(table.sum() - 1.0) > 1e-12:
            raise ValueError(f"table sums to {table.sum()!r}, not 1")
        self.table = table
        self.names = names

    def __repr__(self):
        return f"DiscreteJoint({dict(zip(self.names, self.table.shape))})"

    def axes(self, variables: Iterable[str]) -> tuple[int, ...]:
        out = []
        for v in variables:
            if v not in self.names:
                raise KeyError(f"unknown variable {v!r}; have {self.names}")
            out.append(self.names.index(v))
        return tuple(sorted(out))

    def marginal(self, variables: Iterable[str]) -> np.ndarray:
        keep = self.axes(variables)
        drop = tuple(i for i in range(self.table.ndim) if i not in keep)
        return self.table.sum(axis=drop)

    def entropy(self, variables: Iterable[str]) -> float:
        variables = list(variables)
        if not variables:
            return 0.0
        p = self.marginal(variables).ravel()
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())

    def with_copy(self, source: str, name: str) -> "DiscreteJoint":
        """Append a variable that is an exact copy of ``source``."""
        axis = self.names.index(source)
        k = self.table.shape[axis]
        eye = np.eye(k).reshape([k if i == axis else 1 for i in range(self.table.ndim)] + [k])
        return DiscreteJoint(self.table[..., None] * eye, self.names + (name,))

    @staticmethod
    def from_factors(shape: dict[str, int], factor) -> "DiscreteJoint":
        """Build a joint by evaluating ``factor(assignment_dict)`` on every cell."""
        names = tuple(shape)
        table = np.zeros(tuple(shape.values()))
        for cell in itertools.product(*(range(k) for k in shape.values())):
            table[cell] = factor(dict(zip(names, cell)))
        return DiscreteJoint(table / table.sum(), names)


def _check_disjoint(*groups) -> list[list[str]]:
    groups = [list(g) for g in groups]
    seen: set[str] = set()
    for g in groups:
        if not g:
            raise ValueError("variable sets must be non-empty")
        if seen & set(g):
            raise ValueError(f"variable sets overlap on {sorted(seen & set(g))}")
        seen |= set(g)
    return groups


def discrete_mi(joint: DiscreteJoint, vars_a, vars_b) -> float:
    """Exact I(A;B) = sum p(a,b) log p(a,b) / (p(a) p(b))."""
    a, b = _check_disjoint(vars_a, vars_b)
    pab = joint.marginal(a + b)
    ax = joint.axes(a + b)
    a_pos = [ax.index(i) for i in joint.axes(a)]
    b_pos = [ax.index(i) for i in joint.axes(b)]
    pa = pab.sum(axis=tuple(b_pos), keepdims=True)
    pb = pab.sum(axis=tuple(a_pos), keepdims=True)
    denom = pa * pb
    nz = pab > 0
    val = float((pab[nz] * np.log(pab[nz] / np.broadcast_to(denom, pab.shape)[nz])).sum())
    return max(val, 0.0) if val > -1e-12 else val


def discrete_conditional_mi(joint: DiscreteJoint, vars_a, vars_b, vars_cond) -> float:
    """Exact I(A;B|C) via H(A,C) + H(B,C) - H(A,B,C) - H(C)."""
    a, b, c = _check_disjoint(vars_a, vars_b, vars_cond)
    val = joint.entropy(a + c) + joint.entropy(b + c) - joint.entropy(a + b + c) - joint.entropy(c)
    return max(val, 0.0) if val > -1e-12 else val


def fano_disagreement_bound(cond_entropy: float, num_classes: int) -> float:
    """Lower bound (H(Y'|D) - 1) / log(|Y| - 1) on the two-stage disagreement rate.

    May be negative, in which case it is vacuous.
    """
    if num_classes <= 2:
        raise ValueError("num_classes must be >= 3: log(|Y| - 1) vanishes for two classes")
    if cond_entropy < 0:
        raise ValueError("conditional entropy must be non-negative")
    return (cond_entropy - 1.0) / math.log(num_classes - 1)
