"""Randomised verification of the objective's information inequalities.

Each check draws random finite joints with the required dependency structure,
evaluates both sides exactly with the discrete oracle and records the minimum
slack (right side minus left side; non-negative means the inequality holds).
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .infomath import DiscreteJoint, discrete_conditional_mi, discrete_mi, fano_disagreement_bound

SLACK_TOL = -1e-10
_CONCENTRATIONS = (0.1, 0.3, 1.0, 3.0)


@dataclass
class BoundRecord:
    name: str
    trials: int
    min_slack: float
    violations: int
    seconds: float
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.trials > 0 and self.min_slack >= SLACK_TOL

    def as_dict(self) -> dict:
        return {"record": "bound", "name": self.name, "trials": self.trials,
                "min_slack": self.min_slack, "violations": self.violations,
                "passed": self.passed, "seconds": round(self.seconds, 4), **self.extra}


def _dirichlet(rng, shape):
    alpha = rng.choice(_CONCENTRATIONS)
    flat = rng.dirichlet(np.full(int(np.prod(shape)), alpha))
    return flat.reshape(shape)


def _conditional(rng, parents: tuple[int, ...], child: tuple[int, ...]):
    """Random conditional table p(child | parents), shape parents + child."""
    alpha = rng.choice(_CONCENTRATIONS)
    n_child = int(np.prod(child))
    rows = rng.dirichlet(np.full(n_child, alpha), size=int(np.prod(parents)) or 1)
    return rows.reshape(parents + child)


def _sizes(rng, k, lo=2, hi=3):
    return tuple(int(v) for v in rng.integers(lo, hi + 1, size=k))


def random_joint(rng, names=("Y", "S", "T")) -> DiscreteJoint:
    shape = _sizes(rng, len(names))
    return DiscreteJoint(_dirichlet(rng, shape), names)


def random_markov_dst(rng) -> DiscreteJoint:
    """p(d) p(s|d) p(t|d): S and T conditionally independent given D."""
    nd, ns, nt = _sizes(rng, 3, hi=4)
    pd = _dirichlet(rng, (nd,))
    ps = _conditional(rng, (nd,), (ns,))
    pt = _conditional(rng, (nd,), (nt,))
    table = pd[:, None, None] * ps[:, :, None] * pt[:, None, :]
    return DiscreteJoint(table / table.sum(), ("D", "S", "T"))


def random_nuisance_chain(rng) -> DiscreteJoint:
    """p(y) p(dn) p(d|y,dn) p(s,t|d) with the nuisance independent of Y."""
    ny, nn, nd, ns, nt = _sizes(rng, 5)
    nd = int(rng.integers(2, 5))
    py = _dirichlet(rng, (ny,))
    pn = _dirichlet(rng, (nn,))
    pd = _conditional(rng, (ny, nn), (nd,))
    pst = _conditional(rng, (nd,), (ns, nt))
    table = (py[:, None, None, None, None] * pn[None, :, None, None, None]
             * pd[:, :, :, None, None] * pst[None, None, :, :, :])
    return DiscreteJoint(table / table.sum(), ("Y", "Dn", "D", "S", "T"))


# ---------------------------------------------------------------------------
# individual checks; each returns the slack of one joint

def slack_prediction_bound(j: DiscreteJoint) -> float:
    # I(Y;S,T) >= max(I(Y;S), I(Y;T))
    return discrete_mi(j, ["Y"], ["S", "T"]) - max(discrete_mi(j, ["Y"], ["S"]), discrete_mi(j, ["Y"], ["T"]))


def slack_compression_bound(j: DiscreteJoint) -> float:
    # I(D;S,T) <= I(D;S) + I(D;T) under S <-> D <-> T
    return discrete_mi(j, ["D"], ["S"]) + discrete_mi(j, ["D"], ["T"]) - discrete_mi(j, ["D"], ["S", "T"])


def slack_disentanglement_identity(j: DiscreteJoint) -> float:
    # I(S;T|Y) = I(S,Y;T,Y') - H(Y) with Y' an exact copy of Y; returns -|gap|
    jj = j.with_copy("Y", "Y_copy")
    gap = discrete_mi(jj, ["S", "Y"], ["T", "Y_copy"]) - j.entropy(["Y"]) - discrete_conditional_mi(j, ["S"], ["T"], ["Y"])
    return -abs(gap)


def slack_nuisance_invariance(j: DiscreteJoint) -> float:
    # I(Dn;S,T) <= -I(Y;S,T) + I(D;S,T)
    return (-discrete_mi(j, ["Y"], ["S", "T"]) + discrete_mi(j, ["D"], ["S", "T"])
            - discrete_mi(j, ["Dn"], ["S", "T"]))


def feature_convergence_precondition(j: DiscreteJoint, eps: float) -> bool:
    k = max(discrete_mi(j, ["S"], ["T"]), eps) / 2
    return max(discrete_mi(j, ["Yn"], ["S"]), discrete_mi(j, ["Yc"], ["T"])) <= k


def slack_feature_convergence(j: DiscreteJoint, eps: float) -> float:
    # -I(Yc;S) - I(Yn;T) - eps <= -I(Y;S,T) + I(S;T|Y) with Y = (Yc, Yn)
    y = ["Yc", "Yn"]
    rhs = -discrete_mi(j, y, ["S", "T"]) + discrete_conditional_mi(j, ["S"], ["T"], y)
    lhs = -discrete_mi(j, ["Yc"], ["S"]) - discrete_mi(j, ["Yn"], ["T"]) - eps
    return rhs - lhs


# ---------------------------------------------------------------------------
# suites

def _run(name, trials, draw, slack, **extra) -> BoundRecord:
    t0 = time.perf_counter()
    slacks = np.array([slack(draw()) for _ in range(trials)])
    return BoundRecord(name, trials, float(slacks.min()) if trials else float("nan"),
                       int((slacks < SLACK_TOL).sum()), time.perf_counter() - t0, extra)


def verify_feature_convergence(trials: int, rng, eps: float = 0.01, max_draws: int = 200_000) -> BoundRecord:
    """Rejection-sample (Yc, Yn, S, T) joints meeting the precondition."""
    t0 = time.perf_counter()
    slacks = []
    draws = 0
    while len(slacks) < trials and draws < max_draws:
        draws += 1
        j = random_joint(rng, ("Yc", "Yn", "S", "T"))
        if feature_convergence_precondition(j, eps):
            slacks.append(slack_feature_convergence(j, eps))
    arr = np.array(slacks)
    return BoundRecord("feature_convergence", len(slacks), float(arr.min()) if len(arr) else float("nan"),
                       int((arr < SLACK_TOL).sum()), time.perf_counter() - t0,
                       {"eps": eps, "draws": draws, "acceptance_rate": len(slacks) / max(draws, 1)})


def verify_all(trials: int = 1000, seed: int = 0, eps: float = 0.01) -> list[BoundRecord]:
    rng = np.random.default_rng(seed)
    return [
        _run("prediction_upper_bound", trials, lambda: random_joint(rng), slack_prediction_bound),
        _run("compression_upper_bound", trials, lambda: random_markov_dst(rng), slack_compression_bound),
        _run("disentanglement_identity", trials, lambda: random_joint(rng), slack_disentanglement_identity),
        _run("nuisance_invariance", trials, lambda: random_nuisance_chain(rng), slack_nuisance_invariance),
        verify_feature_convergence(trials, rng, eps),
    ]


# ---------------------------------------------------------------------------
# two-stage degradation (Fano) check

def min_disagreement(p_d: np.ndarray, channel: np.ndarray) -> tuple[float, tuple[int, ...]]:
    """Exhaustive min over deterministic f2 of P(f2(D) != Y') with Y' ~ channel[d]."""
    n_in, n_out = channel.shape
    best, arg = np.inf, None
    for f in itertools.product(range(n_out), repeat=n_in):
        err = float(sum(p_d[d] * (1.0 - channel[d, f[d]]) for d in range(n_in)))
        if err < best:
            best, arg = err, f
    return best, arg


def conditional_entropy(p_d: np.ndarray, channel: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(channel > 0, channel * np.log(channel), 0.0)
    return float(-(p_d[:, None] * terms).sum())


def verify_degradation(trials: int = 100, seed: int = 0, n_in: int = 3, n_out: int = 3) -> BoundRecord:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    slacks, informative = [], 0
    for i in range(trials):
        p_d = rng.dirichlet(np.ones(n_in))
        alpha = (0.2, 1.0, 5.0, 50.0)[i % 4]
        channel = rng.dirichlet(np.full(n_out, alpha), size=n_in)
        h = conditional_entropy(p_d, channel)
        bound = fano_disagreement_bound(h, n_out)
        informative += bound > 0
        slacks.append(min_disagreement(p_d, channel)[0] - bound)
    # deterministic channels: H(Y'|D) = 0, the bound must be vacuous
    vacuous = []
    for f in itertools.product(range(n_out), repeat=n_in):
        channel = np.eye(n_out)[list(f)]
        p_d = rng.dirichlet(np.ones(n_in))
        vacuous.append(fano_disagreement_bound(conditional_entropy(p_d, channel), n_out))
    arr = np.array(slacks)
    return BoundRecord("two_stage_degradation", trials, float(arr.min()), int((arr < SLACK_TOL).sum()),
                       time.perf_counter() - t0,
                       {"non_vacuous_cases": int(informative), "max_bound_when_deterministic": float(max(vacuous))})
