"""End-to-end acceptance suite: one test per criterion, each printing a verdict line.

Tolerances are the published ones; nothing here is tuned to make a check pass.
The benchmark fixtures share their training runs through session fixtures.
"""

import math
import time

import numpy as np
import pytest
import torch

from acceptance_log import record
from gradaudit import AUDITS, audit
from latib.bounds import verify_all, verify_degradation
from latib.datamodel import RunConfig, build_config
from latib.harness.experiment import BLOBS, EPSILONS, SBM, fixture_config, run_seed
from latib.infomath import DiagonalGaussian, js_divergence, kl_to_standard_normal, softmin
from latib.losses import cyclic_shift, discriminator_loss
from latib.model import LaTIBModel
from latib.selector import select_from_scores
from latib.trainer import init_state, run_injection, run_robust, run_warmup, train
from test_infomath import quadrature_js
from test_selector import separable_fixture

SEEDS = range(5)


def fixture_cfg(kind):
    return fixture_config(build_config({}), kind)


def _runs(kind, spec, epsilons=None):
    cfg = fixture_cfg(kind)
    return [run_seed(cfg, spec, s, baseline=True, ablations=("no-ki", "no-rt"), epsilons=epsilons) for s in SEEDS]


@pytest.fixture(scope="session")
def vector_runs():
    return _runs("blobs", BLOBS, EPSILONS)


@pytest.fixture(scope="session")
def graph_runs():
    return _runs("sbm", SBM)


def mean_acc(runs, name):
    return float(np.mean([r.accuracy[name] for r in runs]))


# ---------------------------------------------------------------------------

def test_criterion_01_bound_suite():
    t0 = time.perf_counter()
    recs = verify_all(1000, seed=0, eps=0.01)
    elapsed = time.perf_counter() - t0
    parts = [f"{r.name} trials={r.trials} min_slack={r.min_slack:.2e} violations={r.violations}" for r in recs]
    ok = all(r.trials == 1000 and r.min_slack >= -1e-10 for r in recs) and elapsed < 60
    assert record(1, "discrete-oracle bounds", ok, "; ".join(parts) + f"; {elapsed:.1f}s"), parts


def test_criterion_02_fano_degradation():
    r = verify_degradation(100, seed=0)
    vac = r.extra["max_bound_when_deterministic"]
    ok = r.trials == 100 and r.violations == 0 and vac <= 0
    assert record(2, "two-stage degradation bound", ok,
                  f"min slack {r.min_slack:.3e} over {r.trials} channels, {r.extra['non_vacuous_cases']} informative, "
                  f"max bound on deterministic channels {vac:.3f}")


def test_criterion_03_kl_and_js_estimators():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(1, 5))
        mu, lv = rng.normal(0, 0.5, k), rng.uniform(-0.5, 0.5, k)
        g = DiagonalGaussian(torch.tensor(mu), torch.tensor(lv))
        x = mu + np.exp(lv / 2) * rng.standard_normal((100_000, k))
        log_g = -0.5 * ((x - mu) ** 2 / np.exp(lv) + lv + np.log(2 * np.pi)).sum(1)
        log_p = -0.5 * (x ** 2 + np.log(2 * np.pi)).sum(1)
        worst = max(worst, abs(float(kl_to_standard_normal(g)) - float((log_g - log_p).mean())))
    a = DiagonalGaussian(torch.tensor([0.0]), torch.tensor([0.0]))
    b = DiagonalGaussian(torch.tensor([1.0]), torch.tensor([math.log(2.0)]))
    js_err = abs(js_divergence(a, b, 100_000, 0) - quadrature_js(0.0, 1.0, 1.0, 2.0))
    ok = worst < 0.01 and js_err < 0.005
    assert record(3, "KL closed form vs MC, JS vs quadrature", ok, f"max KL gap {worst:.4f} (<0.01), JS gap {js_err:.5f} (<0.005)")


def test_criterion_04_gradient_audit():
    errs = {name: max(audit(name)) for name in AUDITS}
    ok = all(e <= 1e-4 for e in errs.values())
    assert record(4, "finite-difference gradient audit", ok,
                  ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + " (5 configs each, <=1e-4)")


def test_criterion_05_softmin_sandwich():
    g = torch.Generator().manual_seed(5)
    batches, size = 100_000, 16
    a = torch.rand(batches, size, generator=g, dtype=torch.float64) * 5
    b = torch.rand(batches, size, generator=g, dtype=torch.float64) * 5
    lam = torch.rand(batches, 1, generator=g, dtype=torch.float64) * 50 + 0.1
    sm = softmin(a, b, lam).mean(1)
    mn = torch.minimum(a, b).mean(1)
    mx = torch.maximum(a, b).mean(1)
    bad = int(((sm > mn) | (mn > mx)).sum())
    assert record(5, "softmin <= mean min <= mean max", bad == 0, f"{bad} violating batches out of {batches}")


@pytest.mark.slow
def test_criterion_06_selector_precision(vector_runs):
    loss, js, conf, obs, is_clean = separable_fixture()
    m = select_from_scores(loss, js, conf, obs, 2, 0.3, 0.9, 0.3)
    hand = float(is_clean[m.clean].mean())
    precs = [r.selector[0]["clean_precision"] for r in vector_runs]
    mean = float(np.mean(precs))
    ok = hand == 1.0 and mean >= 0.80
    assert record(6, "selector clean precision", ok,
                  f"separable fixture {hand:.3f}; blobs after warmup {mean:.3f} (>=0.80, base rate 0.60) per seed "
                  + str([round(p, 3) for p in precs]))


@pytest.mark.slow
def test_criterion_07_vector_benchmark(vector_runs):
    lat, base = mean_acc(vector_runs, "latib"), mean_acc(vector_runs, "baseline")
    slowest = max(r.seconds["latib"] for r in vector_runs)
    ok = lat - base >= 0.03 and slowest < 300
    assert record(7, "blobs LaT-IB vs baseline", ok,
                  f"LaT-IB {lat:.4f} baseline {base:.4f} gap {100 * (lat - base):+.2f} pts (>= +3); "
                  f"slowest seed {slowest:.0f}s (<300)")


@pytest.mark.slow
def test_criterion_08_graph_benchmark(graph_runs):
    lat, base = mean_acc(graph_runs, "latib"), mean_acc(graph_runs, "baseline")
    ok = lat - base >= 0.02
    assert record(8, "SBM LaT-IB vs baseline", ok,
                  f"LaT-IB {lat:.4f} baseline {base:.4f} gap {100 * (lat - base):+.2f} pts (>= +2)")


@pytest.mark.slow
def test_criterion_09_ablations(vector_runs, graph_runs):
    parts, ok = [], True
    for label, runs in (("blobs", vector_runs), ("sbm", graph_runs)):
        full, ki, rt = (mean_acc(runs, n) for n in ("latib", "latib/no-ki", "latib/no-rt"))
        ok &= full >= ki and full >= rt
        parts.append(f"{label}: full {full:.4f} no-KI {ki:.4f} no-RT {rt:.4f}")
    assert record(9, "full pipeline >= ablations", ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion_10_fgsm_sweep(vector_runs):
    exact = all(r.attack[m][0.0] == r.accuracy["latib" if m == "latib" else "baseline"]
                for r in vector_runs for m in ("latib", "baseline"))
    means = {m: [float(np.mean([r.attack[m][e] for r in vector_runs])) for e in EPSILONS] for m in ("latib", "baseline")}
    monotone = all(all(b <= a for a, b in zip(v, v[1:])) for v in means.values())
    drop = {m: v[0] - v[-1] for m, v in means.items()}
    ok = exact and monotone and drop["latib"] <= drop["baseline"]
    assert record(10, "FGSM sweep", ok,
                  f"eps=0 exact {exact}; LaT-IB {[round(v, 4) for v in means['latib']]} "
                  f"baseline {[round(v, 4) for v in means['baseline']]}; drop@0.2 LaT-IB {drop['latib']:.4f} "
                  f"vs baseline {drop['baseline']:.4f}")


def _calibration(coupled: bool, seed: int = 0, k: int = 2, n: int = 4000, steps: int = 1500, bs: int = 128):
    """Held-out accuracy of a discriminator trained with the package loss.

    All samples share one class label so that, for independent s and t, the
    joint of ((s, y), (t, y')) equals the product of its marginals.
    """
    g = torch.Generator().manual_seed(seed)
    m = LaTIBModel(2, 3, latent_dim=k, hidden_dim=4, seed=seed)

    def draw(size):
        s = torch.randn(size, k, generator=g, dtype=torch.float64)
        t = s.clone() if coupled else torch.randn(size, k, generator=g, dtype=torch.float64)
        y = torch.eye(3, dtype=torch.float64)[torch.zeros(size, dtype=torch.long)]
        return s, y, t

    s, y, t = draw(n)
    opt = torch.optim.Adam(m.d_parameters(), lr=3e-3)
    for _ in range(steps):
        idx = torch.randint(0, n, (bs,), generator=g)
        opt.zero_grad()
        discriminator_loss(m, s[idx], y[idx], t[idx], cyclic_shift(bs, g)).backward()
        opt.step()
    hs, hy, ht = draw(2000)
    perm = (torch.arange(2000) + 1) % 2000
    with torch.no_grad():
        pos = (m.discriminate(hs, hy, ht, hy) > 0.5).double().mean()
        neg = (m.discriminate(hs, hy, ht[perm], hy[perm]) < 0.5).double().mean()
    return float((pos + neg) / 2)


def test_criterion_11_discriminator_calibration():
    indep, coupled = _calibration(False), _calibration(True)
    ok = abs(indep - 0.5) <= 0.05 and coupled >= 0.95
    assert record(11, "discriminator calibration", ok,
                  f"independent pairs {indep:.4f} (0.5 +/- 0.05), coupled pairs {coupled:.4f} (>= 0.95)")


def test_criterion_12_determinism_and_isolation():
    from latib.harness.experiment import make_dataset

    ds = make_dataset(BLOBS, 0)
    cfg = fixture_cfg("blobs").with_(epochs_warmup=3, epochs_injection=3, epochs_robust=3)
    _, h1 = train(ds, cfg)
    _, h2 = train(ds, cfg)
    deterministic = h1 == h2

    state = init_state(ds, cfg)
    snap = lambda mod: [p.detach().clone() for p in mod.parameters()]
    same = lambda a, b: all(torch.equal(x, y) for x, y in zip(a, b))
    t0, d0 = snap(state.model.encoder_t), snap(state.model.discriminator)
    run_warmup(state, ds)
    warm_ok = same(t0, snap(state.model.encoder_t)) and same(d0, snap(state.model.discriminator))
    run_injection(state, ds)
    inj_ok = same(d0, snap(state.model.discriminator))

    ok_steps = []
    real_q, real_d = state.opt_q.step, state.opt_d.step

    def q_step(*a, **kw):
        before = snap(state.model.discriminator)
        out = real_q(*a, **kw)
        ok_steps.append(same(before, snap(state.model.discriminator)))
        return out

    def d_step(*a, **kw):
        before = [p.detach().clone() for p in state.model.q_parameters()]
        out = real_d(*a, **kw)
        ok_steps.append(same(before, [p.detach() for p in state.model.q_parameters()]))
        return out

    state.opt_q.step, state.opt_d.step = q_step, d_step
    run_robust(state, ds, epochs=1)
    alternation = len(ok_steps) > 0 and all(ok_steps)
    ok = deterministic and warm_ok and inj_ok and alternation
    assert record(12, "determinism and phase isolation", ok,
                  f"identical histories {deterministic}; warmup leaves T/discriminator {warm_ok}; "
                  f"injection leaves discriminator {inj_ok}; alternation freeze over {len(ok_steps)} steps {alternation}")
