"""Acceptance suite: one test per criterion, each at its stated tolerance and time budget."""
import time

import numpy as np
import pytest

from ovilab import diagnostics as dg
from ovilab.kernels import (DataBlock, feature_kernel, krr_fit, linear_kernel, predict_many,
                            primal_bonus, primal_predict, rbf_kernel, sphere_normalize, ucb_bonus_many)
from ovilab.kovi import KoviConfig, run_kovi, run_uniform
from ovilab.mdp import make_linear_mdp, make_sphere_mdp
from ovilab.novi import (NoviConfig, OracleConfig, empirical_ntk_kernel, forward, init_symmetric,
                         run_novi, tangent_features)
from ovilab.spectrum import bt_schedule, ntk_closed_form, ntk_kfun, spherical_spectrum

SEEDS = range(5)


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def _linear_fixture():
    return make_linear_mdp(6, 20, 4, 3, rng_seed=0)


def _sphere_fixture():
    return make_sphere_mdp(3, 5, 3, 2, rng_seed=0)


# --- cached runs shared with the telescope criterion ---------------------------------

@pytest.fixture(scope="module")
def c3_run():
    mdp, ker = make_linear_mdp(4, 8, 3, 3, rng_seed=7)
    with Timer() as tm:
        rec, agent, trace = run_kovi(mdp, ker, KoviConfig(T=200, beta=1.0), rng_seed=0)
    return mdp, agent, trace, tm.elapsed


@pytest.fixture(scope="module")
def c4_runs():
    mdp, ker = _linear_fixture()
    beta = float(bt_schedule(ker.decay, mdp.H, 500, C_b=4.0))
    with Timer() as tm:
        runs = [run_kovi(mdp, ker, KoviConfig(T=500, beta=beta), rng_seed=s) for s in SEEDS]
    return mdp, beta, runs, tm.elapsed


@pytest.fixture(scope="module")
def c5_runs():
    mdp, ker = _linear_fixture()
    beta = float(bt_schedule(ker.decay, mdp.H, 2000, C_b=1.0 / 64))
    with Timer() as tm:
        runs = [run_kovi(mdp, ker, KoviConfig(T=2000, beta=beta), rng_seed=s) for s in SEEDS]
        base = [run_uniform(mdp, 2000, rng_seed=s) for s in SEEDS]
    return mdp, beta, runs, base, tm.elapsed


@pytest.fixture(scope="module")
def c8_runs():
    mdp = _sphere_fixture()
    oracle = OracleConfig(step="auto", method="nesterov")
    with Timer() as tm:
        net = init_symmetric(1024, 3, 0, "quadratic")
        frozen = run_novi(mdp, net, NoviConfig(T=50, beta=0.5, frozen=True), rng_seed=0)
        kovi = run_kovi(mdp, empirical_ntk_kernel(net), KoviConfig(T=50, beta=0.5), rng_seed=0)
        wide = init_symmetric(4096, 3, 0, "quadratic")
        full = run_novi(mdp, wide, NoviConfig(T=50, beta=0.5, shadow=True, oracle=oracle), rng_seed=0)
    return mdp, frozen, kovi, full, tm.elapsed


@pytest.fixture(scope="module")
def c9_runs():
    mdp = _sphere_fixture()
    with Timer() as tm:
        runs = [run_kovi(mdp, ntk_closed_form("sine", 3), KoviConfig(T=100, beta=0.5), rng_seed=s)
                for s in range(100)]
    return mdp, runs, tm.elapsed


# --- criteria -----------------------------------------------------------------------

def test_criterion_01_primal_dual(acceptance_log):
    rng = np.random.default_rng(101)
    worst = 0.0
    with Timer() as tm:
        for d in range(1, 9):
            W = rng.standard_normal((d, 5))
            maps = [(lambda X: X, d), (lambda X, W=W: np.tanh(X @ W.T), 5)]
            for fmap, dim in maps:
                ker = feature_kernel(fmap)
                X, Q, y = rng.standard_normal((50, dim)), rng.standard_normal((20, dim)), rng.standard_normal(50)
                lam = float(rng.uniform(0.5, 2.0))
                blk = DataBlock.from_points(ker, lam, X)
                dual_mean = predict_many(blk, krr_fit(blk, y), Q)
                dual_bonus = ucb_bonus_many(blk, Q)
                Phi, Psi = fmap(X), fmap(Q)
                worst = max(worst, np.abs(dual_mean - primal_predict(Phi, y, Psi, lam)).max(),
                            np.abs(dual_bonus - primal_bonus(Phi, Psi, lam)).max())
    ok = worst < 1e-8 and tm.elapsed < 1.0
    acceptance_log(1, ok, f"max dual/primal gap {worst:.2e} (< 1e-8), {tm.elapsed:.2f}s (< 1s)")
    assert ok


def test_criterion_02_schur_ledger(acceptance_log):
    rng = np.random.default_rng(202)
    with Timer() as tm:
        err_rbf = dg.schur_ledger(rbf_kernel(0.8), 1.0, rng.standard_normal((200, 3)))
        err_ntk = dg.schur_ledger(ntk_closed_form("sine", 3), 1.5,
                                  sphere_normalize(rng.standard_normal((200, 3))))
    worst = max(err_rbf, err_ntk)
    ok = worst < 1e-8 and tm.elapsed < 1.0
    acceptance_log(2, ok, f"max ledger error {worst:.2e} over 200 appends (< 1e-8), {tm.elapsed:.2f}s (< 1s)")
    assert ok


def test_criterion_03_decomposition(c3_run, acceptance_log):
    mdp, _, trace, t_run = c3_run
    with Timer() as tm:
        res = dg.decomposition_check(trace, mdp)["residual"]
    total = t_run + tm.elapsed
    ok = len(res) == 200 and res.max() < 1e-8 and total < 30
    acceptance_log(3, ok, f"max per-episode residual {res.max():.2e} (< 1e-8), {total:.1f}s (< 30s)")
    assert ok


def test_criterion_04_optimism(c4_runs, acceptance_log):
    mdp, beta, runs, t_run = c4_runs
    with Timer() as tm:
        freqs = [dg.optimism_frequency(trace, mdp, tol=1e-6) for _, _, trace in runs]
    total = t_run + tm.elapsed
    ok = min(freqs) >= 0.95 and total < 300
    acceptance_log(4, ok, f"beta={beta:.2f}, optimism frequency per seed "
                          f"{[round(f, 4) for f in freqs]} (>= 0.95), {total:.1f}s (< 300s)")
    assert ok


def test_criterion_05_sublinear(c5_runs, acceptance_log):
    _, beta, runs, base, total = c5_runs
    expo = np.median([rec.exponent() for rec, _, _ in runs])
    ratio = np.median([rec.cum_regret[-1] / b.cum_regret[-1] for (rec, _, _), b in zip(runs, base)])
    ok = expo <= 0.85 and ratio <= 1 / 3 and total < 600
    acceptance_log(5, ok, f"beta={beta:.3f}, median exponent {expo:.3f} (<= 0.85), median regret ratio "
                          f"to uniform {ratio:.3f} (<= 1/3), {total:.1f}s (< 600s)")
    assert ok


def test_criterion_06_quadratic_spectrum(acceptance_log):
    msgs, ok = [], True
    with Timer() as tm:
        for d in (3, 4, 5):
            spec = spherical_spectrum(ntk_kfun("quadratic", d), d, 8, kernel="ntk_quadratic")
            rho = {j: r for j, r, _ in spec.eigenvalues}
            n = spec.nonzero_count()
            small = max(abs(rho[j]) for j in (1, 3, 4, 5))
            ok &= n == d * (d + 1) // 2 and small < 1e-6
            msgs.append(f"d={d}: {n} nonzero, max|rho_1,3,4,5|={small:.1e}")
    ok &= tm.elapsed < 10
    acceptance_log(6, ok, "; ".join(msgs) + f", {tm.elapsed:.2f}s (< 10s)")
    assert ok


def test_criterion_07_ntk_convergence(acceptance_log):
    d = 3
    probes = np.random.default_rng(123)
    Z1 = sphere_normalize(probes.standard_normal((20, d)))
    Z2 = sphere_normalize(probes.standard_normal((20, d)))
    msgs, ok = [], True
    with Timer() as tm:
        for act in ("quadratic", "sine"):
            target = ntk_kfun(act, d)(np.sum(Z1 * Z2, axis=1))
            err = {}
            for m in (1024, 4096, 8192):
                sup = []
                for seed in range(10):
                    net = init_symmetric(m, d, seed, act)
                    Km = np.sum(tangent_features(net, Z1) * tangent_features(net, Z2), axis=1)
                    sup.append(np.abs(Km - target).max())
                err[m] = float(np.mean(sup))
            ratio = err[4096] / err[1024]
            ok &= ratio <= 0.7 and err[8192] < 0.05
            msgs.append(f"{act}: ratio {ratio:.2f} (<= 0.7), err@8192 {err[8192]:.4f} (< 0.05)")
    ok &= tm.elapsed < 120
    acceptance_log(7, ok, f"d={d}; " + "; ".join(msgs) + f", {tm.elapsed:.1f}s (< 120s)")
    assert ok


def test_criterion_08_linearization(c8_runs, acceptance_log):
    _, (_, _, tr_frozen), (_, _, tr_kovi), (rec_full, _, _), total = c8_runs
    same = max(np.abs(a - b).max() for a, b in zip(tr_frozen.Q, tr_kovi.Q))
    gap = float(rec_full.extra["linearization_gap"].max())
    ok = same < 1e-6 and gap < 0.05 and total < 600
    acceptance_log(8, ok, f"frozen NOVI vs KOVI(K_m) {same:.1e} (< 1e-6, m=1024), full vs frozen gap "
                          f"{gap:.1e} (< 0.05, m=4096), {total:.1f}s (< 600s)")
    assert ok


def test_criterion_09_azuma(c9_runs, acceptance_log):
    mdp, runs, t_run = c9_runs
    with Timer() as tm:
        out = dg.azuma_check([tr for _, _, tr in runs], mdp, zeta_prob=0.01)
    total = t_run + tm.elapsed
    inside = int(round(out["pass_frac"] * len(runs)))
    ok = inside >= 99 and total < 300
    acceptance_log(9, ok, f"{inside}/100 seeds inside {out['bound']:.1f} (max |sum| "
                          f"{np.abs(out['sums']).max():.2f}), {total:.1f}s (< 300s)")
    assert ok


def test_criterion_10_telescope_and_gradients(c3_run, c4_runs, c5_runs, c8_runs, c9_runs, acceptance_log):
    with Timer() as tm:
        slacks = list(dg.trace_telescope(c3_run[2], c3_run[1].blocks))
        for _, agent, trace in c4_runs[2] + c5_runs[2] + c9_runs[1]:
            slacks.extend(dg.trace_telescope(trace, agent.blocks))
        _, (_, frozen, tr_frozen), (_, kovi, tr_kovi), (_, full, _), _ = c8_runs
        slacks.extend(dg.trace_telescope(tr_frozen, frozen.precision))
        slacks.extend(dg.trace_telescope(tr_kovi, kovi.blocks))
        # full NOVI appends features at the refit weights, so replay its blocks
        slacks.extend(dg.block_audit(blk)[0] for blk in full.precision)

        rng = np.random.default_rng(1010)
        worst = 0.0
        for i in range(50):
            act = ("quadratic", "sine", ("relu_power", 1))[i % 3]
            net = init_symmetric(8, 3, i, act)
            W = net.W0 + 0.3 * rng.standard_normal(net.W0.shape)
            z = sphere_normalize(rng.standard_normal((1, 3)))
            D = rng.standard_normal(W.shape)
            eps = 1e-5
            fd = (forward(net, z, W + eps * D) - forward(net, z, W - eps * D))[0] / (2 * eps)
            an = tangent_features(net, z, W)[0] @ D.ravel()
            worst = max(worst, abs(fd - an) / max(abs(an), 1e-3))
    min_slack = float(min(slacks))
    ok = min_slack >= 0 and worst < 1e-5 and tm.elapsed < 30
    acceptance_log(10, ok, f"min telescope slack {min_slack:.3f} over {len(slacks)} blocks (>= 0), "
                           f"worst FD error {worst:.1e} (< 1e-5), {tm.elapsed:.1f}s (< 30s)")
    assert ok
