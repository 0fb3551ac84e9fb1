"""Invariant suite run by ``ovilab validate`` on the bundled fixtures."""
import json
import math
from importlib import resources

import numpy as np

from . import diagnostics as dg
from .kernels import (DataBlock, feature_kernel, gram_matrix, info_gain, krr_fit, linear_kernel,
                      predict_many, primal_bonus, primal_predict, ucb_bonus_many)
from .kovi import KoviConfig, run_kovi
from .mdp import EpisodicMdp, apply_bellman, exact_optimal_values
from .novi import (NoviConfig, empirical_ntk_kernel, forward, init_symmetric, run_novi,
                   tangent_features)
from .spectrum import ntk_kfun, spherical_spectrum

FIXTURES = ("linear_d4.json", "sphere_d3.json")


def load_fixture(name):
    with resources.files("ovilab.fixtures").joinpath(name).open("r", encoding="utf-8") as fh:
        return EpisodicMdp.from_dict(json.load(fh))


def _primal_dual(rng, n):
    W = rng.standard_normal((5, 7))
    fmap = lambda X: np.tanh(X @ W.T)  # noqa: E731
    ker = feature_kernel(fmap)
    X, Q, y = rng.standard_normal((n, 7)), rng.standard_normal((10, 7)), rng.standard_normal(n)
    blk = DataBlock.from_points(ker, 1.3, X)
    dual = predict_many(blk, krr_fit(blk, y), Q)
    err = np.abs(dual - primal_predict(fmap(X), y, fmap(Q), 1.3)).max()
    err = max(err, np.abs(ucb_bonus_many(blk, Q) - primal_bonus(fmap(X), fmap(Q), 1.3)).max())
    return err < 1e-8, f"max |dual - primal| = {err:.2e}"


def _bellman(mdp):
    opt = exact_optimal_values(mdp)
    err = max(np.abs(apply_bellman(mdp, h, opt.Q[h + 1] if h + 1 < mdp.H else None) - opt.Q[h]).max()
              for h in range(mdp.H))
    return err < 1e-10, f"Bellman idempotence error {err:.2e}"


def _kovi_audit(mdp, T):
    rec, agent, trace = run_kovi(mdp, linear_kernel(), KoviConfig(T=T, beta=0.5), rng_seed=0)
    dec = dg.decomposition_check(trace, mdp)["residual"].max()
    slack = min(dg.block_audit(b)[0] for b in agent.blocks)
    ledger = max(dg.block_audit(b)[1] for b in agent.blocks)
    ok = dec < 1e-8 and slack >= -1e-8 and ledger < 1e-8 and np.all(rec.cum_regret <= T * mdp.H)
    return ok, f"decomp {dec:.1e}, telescope slack {slack:.3f}, ledger {ledger:.1e}"


def _quadratic_spectrum(d):
    spec = spherical_spectrum(ntk_kfun("quadratic", d), d, 6, kernel="ntk_quadratic")
    n = spec.nonzero_count()
    return n == d * (d + 1) // 2, f"d={d}: {n} nonzero eigenvalues"


def _tangent_fd(rng, cases):
    worst = 0.0
    for i in range(cases):
        net = init_symmetric(8, 3, int(rng.integers(1 << 30)), "sine" if i % 2 else "quadratic")
        W = net.W0 + 0.3 * rng.standard_normal(net.W0.shape)
        z = rng.standard_normal((1, 3))
        z /= np.linalg.norm(z)
        D = rng.standard_normal(W.shape)
        eps = 1e-5
        fd = (forward(net, z, W + eps * D) - forward(net, z, W - eps * D))[0] / (2 * eps)
        an = tangent_features(net, z, W)[0] @ D.ravel()
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-3))
    return worst < 1e-5, f"worst relative FD error {worst:.1e}"


def _frozen_equals_kovi(mdp, m, T):
    net = init_symmetric(m, mdp.dim, 0, "quadratic")
    _, _, tr1 = run_novi(mdp, net, NoviConfig(T=T, beta=0.5, frozen=True), 0)
    _, _, tr2 = run_kovi(mdp, empirical_ntk_kernel(net), KoviConfig(T=T, beta=0.5), 0)
    gap = max(np.abs(a - b).max() for a, b in zip(tr1.Q, tr2.Q))
    return gap < 1e-6, f"frozen NOVI vs KOVI(K_m) gap {gap:.1e}"


def _gram_psd(mdp):
    net = init_symmetric(64, mdp.dim, 1, "sine")
    K = gram_matrix(empirical_ntk_kernel(net), mdp.grid)
    lo = np.linalg.eigvalsh(K).min()
    blk = DataBlock(empirical_ntk_kernel(net), 1.0, mdp.dim)
    blk.extend(mdp.grid)
    return lo >= -1e-8 and math.isfinite(info_gain(blk)), f"min eigenvalue {lo:.1e}"


def checks(fast=False):
    """(name, callable) pairs; each callable returns (ok, message)."""
    rng = np.random.default_rng(20240601)
    lin = load_fixture("linear_d4.json")
    sph = load_fixture("sphere_d3.json")
    T = 40 if fast else 200
    return [
        ("primal_dual", lambda: _primal_dual(rng, 30 if fast else 50)),
        ("bellman_idempotence", lambda: _bellman(lin)),
        ("kovi_audit", lambda: _kovi_audit(lin, T)),
        ("quadratic_spectrum", lambda: _quadratic_spectrum(3)),
        ("tangent_fd", lambda: _tangent_fd(rng, 10 if fast else 50)),
        ("frozen_equals_kovi", lambda: _frozen_equals_kovi(sph, 64 if fast else 256, 10 if fast else 30)),
        ("ntk_gram_psd", lambda: _gram_psd(sph)),
    ]
