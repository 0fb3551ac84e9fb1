import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ovilab.diagnostics import (DiagnosticsReport, audit_run, azuma_bound, azuma_check, block_audit,
                                decomposition_check, martingale_terms, optimism_audit,
                                optimism_frequency, schur_ledger, td_error_table, td_errors,
                                telescope_check)
from ovilab.errors import InvariantViolation
from ovilab.kernels import KernelSpec, linear_kernel, rbf_kernel
from ovilab.kovi import KoviConfig, run_kovi
from ovilab.mdp import exact_optimal_values, make_chain_mdp, make_linear_mdp


@pytest.fixture(scope="module")
def kovi_run(linear_mdp_d4):
    mdp, ker = linear_mdp_d4
    rec, agent, trace = run_kovi(mdp, ker, KoviConfig(T=60, beta=0.8), rng_seed=3)
    return mdp, rec, agent, trace


def test_td_error_of_optimal_q_vanishes(linear_mdp_d4):
    mdp, _ = linear_mdp_d4
    opt = exact_optimal_values(mdp)
    for h in range(mdp.H):
        assert_allclose(td_error_table(mdp, opt.Q[h], opt.V[h + 1], h), 0.0, atol=1e-12)


def test_td_error_shift():
    mdp = make_chain_mdp(2)
    opt = exact_optimal_values(mdp)
    shifted = opt.Q[0] + 0.3
    assert_allclose(td_error_table(mdp, shifted, opt.V[1], 0), -0.3)


def test_td_errors_shape(kovi_run):
    mdp, rec, _, trace = kovi_run
    assert td_errors(trace, mdp).shape == (rec.T,) + mdp.rewards.shape


def test_huge_beta_is_optimistic(linear_mdp_d4):
    mdp, ker = linear_mdp_d4
    _, _, trace = run_kovi(mdp, ker, KoviConfig(T=20, beta=1e3), rng_seed=0)
    assert optimism_frequency(trace, mdp) == 1.0
    assert optimism_audit(trace, mdp)["violation_frac"] == 0.0


def test_zero_beta_loses_optimism(linear_mdp_d4):
    mdp, ker = linear_mdp_d4
    _, _, trace = run_kovi(mdp, ker, KoviConfig(T=30, beta=0.0), rng_seed=0)
    assert optimism_frequency(trace, mdp) < 1.0


def test_decomposition_is_exact(kovi_run):
    mdp, rec, _, trace = kovi_run
    dec = decomposition_check(trace, mdp)
    assert dec["residual"].max() < 1e-8
    assert_allclose(dec["regret"], rec.instant_regret, atol=1e-12)
    assert dec["term_iii"].max() <= 1e-12


def test_last_step_has_no_transition_noise():
    mdp, ker = make_linear_mdp(4, 6, 3, 1, rng_seed=2)
    _, _, trace = run_kovi(mdp, ker, KoviConfig(T=15, beta=0.5), rng_seed=1)
    z1, z2 = martingale_terms(trace, mdp)
    assert np.all(z2 == 0.0)
    assert decomposition_check(trace, mdp)["residual"].max() < 1e-10


def test_martingale_terms_bounded(kovi_run):
    mdp, _, _, trace = kovi_run
    z1, z2 = martingale_terms(trace, mdp)
    assert np.abs(z1).max() <= 2 * mdp.H and np.abs(z2).max() <= 2 * mdp.H


def test_deterministic_chain_has_no_noise():
    mdp = make_chain_mdp(3)
    traces = [run_kovi(mdp, linear_kernel(), KoviConfig(T=10, beta=1.0), rng_seed=s)[2] for s in range(3)]
    out = azuma_check(traces, mdp, 0.01)
    assert_allclose(out["sums"], 0.0, atol=1e-12)
    assert out["pass_frac"] == 1.0


def test_azuma_bound_value():
    assert_allclose(azuma_bound(100, 2, 0.01), math.sqrt(16 * 100 * 8 * math.log(200)))
    with pytest.raises(ValueError):
        azuma_check([None], None)


def test_telescope_single_point():
    slack, lhs, rhs = telescope_check(linear_kernel(), 1.0, [[1.0, 0.0]])
    assert_allclose(lhs, 1.0)
    assert_allclose(slack, 2 * math.log(2) - 1, rtol=1e-12)
    assert telescope_check(linear_kernel(), 1.0, np.zeros((0, 2))) == (0.0, 0.0, 0.0)


def test_telescope_random_sequences(rng):
    for lam in (0.5, 1.0, 3.0):
        X = rng.standard_normal((40, 3))
        slack, lhs, rhs = telescope_check(rbf_kernel(0.7), lam, X)
        assert slack >= 0 and lhs <= 40


def test_telescope_flags_broken_kernel():
    # bonuses from one kernel, log-determinant from a much smaller one
    X = np.eye(3)
    liar = KernelSpec(lambda X, Y: 100.0 * (X @ Y.T) if len(X) == 1 else 1e-6 * (X @ Y.T), name="liar")
    with pytest.raises(InvariantViolation):
        telescope_check(liar, 1.0, X)


def test_schur_ledger_and_block_audit(kovi_run):
    _, _, agent, _ = kovi_run
    for blk in agent.blocks:
        slack, err = block_audit(blk)
        assert slack >= 0 and err < 1e-8
    assert schur_ledger(linear_kernel(), 1.0, np.zeros((0, 2))) == 0.0


def test_report_json(kovi_run, tmp_path):
    mdp, _, agent, trace = kovi_run
    rep = audit_run(trace, mdp, agent.blocks)
    path = tmp_path / "diag.json"
    rep.to_json(path)
    data = json.loads(path.read_text())
    assert list(data) == list(DiagnosticsReport.KEYS)
    assert data["max_decomp_residual"] < 1e-8 and data["azuma_pass_frac"] == 1.0
    merged = rep.merge(DiagnosticsReport(1.0, 1e-3, 0.9, -1.0, 2e-3))
    assert merged.to_dict() == {"optimism_violation_frac": 1.0, "max_decomp_residual": 1e-3,
                                "azuma_pass_frac": 0.9, "telescope_min_slack": -1.0,
                                "ledger_max_err": 2e-3}


def test_trace_telescope_matches_replay(kovi_run):
    from ovilab.diagnostics import trace_telescope
    _, _, agent, trace = kovi_run
    fast = trace_telescope(trace, agent.blocks)
    slow = [block_audit(blk)[0] for blk in agent.blocks]
    assert_allclose(fast, slow, atol=1e-9)
