"""Post-hoc audits of optimistic value-iteration runs on enumerable MDPs.

All expectations are exact dynamic programs over the tabular model; nothing
here samples.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvariantViolation
from .kernels import DataBlock, info_gain, ucb_bonus_many
from .mdp import exact_optimal_values, policy_evaluation, state_distributions

TOL = 1e-6
TELESCOPE_TOL = 1e-8


def td_error_table(mdp, Q_h, V_next, h):
    """``delta_h = r_h + P_h V_next - Q_h`` over all (x, a)."""
    return mdp.rewards[h] + mdp.transitions[h] @ np.asarray(V_next, dtype=float) - np.asarray(Q_h)


def _values(Q):
    H, S, _ = Q.shape
    V = np.zeros((H + 1, S))
    V[:H] = Q.max(axis=2)
    return V


def td_errors(trace, mdp):
    """delta_h^t for every episode: array (T, H, S, A)."""
    out = np.zeros((len(trace),) + mdp.rewards.shape)
    for t, Q in enumerate(trace.Q):
        V = _values(Q)
        for h in range(mdp.H):
            out[t, h] = td_error_table(mdp, Q[h], V[h + 1], h)
    return out


def optimism_audit(trace, mdp, tol=TOL):
    """Check ``-2 beta b - tol <= delta <= tol`` entrywise for each (t, h).

    Returns a dict of boolean (T, H) arrays ``upper_ok``, ``lower_ok`` and the
    fraction of (t, h) cells with any violation.
    """
    delta = td_errors(trace, mdp)
    bonus = np.stack(trace.bonus)
    beta = np.asarray(trace.beta)[:, None, None, None]
    upper_ok = (delta <= tol).all(axis=(2, 3))
    lower_ok = (delta >= -2.0 * beta * bonus - tol).all(axis=(2, 3))
    ok = upper_ok & lower_ok
    return {
        "upper_ok": upper_ok,
        "lower_ok": lower_ok,
        "violation_frac": float(1.0 - ok.mean()) if ok.size else 0.0,
        "delta_max": delta.max(axis=(2, 3)),
        "delta_min": delta.min(axis=(2, 3)),
    }


def optimism_frequency(trace, mdp, tol=TOL):
    """Fraction of (t, h) with ``min_{x,a} (Q_h^t - Q*_h) >= -tol``."""
    Qstar = exact_optimal_values(mdp).Q
    gaps = np.stack(trace.Q) - Qstar[None]
    return float((gaps.min(axis=(2, 3)) >= -tol).mean())


def martingale_terms(trace, mdp):
    """zeta^1_{t,h} and zeta^2_{t,h}, each shaped (T, H)."""
    T, H = len(trace), mdp.H
    z1 = np.zeros((T, H))
    z2 = np.zeros((T, H))
    for t in range(T):
        Q = trace.Q[t]
        V = _values(Q)
        Qpi, Vpi = policy_evaluation(mdp, trace.policy[t])
        xs, acts = trace.states[t], trace.actions[t]
        for h in range(H):
            x, a, xn = xs[h], acts[h], xs[h + 1]
            z1[t, h] = (V[h, x] - Vpi[h, x]) - (Q[h, x, a] - Qpi[h, x, a])
            p = mdp.transitions[h, x, a]
            z2[t, h] = (p @ (V[h + 1] - Vpi[h + 1])) - (V[h + 1, xn] - Vpi[h + 1, xn])
    return z1, z2


def decomposition_check(trace, mdp):
    """Per-episode |regret - (i) - (ii) - (iii)| and the three terms.

    (i): E_{pi*}[delta] minus realized delta, (ii): zeta sums, (iii): the
    policy-mismatch term, which is <= 0 for greedy policies.
    """
    opt = exact_optimal_values(mdp)
    pstar = opt.policy
    rows = np.arange(mdp.n_states)
    z1, z2 = martingale_terms(trace, mdp)
    T, H = len(trace), mdp.H
    terms = np.zeros((T, 3))
    regret = np.zeros(T)
    for t in range(T):
        Q = trace.Q[t]
        V = _values(Q)
        pol = trace.policy[t]
        x1 = trace.states[t][0]
        occ = state_distributions(mdp, pstar, x1)
        _, Vpi = policy_evaluation(mdp, pol)
        regret[t] = opt.V[0, x1] - Vpi[0, x1]
        t1 = t3 = 0.0
        for h in range(H):
            delta = td_error_table(mdp, Q[h], V[h + 1], h)
            x, a = trace.states[t][h], trace.actions[t][h]
            t1 += occ[h] @ delta[rows, pstar[h]] - delta[x, a]
            t3 += occ[h] @ (Q[h][rows, pstar[h]] - Q[h][rows, pol[h]])
        terms[t] = (t1, z1[t].sum() + z2[t].sum(), t3)
    residual = np.abs(regret - terms.sum(axis=1))
    return {"residual": residual, "regret": regret, "term_i": terms[:, 0],
            "term_ii": terms[:, 1], "term_iii": terms[:, 2]}


def azuma_bound(T, H, zeta_prob):
    return math.sqrt(16.0 * T * H ** 3 * math.log(2.0 / zeta_prob))


def azuma_check(traces, mdp, zeta_prob=0.01):
    """Fraction of runs whose total martingale sum stays inside the Azuma radius."""
    if len(traces) < 2:
        raise ValueError("azuma_check needs at least two runs")
    sums = []
    for tr in traces:
        z1, z2 = martingale_terms(tr, mdp)
        sums.append(z1.sum() + z2.sum())
    sums = np.array(sums)
    bound = azuma_bound(len(traces[0]), mdp.H, zeta_prob)
    return {"pass_frac": float((np.abs(sums) <= bound).mean()), "sums": sums, "bound": bound}


def telescope_check(kernel, lam, points, dim=None):
    """Elliptical-potential inequality along a point sequence.

    LHS = sum_j min(1, b_j^2) with b_j the bonus of point j against the
    points before it; RHS = 2 logdet(I + K / lam) computed independently.
    Returns ``(slack, lhs, rhs)``; raises :class:`InvariantViolation` when the
    slack is below ``-1e-8``.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    n = X.shape[0] if X.size else 0
    if n == 0:
        return 0.0, 0.0, 0.0
    blk = DataBlock(kernel, lam, X.shape[1])
    lhs = 0.0
    for z in X:
        b = ucb_bonus_many(blk, z[None, :])[0]
        lhs += min(1.0, b * b)
        blk.append(z)
    K = np.asarray(kernel(X, X), dtype=float)
    K = 0.5 * (K + K.T)
    sign, logdet = np.linalg.slogdet(np.eye(n) + K / lam)
    rhs = 2.0 * logdet
    slack = rhs - lhs
    if sign <= 0 or slack < -TELESCOPE_TOL:
        raise InvariantViolation(f"telescope inequality violated: slack {slack:.3e}")
    return float(slack), float(lhs), float(rhs)


def trace_telescope(trace, blocks):
    """Telescope slack per step using the bonuses the agent actually acted on.

    The LHS takes ``b`` at the executed pair from each episode's bonus table
    (computed before that episode's point was appended); the RHS is a fresh
    log-determinant of the block's Gram matrix.  Valid whenever the appended
    point is the one the bonus was evaluated at, i.e. for KOVI and frozen NOVI.
    Returns an array of slacks, one per step.
    """
    out = []
    for h, blk in enumerate(blocks):
        n = blk.n
        b = np.array([trace.bonus[t][h, trace.states[t][h], trace.actions[t][h]] for t in range(n)])
        lhs = float(np.minimum(1.0, b * b).sum())
        X = blk.points
        K = np.asarray(blk.kernel(X, X), dtype=float)
        sign, logdet = np.linalg.slogdet(np.eye(n) + 0.5 * (K + K.T) / blk.lam)
        slack = 2.0 * logdet - lhs
        if sign <= 0 or slack < -TELESCOPE_TOL:
            raise InvariantViolation(f"telescope inequality violated at step {h}: slack {slack:.3e}")
        out.append(slack)
    return np.array(out)


def schur_ledger(kernel, lam, points):
    """Max over appends of |Delta Gamma - 0.5 log(1 + b^2)|, replaying ``points``."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if not X.size:
        return 0.0
    blk = DataBlock(kernel, lam, X.shape[1])
    worst = 0.0
    g_prev = 0.0
    for z in X:
        b = ucb_bonus_many(blk, z[None, :])[0]
        blk.append(z)
        g = info_gain(blk)
        worst = max(worst, abs(g - g_prev - 0.5 * math.log1p(b * b)))
        g_prev = g
    return worst


def block_audit(block):
    """Telescope slack and Schur-ledger error for a live :class:`DataBlock`."""
    slack, _, _ = telescope_check(block.kernel, block.lam, block.points)
    return slack, schur_ledger(block.kernel, block.lam, block.points)


@dataclass
class DiagnosticsReport:
    optimism_violation_frac: float = 0.0
    max_decomp_residual: float = 0.0
    azuma_pass_frac: float = 1.0
    telescope_min_slack: float = math.inf
    ledger_max_err: float = 0.0
    details: dict = field(default_factory=dict)

    KEYS = ("optimism_violation_frac", "max_decomp_residual", "azuma_pass_frac",
            "telescope_min_slack", "ledger_max_err")

    def to_dict(self):
        d = asdict(self)
        d.pop("details")
        return {k: float(d[k]) for k in self.KEYS}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=False)
        if path is not None:
            from .records import atomic_write
            atomic_write(path, text + "\n")
        return text

    def merge(self, other):
        return DiagnosticsReport(
            max(self.optimism_violation_frac, other.optimism_violation_frac),
            max(self.max_decomp_residual, other.max_decomp_residual),
            min(self.azuma_pass_frac, other.azuma_pass_frac),
            min(self.telescope_min_slack, other.telescope_min_slack),
            max(self.ledger_max_err, other.ledger_max_err),
        )


def audit_run(trace, mdp, blocks, traces=None, zeta_prob=0.01):
    """Full report for one run (plus optional sibling runs for the Azuma check)."""
    opt = optimism_audit(trace, mdp)
    dec = decomposition_check(trace, mdp)
    slacks, ledger = [], []
    for blk in blocks:
        s, e = block_audit(blk)
        slacks.append(s)
        ledger.append(e)
    azuma = azuma_check(traces, mdp, zeta_prob)["pass_frac"] if traces and len(traces) > 1 else 1.0
    return DiagnosticsReport(
        opt["violation_frac"], float(dec["residual"].max(initial=0.0)), azuma,
        float(min(slacks)) if slacks else math.inf, float(max(ledger, default=0.0)),
        details={"optimism_frequency": optimism_frequency(trace, mdp),
                 "term_iii_max": float(dec["term_iii"].max(initial=-math.inf))},
    )
