"""Kernelized optimistic least-squares value iteration (KOVI).

Each episode runs a backward sweep h = H-1 .. 0 of kernel ridge regressions on
the transitions of earlier episodes, adds ``beta`` times the UCB bonus,
truncates to ``[0, H - h]`` and then acts greedily.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InputError, StateError
from .kernels import DataBlock, info_gain
from .mdp import exact_optimal_values, policy_evaluation, rollout
from .records import EpisodeTrace, RegretRecord


@dataclass
class KoviConfig:
    T: int
    beta: float
    lam: Optional[float] = None          # None -> 1 + 1/T
    tie_break: str = "lowest"            # or "random"
    beta_fn: Optional[Callable] = None   # per-episode override beta_fn(t), off by default
    keep_trace: bool = True

    def __post_init__(self):
        if self.T < 1:
            raise InputError("T must be >= 1")
        if self.beta < 0:
            raise InputError("beta must be nonnegative")
        if self.lam is None:
            self.lam = 1.0 + 1.0 / self.T
        if self.lam <= 0:
            raise InputError("lam must be positive")
        if self.tie_break not in ("lowest", "random"):
            raise InputError("tie_break must be 'lowest' or 'random'")

    def beta_at(self, t):
        return float(self.beta_fn(t)) if self.beta_fn is not None else float(self.beta)


def greedy_actions(Q_rows, tie_break="lowest", rng=None):
    """Row-wise argmax of an (S, A) table."""
    if tie_break == "lowest":
        return np.argmax(Q_rows, axis=-1)
    best = Q_rows.max(axis=-1, keepdims=True)
    ties = Q_rows >= best
    noise = rng.random(Q_rows.shape)
    return np.argmax(np.where(ties, noise, -1.0), axis=-1)


def act_greedy(agent, h, x, tie_break="lowest", rng=None):
    if agent.Q is None:
        raise StateError("run backward_sweep before acting")
    return int(greedy_actions(agent.Q[h, x][None, :], tie_break, rng)[0])


class KoviAgent:
    """Per-step data blocks, cached dual solves and the current Q/V tables."""

    def __init__(self, mdp, kernel, config):
        self.mdp = mdp
        self.kernel = kernel
        self.config = config
        H, S, A = mdp.rewards.shape
        self.blocks = [DataBlock(kernel, config.lam, mdp.dim) for _ in range(H)]
        self._handles = [blk.track(mdp.grid) for blk in self.blocks]
        self.states = np.zeros((0, H + 1), dtype=int)
        self.actions = np.zeros((0, H), dtype=int)
        self.episodes = 0
        self.Q = None
        self.V = None
        self.bonus = None
        self._alpha_tri = [np.zeros(0) for _ in range(H)]

    @property
    def H(self):
        return self.mdp.H

    def build_targets(self, h, V_next):
        """Responses r_h(x_h, a_h) + V_{h+1}(x_{h+1}) over stored transitions."""
        n = self.blocks[h].n
        if n != self.episodes:
            raise StateError("block size does not match the number of stored episodes")
        if n == 0:
            return np.zeros(0)
        xs = self.states[:, h]
        acts = self.actions[:, h]
        return self.mdp.rewards[h, xs, acts] + V_next[self.states[:, h + 1]]

    def alpha(self, h):
        """Dual weights (K + lam I)^{-1} y of the latest sweep."""
        blk = self.blocks[h]
        if blk.n == 0:
            return np.zeros(0)
        from scipy.linalg import solve_triangular
        return solve_triangular(blk.cholesky, self._alpha_tri[h], lower=True, trans="T")

    def backward_sweep(self, beta):
        H, S, A = self.mdp.rewards.shape
        Q = np.zeros((H, S, A))
        V = np.zeros((H + 1, S))
        B = np.zeros((H, S, A))
        for h in range(H - 1, -1, -1):
            blk = self.blocks[h]
            y = self.build_targets(h, V[h + 1])
            self._alpha_tri[h] = blk.half_solve(y)
            mean = blk.tracked_predict(self._handles[h], self._alpha_tri[h])
            bonus = np.sqrt(blk.tracked_variance(self._handles[h]) / blk.lam)
            Q[h] = np.clip(mean + beta * bonus, 0.0, H - h).reshape(S, A)
            B[h] = bonus.reshape(S, A)
            V[h] = Q[h].max(axis=1)
        self.Q, self.V, self.bonus = Q, V, B
        return Q, V

    def policy(self, rng=None):
        return np.stack([greedy_actions(self.Q[h], self.config.tie_break, rng) for h in range(self.H)])

    def observe(self, traj):
        A = self.mdp.n_actions
        for h in range(self.H):
            self.blocks[h].append(self.mdp.grid[traj.states[h] * A + traj.actions[h]])
        self.states = np.vstack([self.states, traj.states[None, :]])
        self.actions = np.vstack([self.actions, traj.actions[None, :]])
        self.episodes += 1


def backward_sweep(agent, beta):
    return agent.backward_sweep(beta)


def build_targets(agent, h, V_next):
    return agent.build_targets(h, V_next)


def _streams(rng_seed):
    env, agent = np.random.SeedSequence(rng_seed).spawn(2)
    return np.random.default_rng(env), np.random.default_rng(agent)


def run_kovi(mdp, kernel, config, rng_seed=0):
    """Run T episodes; returns (RegretRecord, agent, trace)."""
    env_rng, agent_rng = _streams(rng_seed)
    agent = KoviAgent(mdp, kernel, config)
    opt = exact_optimal_values(mdp)
    trace = EpisodeTrace() if config.keep_trace else None
    H = mdp.H
    regret = np.zeros(config.T)
    gains = np.zeros((config.T, H))
    for t in range(config.T):
        beta = config.beta_at(t + 1)
        agent.backward_sweep(beta)
        pol = agent.policy(agent_rng)
        traj = rollout(mdp, pol, env_rng, episode=t + 1)
        _, Vpi = policy_evaluation(mdp, pol)
        x1 = traj.states[0]
        regret[t] = opt.V[0, x1] - Vpi[0, x1]
        if trace is not None:
            trace.append(agent.Q, agent.bonus, pol, traj, beta)
        agent.observe(traj)
        gains[t] = [info_gain(blk) for blk in agent.blocks]
    record = RegretRecord(int(rng_seed), float(config.beta), regret, gains)
    return record, agent, trace


def run_uniform(mdp, T, rng_seed=0):
    """Uniform-random baseline on the same start-state stream as run_kovi.

    Regret is exact, V*(x1) - V^unif(x1); the executed trajectories are sampled.
    """
    from .mdp import uniform_policy_value

    env_rng, agent_rng = _streams(rng_seed)
    opt = exact_optimal_values(mdp)
    vu = uniform_policy_value(mdp)
    regret = np.zeros(T)
    for t in range(T):
        pol = agent_rng.integers(mdp.n_actions, size=(mdp.H, mdp.n_states))
        traj = rollout(mdp, pol, env_rng, episode=t + 1)
        x1 = traj.states[0]
        regret[t] = opt.V[0, x1] - vu[x1]
    return RegretRecord(int(rng_seed), 0.0, regret, np.zeros((T, mdp.H)))
