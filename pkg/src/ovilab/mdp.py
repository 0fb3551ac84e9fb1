"""Finite episodic MDPs, exact dynamic programming and seeded rollouts.

Steps are 0-based in code: ``h = 0 .. H-1`` and ``V[H] == 0``.  The value
ceiling at step ``h`` is therefore ``H - h``.
"""
import json
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ConstructionError, InputError, StateError
from .kernels import DecayClass, linear_kernel, sphere_normalize

ROW_TOL = 1e-12
MAX_RETRIES = 100


@dataclass
class EpisodicMdp:
    """Tabular episodic MDP with a state-action embedding.

    rewards: (H, S, A) in [0, 1]; transitions: (H, S, A, S) row-stochastic;
    embeddings: (S, A, d).  ``initial_state`` is a fixed state index, or
    ``None`` for a uniformly drawn start each episode.
    """

    rewards: np.ndarray
    transitions: np.ndarray
    embeddings: np.ndarray
    initial_state: Optional[int] = 0
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.embeddings = np.asarray(self.embeddings, dtype=float)
        self.validate()

    @property
    def H(self):
        return self.rewards.shape[0]

    @property
    def n_states(self):
        return self.rewards.shape[1]

    @property
    def n_actions(self):
        return self.rewards.shape[2]

    @property
    def dim(self):
        return self.embeddings.shape[2]

    @property
    def grid(self):
        """All embeddings as an (S*A, d) array, row ``x * A + a``."""
        return self.embeddings.reshape(-1, self.dim)

    def validate(self):
        H, S, A = self.rewards.shape
        if self.transitions.shape != (H, S, A, S):
            raise InputError(f"transitions shape {self.transitions.shape} != {(H, S, A, S)}")
        if self.embeddings.ndim != 3 or self.embeddings.shape[:2] != (S, A):
            raise InputError("embeddings must have shape (S, A, d)")
        if H < 1:
            raise InputError("horizon must be >= 1")
        if np.any(self.rewards < 0) or np.any(self.rewards > 1):
            raise InputError("rewards must lie in [0, 1]")
        if np.any(self.transitions < 0):
            raise InputError("transition probabilities must be nonnegative")
        if np.max(np.abs(self.transitions.sum(-1) - 1.0)) > ROW_TOL:
            raise InputError("transition rows must sum to 1")
        if self.initial_state is not None and not 0 <= self.initial_state < S:
            raise InputError("initial state out of range")

    def start_state(self, rng):
        if self.initial_state is None:
            return int(rng.integers(self.n_states))
        return int(self.initial_state)

    # serialization -----------------------------------------------------------
    def to_dict(self):
        return {
            "H": self.H,
            "states": [{"id": x, "embed": self.embeddings[x].tolist()} for x in range(self.n_states)],
            "actions": list(range(self.n_actions)),
            "rewards": self.rewards.tolist(),
            "transitions": self.transitions.tolist(),
            "initial_state": self.initial_state,
            "seed": self.seed,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict())
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, data):
        states = sorted(data["states"], key=lambda s: s["id"])
        emb = np.array([s["embed"] for s in states], dtype=float)
        mdp = cls(np.array(data["rewards"]), np.array(data["transitions"]), emb,
                  data.get("initial_state", 0), data.get("seed"))
        if mdp.H != data["H"] or mdp.n_actions != len(data["actions"]):
            raise InputError("fixture header disagrees with its tables")
        return mdp

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ValueTables:
    Q: np.ndarray  # (H, S, A)
    V: np.ndarray  # (H + 1, S), V[H] = 0

    @property
    def policy(self):
        """Greedy optimal policy, lowest action index on ties."""
        return np.argmax(self.Q, axis=-1)


@dataclass
class Trajectory:
    episode: int
    states: np.ndarray   # (H + 1,)
    actions: np.ndarray  # (H,)
    rewards: np.ndarray  # (H,)

    @property
    def ret(self):
        return float(self.rewards.sum())

    def __len__(self):
        return len(self.actions)


def apply_bellman(mdp, h, Q_next):
    """``r_h + P_h max_a Q_next``; pass ``None`` (or zeros) for the terminal step."""
    S, A = mdp.n_states, mdp.n_actions
    if Q_next is None:
        return mdp.rewards[h].copy()
    Q_next = np.asarray(Q_next, dtype=float)
    if Q_next.shape != (S, A):
        raise InputError(f"Q_next must have shape {(S, A)}, got {Q_next.shape}")
    return mdp.rewards[h] + mdp.transitions[h] @ Q_next.max(axis=1)


def backup_values(mdp, h, V_next):
    """``r_h + P_h V_next`` for a state-value vector."""
    return mdp.rewards[h] + mdp.transitions[h] @ np.asarray(V_next, dtype=float)


def exact_optimal_values(mdp):
    H, S, A = mdp.rewards.shape
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        Q[h] = backup_values(mdp, h, V[h + 1])
        V[h] = Q[h].max(axis=1)
    return ValueTables(Q, V)


def policy_evaluation(mdp, policy):
    """Exact (Q^pi, V^pi) of a deterministic policy given as an (H, S) action table."""
    policy = np.asarray(policy)
    H, S, A = mdp.rewards.shape
    if policy.shape != (H, S):
        raise InputError(f"policy table must have shape {(H, S)}")
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    rows = np.arange(S)
    for h in range(H - 1, -1, -1):
        Q[h] = backup_values(mdp, h, V[h + 1])
        V[h] = Q[h][rows, policy[h]]
    return Q, V


def state_distributions(mdp, policy, x1):
    """Occupancy ``d_h(x)`` of a deterministic policy started at ``x1``; shape (H, S)."""
    H, S, _ = mdp.rewards.shape
    dist = np.zeros((H, S))
    dist[0, x1] = 1.0
    rows = np.arange(S)
    for h in range(H - 1):
        P = mdp.transitions[h][rows, policy[h]]  # (S, S)
        dist[h + 1] = dist[h] @ P
    return dist


def rollout(mdp, policy, rng_seed=None, episode=0, x1=None):
    """Sample one episode.  ``policy`` is an (H, S) action table (``-1`` marks an
    undefined entry) or a callable ``policy(h, x) -> action``."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    H = mdp.H
    x = mdp.start_state(rng) if x1 is None else int(x1)
    states = np.zeros(H + 1, dtype=int)
    actions = np.zeros(H, dtype=int)
    rewards = np.zeros(H)
    for h in range(H):
        states[h] = x
        a = policy(h, x) if callable(policy) else policy[h][x]
        if a is None or not 0 <= a < mdp.n_actions:
            raise StateError(f"policy undefined at step {h}, state {x}")
        actions[h] = a
        rewards[h] = mdp.rewards[h, x, a]
        x = int(rng.choice(mdp.n_states, p=mdp.transitions[h, x, a]))
    states[H] = x
    return Trajectory(episode, states, actions, rewards)


def uniform_policy_value(mdp):
    """Exact V_1 of the uniformly random policy (per start state)."""
    V = np.zeros(mdp.n_states)
    for h in range(mdp.H - 1, -1, -1):
        V = backup_values(mdp, h, V).mean(axis=1)
    return V


# --- constructors -----------------------------------------------------------------

def make_linear_mdp(d, n_states, n_actions, H, rng_seed=0, one_hot=False, concentration=1.0,
                    initial_state=None):
    """Linear MDP whose rewards and transitions are linear in a d-dim feature.

    Features lie on the probability simplex, each feature coordinate carries a
    next-state distribution, and ``r_h = phi^T theta_h`` with theta in [0, 1]^d.
    ``one_hot=True`` (needs d = S*A) gives the tabular special case.
    Returns ``(mdp, linear_kernel)``.
    """
    if d > n_states * n_actions:
        raise InputError("need d <= n_states * n_actions")
    rng = np.random.default_rng(rng_seed)
    if one_hot:
        if d != n_states * n_actions:
            raise InputError("one-hot features need d == n_states * n_actions")
        phi = np.eye(d).reshape(n_states, n_actions, d)
    else:
        for _ in range(MAX_RETRIES):
            phi = rng.dirichlet(concentration * np.ones(d), size=(n_states, n_actions))
            if np.linalg.matrix_rank(phi.reshape(-1, d), tol=1e-8) == d:
                break
        else:
            raise ConstructionError("could not draw full-rank simplex features")
    mu = rng.dirichlet(np.ones(n_states), size=(H, d))          # (H, d, S)
    theta = rng.uniform(0.0, 1.0, size=(H, d))
    P = np.einsum("xad,hdy->hxay", phi, mu)
    P /= P.sum(-1, keepdims=True)
    R = np.clip(np.einsum("xad,hd->hxa", phi, theta), 0.0, 1.0)
    mdp = EpisodicMdp(R, P, phi, initial_state, rng_seed,
                      meta={"kind": "linear", "theta": theta, "mu": mu})
    return mdp, linear_kernel(DecayClass.finite(d, d=d))


def make_sphere_mdp(d, n_states, n_actions, H, rng_seed=0, initial_state=None):
    """Random tabular MDP with embeddings drawn uniformly on the unit sphere."""
    rng = np.random.default_rng(rng_seed)
    emb = sphere_normalize(rng.standard_normal((n_states, n_actions, d)))
    R = rng.uniform(0.0, 1.0, size=(H, n_states, n_actions))
    P = rng.dirichlet(np.ones(n_states), size=(H, n_states, n_actions))
    P /= P.sum(-1, keepdims=True)
    return EpisodicMdp(R, P, emb, initial_state, rng_seed, meta={"kind": "sphere"})


def make_chain_mdp(H=2):
    """Two-state deterministic chain: action 1 pays 1 and stays, action 0 pays 0."""
    R = np.zeros((H, 2, 2))
    R[:, :, 1] = 1.0
    P = np.zeros((H, 2, 2, 2))
    P[:, :, 0, 1] = 1.0
    P[:, :, 1, 0] = 1.0
    emb = np.eye(4).reshape(2, 2, 4)
    return EpisodicMdp(R, P, emb, 0, None, meta={"kind": "chain"})


def bellman_coefficients(mdp, h, Q_next):
    """Least-squares coefficients w with ``grid @ w ~= T*_h Q_next``; returns (w, residual)."""
    target = apply_bellman(mdp, h, Q_next).ravel()
    w, *_ = np.linalg.lstsq(mdp.grid, target, rcond=None)
    return w, float(np.max(np.abs(mdp.grid @ w - target)))
