"""Two-layer overparameterized networks and neural optimistic value iteration (NOVI).

The network is ``f(z; W) = (2m)^{-1/2} sum_j b_j act(W_j . z)`` with a
symmetric initialization, so ``f(.; W0) == 0``.  Only ``W`` is trained.

The precision matrix ``Lambda = lam I + Phi^T Phi`` lives in R^{2md x 2md},
which is too large to store at useful widths.  It is kept in dual form: a
:class:`~ovilab.kernels.DataBlock` over the stored feature vectors with the
linear kernel, so ``phi^T Lambda^{-1} phi = (phi^T phi - k^T (K + lam I)^{-1} k) / lam``.
:meth:`NoviAgent.precision_dense` rebuilds the explicit matrix for small widths.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import InputError, NumericalError, StateError
from .kernels import DataBlock, KernelSpec, info_gain, linear_kernel
from .kovi import _streams, greedy_actions
from .mdp import exact_optimal_values, policy_evaluation, rollout
from .records import EpisodeTrace, RegretRecord
from .spectrum import ntk_decay, parse_activation

_ACT_IDS = {"quadratic": _kernels.QUADRATIC, "sine": _kernels.SINE, "relu_power": _kernels.RELU_POWER}


class TwoLayerNet:
    """Width-2m network with frozen output signs ``b`` and trainable ``W``.

    ``phase`` and ``amp`` parametrize the activation per neuron:
    ``act_j(u) = amp * act(u + phase_j)``.  They are zero/one except for the
    sine activation, where a random phase and amplitude sqrt(2) give the
    limiting kernel ``u * exp(u - 1)``.
    """

    def __init__(self, W0, b, activation="quadratic", phase=None, amp=1.0):
        W0 = np.array(W0, dtype=float)
        b = np.array(b, dtype=float)
        if W0.ndim != 2 or b.shape != (W0.shape[0],):
            raise InputError("W0 must be (2m, d) and b must have length 2m")
        self.activation, self.s = parse_activation(activation)
        self.act_id = _ACT_IDS[self.activation]
        self.amp = float(amp)
        self.phase = np.zeros(len(b)) if phase is None else np.array(phase, dtype=float)
        W0.flags.writeable = False
        b.flags.writeable = False
        self.phase.flags.writeable = False
        self.W0 = W0
        self.b = b
        self.W = W0.copy()

    @property
    def width(self):
        return self.W0.shape[0]

    @property
    def m(self):
        return self.width // 2

    @property
    def d(self):
        return self.W0.shape[1]

    @property
    def n_params(self):
        return self.W0.size

    def args(self, W=None):
        """Positional arguments for the compiled kernels."""
        W = self.W if W is None else W
        return (np.ascontiguousarray(W, dtype=float), self.b, self.phase, self.amp, self.act_id,
                float(self.s))

    def is_symmetric(self):
        m = self.m
        return (np.array_equal(self.W0[:m], self.W0[m:]) and np.array_equal(self.b[:m], -self.b[m:])
                and np.array_equal(self.phase[:m], self.phase[m:]))


def init_symmetric(m, d, rng_seed=0, activation="quadratic"):
    """Symmetric initialization: the second half mirrors the first with flipped ``b``.

    Quadratic: ``W_j ~ N(0, I_d / d)``.  Sine: ``W_j ~ N(0, I_d)``, phase
    ``~ U[0, 2 pi)``, amplitude sqrt(2).  relu_power: ``W_j`` uniform on the sphere.
    """
    if m < 1 or d < 1:
        raise InputError("need m >= 1 and d >= 1")
    name, s = parse_activation(activation)
    rng = np.random.default_rng(rng_seed)
    b_half = rng.choice([-1.0, 1.0], size=m)
    phase_half = np.zeros(m)
    amp = 1.0
    if name == "quadratic":
        W_half = rng.standard_normal((m, d)) / math.sqrt(d)
    elif name == "sine":
        W_half = rng.standard_normal((m, d))
        phase_half = rng.uniform(0.0, 2.0 * math.pi, size=m)
        amp = math.sqrt(2.0)
    else:
        W_half = rng.standard_normal((m, d))
        W_half /= np.linalg.norm(W_half, axis=1, keepdims=True)
    W0 = np.vstack([W_half, W_half])
    b = np.concatenate([b_half, -b_half])
    phase = np.concatenate([phase_half, phase_half])
    act = name if name != "relu_power" else (name, s)
    return TwoLayerNet(W0, b, act, phase, amp)


def _points(Z, d):
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[1] != d:
        raise InputError(f"expected points of dimension {d}, got {Z.shape[1]}")
    return np.ascontiguousarray(Z)


def forward(net, Z, W=None):
    return _kernels.forward(*net.args(W), _points(Z, net.d))


def tangent_features(net, Z, W=None):
    """Rows ``phi(z; W) = grad_W f(z; W)`` flattened neuron-major, shape (n, 2md)."""
    return _kernels.tangent(*net.args(W), _points(Z, net.d))


def empirical_ntk(net, Z1, Z2=None, W=None):
    """``<phi(z; W), phi(z'; W)>``, at ``W0`` by default (the empirical NTK K_m)."""
    Z1 = _points(Z1, net.d)
    Z2 = Z1 if Z2 is None else _points(Z2, net.d)
    W = net.W0 if W is None else W
    return _kernels.tangent_gram(*net.args(W), Z1, Z2)


def empirical_ntk_kernel(net):
    """K_m as a :class:`KernelSpec`, for running KOVI against frozen-feature NOVI."""
    return KernelSpec(lambda X, Y: empirical_ntk(net, X, Y), name=f"K_m[{net.activation},m={net.m}]",
                      bounded=False, decay=None)


def loss_and_grad(net, W, Z, y, lam):
    W, b, phase, amp, act_id, s = net.args(W)
    return _kernels.loss_grad(W, net.W0, b, phase, amp, act_id, s, _points(Z, net.d),
                              np.asarray(y, dtype=float), float(lam))


# --- optimization oracle ------------------------------------------------------------

@dataclass
class OracleConfig:
    """Gradient descent on the ridge loss.

    ``step=None`` means ``1e-2 / (1 + lam)``; ``step="auto"`` uses
    ``1 / (2 (lam + ||G||_2))`` from the current tangent Gram ``G`` on the data.
    ``method="nesterov"`` adds momentum with a restart whenever the loss rises.
    ``warm_start`` begins from whichever of ``W0`` and the supplied previous
    iterate has the lower loss.
    """

    step: Optional[object] = None
    max_iter: int = 5000
    tol: float = 1e-6
    method: str = "gd"
    warm_start: bool = False

    def __post_init__(self):
        if self.method not in ("gd", "nesterov"):
            raise InputError("method must be 'gd' or 'nesterov'")
        if self.max_iter < 0 or self.tol <= 0:
            raise InputError("max_iter must be >= 0 and tol > 0")


@dataclass
class OracleResult:
    W: np.ndarray
    loss: float
    loss0: float          # loss at W0
    grad_norm: float
    n_iter: int
    converged: bool


def _step_size(net, W, Z, lam, cfg):
    if cfg.step is None:
        return 1e-2 / (1.0 + lam)
    if cfg.step == "auto":
        G = empirical_ntk(net, Z, Z, W=W) if len(Z) else np.zeros((0, 0))
        top = np.linalg.eigvalsh(G)[-1] if len(Z) else 0.0
        return 1.0 / (2.0 * (lam + top))
    return float(cfg.step)


def minimize_loss(net, Z, y, lam, cfg=None, W_start=None):
    """Minimize ``sum (y - f(z; W))^2 + lam ||W - W0||^2`` from ``W0``.

    Non-convergence is reported in the result; a non-finite loss raises.
    """
    cfg = cfg or OracleConfig()
    y = np.asarray(y, dtype=float)
    Z = _points(Z, net.d) if len(y) else np.zeros((0, net.d))
    if len(Z) != len(y):
        raise InputError("targets and inputs differ in length")
    W0 = np.array(net.W0)
    if len(y) == 0:
        return OracleResult(W0, 0.0, 0.0, 0.0, 0, True)
    loss0, g0 = loss_and_grad(net, W0, Z, y, lam)
    W, loss, g = W0, loss0, g0
    if cfg.warm_start and W_start is not None:
        l1, g1 = loss_and_grad(net, W_start, Z, y, lam)
        if l1 < loss0:
            W, loss, g = np.array(W_start, dtype=float), l1, g1
    step = _step_size(net, W, Z, lam, cfg)
    gnorm = float(np.linalg.norm(g))
    it = 0
    prev, mom_k = W, 0
    while gnorm > cfg.tol and it < cfg.max_iter:
        if cfg.method == "nesterov":
            mom_k += 1
            Y = W + (mom_k - 1.0) / (mom_k + 2.0) * (W - prev)
            _, gy = loss_and_grad(net, Y, Z, y, lam)
            new = Y - step * gy
        else:
            new = W - step * g
        new_loss, new_g = loss_and_grad(net, new, Z, y, lam)
        if not math.isfinite(new_loss):
            raise NumericalError("loss became non-finite during gradient descent")
        if cfg.method == "nesterov" and new_loss > loss:
            mom_k = 0  # restart momentum
            new = W - step * g
            new_loss, new_g = loss_and_grad(net, new, Z, y, lam)
        prev, W, loss, g = W, new, new_loss, new_g
        gnorm = float(np.linalg.norm(g))
        it += 1
    return OracleResult(W, float(loss), float(loss0), gnorm, it, gnorm <= cfg.tol)


def ridge_solution(net, Z, y, lam):
    """Closed-form minimizer over frozen features: ``W0 + (lam I + Phi^T Phi)^{-1} Phi^T y``."""
    Z = _points(Z, net.d)
    Phi = tangent_features(net, Z, W=net.W0)
    K = Phi @ Phi.T
    coef = np.linalg.solve(K + lam * np.eye(len(Z)), np.asarray(y, dtype=float))
    return np.asarray(net.W0) + (Phi.T @ coef).reshape(net.W0.shape)


def linearized_forward(net, Z, W):
    """First-order model ``phi(z; W0)^T (W - W0)``."""
    return tangent_features(net, Z, W=net.W0) @ (np.asarray(W) - net.W0).ravel()


# --- agent --------------------------------------------------------------------------

@dataclass
class NoviConfig:
    T: int
    beta: float
    lam: Optional[float] = None
    tie_break: str = "lowest"
    frozen: bool = False          # phi(.; W0) everywhere: the closed-form linearized agent
    shadow: bool = False          # full mode: also run a frozen agent on the same data
    oracle: OracleConfig = field(default_factory=OracleConfig)
    keep_trace: bool = True

    def __post_init__(self):
        if self.T < 1 or self.beta < 0:
            raise InputError("need T >= 1 and beta >= 0")
        if self.lam is None:
            self.lam = 1.0 + 1.0 / self.T
        if self.lam <= 0:
            raise InputError("lam must be positive")
        if isinstance(self.oracle, dict):
            self.oracle = OracleConfig(**self.oracle)


class NoviAgent:
    """Per-step data, the dual form of Lambda_h and the current minimizers.

    In frozen mode the fitted function is ``phi(.; W0)^T (W_bar - W0)`` with
    ``W_bar`` the closed-form ridge solution, computed in dual form.
    """

    def __init__(self, mdp, net, config):
        if mdp.dim != net.d:
            raise InputError("network input dimension differs from the MDP embedding")
        self.mdp = mdp
        self.net = net
        self.config = config
        H = mdp.H
        p = net.n_params
        self.lam = config.lam
        self.precision = [DataBlock(linear_kernel(), self.lam, p) for _ in range(H)]
        self.W_hat = [np.array(net.W0) for _ in range(H)]
        self.states = np.zeros((0, H + 1), dtype=int)
        self.actions = np.zeros((0, H), dtype=int)
        self.episodes = 0
        self.Q = self.V = self.bonus = None
        self.grad_norms = np.zeros(H)
        self.oracle_results = [None] * H
        self._grid_phi0 = None
        self._handles = None
        if config.frozen:
            self._grid_phi0 = tangent_features(net, mdp.grid, W=net.W0)
            self._handles = [blk.track(self._grid_phi0) for blk in self.precision]

    @property
    def H(self):
        return self.mdp.H

    def inputs(self, h):
        A = self.mdp.n_actions
        return self.mdp.grid[self.states[:, h] * A + self.actions[:, h]]

    def build_targets(self, h, V_next):
        if self.episodes == 0:
            return np.zeros(0)
        xs, acts = self.states[:, h], self.actions[:, h]
        return self.mdp.rewards[h, xs, acts] + V_next[self.states[:, h + 1]]

    def _sync_precision(self, h, W):
        """Bring Lambda_h up to date: the newest point enters with features at ``W``."""
        blk = self.precision[h]
        if blk.n == self.episodes:
            return
        if blk.n != self.episodes - 1:
            raise StateError("precision matrix lags the data by more than one point")
        z = self.inputs(h)[-1:]
        W = self.net.W0 if self.config.frozen else W
        blk.append(tangent_features(self.net, z, W=W))

    def backward_sweep(self, beta):
        H, S, A = self.mdp.rewards.shape
        grid = self.mdp.grid
        Q = np.zeros((H, S, A))
        V = np.zeros((H + 1, S))
        B = np.zeros((H, S, A))
        for h in range(H - 1, -1, -1):
            y = self.build_targets(h, V[h + 1])
            if self.config.frozen:
                self._sync_precision(h, None)
                blk = self.precision[h]
                alpha_tri = blk.half_solve(y)
                mean = blk.tracked_predict(self._handles[h], alpha_tri)
                var = blk.tracked_variance(self._handles[h])
                self.grad_norms[h] = 0.0
            else:
                res = minimize_loss(self.net, self.inputs(h), y, self.lam, self.config.oracle,
                                    W_start=self.W_hat[h])
                self.W_hat[h] = res.W
                self.oracle_results[h] = res
                self.grad_norms[h] = res.grad_norm
                self._sync_precision(h, res.W)
                mean = forward(self.net, grid, W=res.W)
                var = self.precision[h].variance(tangent_features(self.net, grid, W=res.W))
            bonus = np.sqrt(var / self.lam)
            Q[h] = np.clip(mean + beta * bonus, 0.0, H - h).reshape(S, A)
            B[h] = bonus.reshape(S, A)
            V[h] = Q[h].max(axis=1)
        self.Q, self.V, self.bonus = Q, V, B
        return Q, V

    def policy(self, rng=None):
        return np.stack([greedy_actions(self.Q[h], self.config.tie_break, rng) for h in range(self.H)])

    def observe(self, traj):
        self.states = np.vstack([self.states, traj.states[None, :]])
        self.actions = np.vstack([self.actions, traj.actions[None, :]])
        self.episodes += 1

    def neural_bonus(self, h, Z):
        """Bonus at ``Z`` from the current Lambda_h and minimizer of step ``h``."""
        W = self.net.W0 if self.config.frozen else self.W_hat[h]
        phi = tangent_features(self.net, Z, W=W)
        return np.sqrt(self.precision[h].variance(phi) / self.lam)

    def precision_dense(self, h):
        """Explicit ``lam I + sum phi phi^T``; only sensible for small 2md."""
        Phi = self.precision[h].points
        return self.lam * np.eye(self.net.n_params) + Phi.T @ Phi


def neural_bonus(agent, h, Z):
    return agent.neural_bonus(h, Z)


def run_novi(mdp, net, config, rng_seed=0):
    """Run T episodes of NOVI; returns (RegretRecord, agent, trace).

    Extra record columns: ``grad_norm_max`` (largest final oracle gradient norm
    of the episode) and, with ``config.shadow``, ``linearization_gap``: the
    sup-norm distance between this agent's Q tables and those of a frozen-feature
    agent fed the same trajectories.
    """
    env_rng, agent_rng = _streams(rng_seed)
    agent = NoviAgent(mdp, net, config)
    shadow = None
    if config.shadow and not config.frozen:
        shadow = NoviAgent(mdp, net, NoviConfig(config.T, config.beta, config.lam, config.tie_break,
                                                frozen=True, keep_trace=False))
    opt = exact_optimal_values(mdp)
    trace = EpisodeTrace() if config.keep_trace else None
    T, H = config.T, mdp.H
    regret = np.zeros(T)
    gains = np.zeros((T, H))
    gmax = np.zeros(T)
    gap = np.zeros(T)
    for t in range(T):
        agent.backward_sweep(config.beta)
        gmax[t] = agent.grad_norms.max()
        if shadow is not None:
            shadow.backward_sweep(config.beta)
            gap[t] = np.max(np.abs(agent.Q - shadow.Q))
        pol = agent.policy(agent_rng)
        traj = rollout(mdp, pol, env_rng, episode=t + 1)
        _, Vpi = policy_evaluation(mdp, pol)
        x1 = traj.states[0]
        regret[t] = opt.V[0, x1] - Vpi[0, x1]
        if trace is not None:
            trace.append(agent.Q, agent.bonus, pol, traj, config.beta)
        agent.observe(traj)
        if shadow is not None:
            shadow.observe(traj)
        gains[t] = [info_gain(blk) for blk in agent.precision]
    extra = {"grad_norm_max": gmax}
    if shadow is not None:
        extra["linearization_gap"] = gap
    record = RegretRecord(int(rng_seed), float(config.beta), regret, gains, extra)
    return record, agent, trace


def novi_decay(net):
    """Decay class of the limiting kernel of ``net``'s activation."""
    act = net.activation if net.activation != "relu_power" else (net.activation, net.s)
    return ntk_decay(act, net.d)
