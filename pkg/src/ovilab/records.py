"""Per-episode regret records and the episode trace consumed by diagnostics."""
import csv
import io
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np


@dataclass
class RegretRecord:
    seed: int
    beta: float
    instant_regret: np.ndarray            # (T,)
    info_gain: np.ndarray                 # (T, H), after each episode's appends
    extra: dict = field(default_factory=dict)  # column name -> (T,) array

    @property
    def T(self):
        return len(self.instant_regret)

    @property
    def cum_regret(self):
        return np.cumsum(self.instant_regret)

    def header(self):
        H = self.info_gain.shape[1]
        return (["episode", "instant_regret", "cum_regret"]
                + [f"info_gain_h{h + 1}" for h in range(H)] + ["beta", "seed"] + list(self.extra))

    def rows(self):
        cum = self.cum_regret
        for t in range(self.T):
            row = [t + 1, _fmt(self.instant_regret[t]), _fmt(cum[t])]
            row += [_fmt(v) for v in self.info_gain[t]]
            row += [_fmt(self.beta), self.seed]
            row += [_fmt(col[t]) for col in self.extra.values()]
            yield row

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header())
        writer.writerows(self.rows())
        text = buf.getvalue()
        if path is not None:
            atomic_write(path, text)
        return text

    def exponent(self):
        return regret_exponent(self.cum_regret)


def _fmt(v):
    return repr(float(v))


def atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def regret_exponent(cum_regret, start_frac=0.25):
    """Least-squares slope of log(cum regret) against log(t) over t in [T/4, T]."""
    cum = np.asarray(cum_regret, dtype=float)
    T = len(cum)
    t = np.arange(1, T + 1)
    lo = max(int(np.ceil(start_frac * T)), 1)
    mask = (t >= lo) & (cum > 0)
    if mask.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(t[mask]), np.log(cum[mask]), 1)
    return float(slope)


@dataclass
class EpisodeTrace:
    """Everything an audit needs from one run, stored per episode."""

    Q: list = field(default_factory=list)        # (H, S, A) optimistic Q_h^t
    bonus: list = field(default_factory=list)    # (H, S, A) b_h^t before this episode's appends
    policy: list = field(default_factory=list)   # (H, S) executed greedy actions
    states: list = field(default_factory=list)   # (H + 1,)
    actions: list = field(default_factory=list)  # (H,)
    beta: list = field(default_factory=list)

    def append(self, Q, bonus, policy, traj, beta):
        self.Q.append(Q)
        self.bonus.append(bonus)
        self.policy.append(policy)
        self.states.append(traj.states)
        self.actions.append(traj.actions)
        self.beta.append(beta)

    def __len__(self):
        return len(self.Q)
