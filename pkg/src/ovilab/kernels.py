"""Kernels, Gram matrices, incremental kernel ridge regression and the UCB bonus.

A :class:`DataBlock` keeps the lower Cholesky factor of ``K + lam * I`` for the
points seen so far and grows it one row per appended point.  Fixed query sets
(the enumerated state-action grid in KOVI) can be *tracked*: for those the
block also maintains ``L^{-1} k(Z, q)`` so that posterior variances cost O(1)
per query after each append.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import InputError, NumericalError

JITTER_START = 1e-10
JITTER_MAX = 1e-6
SPHERE_TOL = 1e-12


@dataclass(frozen=True)
class StateActionPoint:
    """An embedded state-action pair with optional provenance."""

    coords: np.ndarray
    state: Optional[int] = None
    action: Optional[int] = None
    step: Optional[int] = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float).ravel()
        if coords.size < 1:
            raise InputError("a state-action point needs at least one coordinate")
        object.__setattr__(self, "coords", coords)

    @property
    def dim(self):
        return self.coords.size

    def on_sphere(self, tol=SPHERE_TOL):
        return abs(np.linalg.norm(self.coords) - 1.0) <= tol


def as_array(points, dim=None):
    """Stack points (arrays, sequences or StateActionPoints) into an (n, d) array."""
    if isinstance(points, np.ndarray):
        X = np.asarray(points, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
    else:
        rows = [p.coords if isinstance(p, StateActionPoint) else np.asarray(p, dtype=float).ravel()
                for p in points]
        if not rows:
            return np.zeros((0, dim or 0))
        sizes = {r.size for r in rows}
        if len(sizes) != 1:
            raise InputError(f"points have mixed dimensions {sorted(sizes)}")
        X = np.vstack(rows)
    if X.ndim != 2:
        raise InputError("points must form a 2-D array")
    if dim is not None and X.shape[0] and X.shape[1] != dim:
        raise InputError(f"expected dimension {dim}, got {X.shape[1]}")
    return X


def sphere_normalize(X):
    X = np.asarray(X, dtype=float)
    return X / np.linalg.norm(X, axis=-1, keepdims=True)


@dataclass(frozen=True)
class DecayClass:
    """Eigenvalue-decay description of an RKHS.

    ``kind`` is one of ``"finite"``, ``"exponential"``, ``"polynomial"``.  ``d`` is
    the input dimension; only the polynomial formulas use it.
    """

    kind: str
    gamma: float
    C1: float = 1.0
    C2: float = 1.0
    tau: float = 0.0
    C_psi: float = 1.0
    d: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("finite", "exponential", "polynomial"):
            raise InputError(f"unknown decay kind {self.kind!r}")
        if self.gamma <= 0 or self.C1 <= 0 or self.C2 <= 0 or self.C_psi <= 0:
            raise InputError("decay constants must be strictly positive")
        if self.kind == "finite" and int(self.gamma) != self.gamma:
            raise InputError("finite spectrum rank must be a positive integer")
        if self.kind == "polynomial" and self.gamma <= 1:
            raise InputError("polynomial decay needs gamma > 1")
        if not 0.0 <= self.tau < 0.5:
            raise InputError("tau must lie in [0, 1/2)")
        if self.d is not None and self.d < 1:
            raise InputError("input dimension must be >= 1")

    @classmethod
    def finite(cls, gamma, **kw):
        return cls("finite", gamma, **kw)

    @classmethod
    def exponential(cls, gamma, **kw):
        return cls("exponential", gamma, **kw)

    @classmethod
    def polynomial(cls, gamma, **kw):
        return cls("polynomial", gamma, **kw)

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma, "C1": self.C1, "C2": self.C2,
                "tau": self.tau, "C_psi": self.C_psi, "d": self.d}


@dataclass(frozen=True)
class KernelSpec:
    """A positive-definite kernel evaluated on batches.

    ``fn(X, Y)`` maps (n, d) and (m, d) arrays to the (n, m) cross-kernel.
    ``feature_map``, when present, is an explicit finite feature map with
    ``fn(X, Y) == feature_map(X) @ feature_map(Y).T``.
    """

    fn: Callable
    name: str = "kernel"
    bounded: bool = True
    decay: Optional[DecayClass] = None
    feature_map: Optional[Callable] = None
    meta: dict = field(default_factory=dict)

    def __call__(self, X, Y):
        return self.fn(np.atleast_2d(X), np.atleast_2d(Y))

    def diag(self, X):
        X = np.atleast_2d(X)
        if self.feature_map is not None:
            F = self.feature_map(X)
            return np.einsum("ij,ij->i", F, F)
        return np.array([self.fn(x[None, :], x[None, :])[0, 0] for x in X])


def linear_kernel(decay=None):
    return KernelSpec(lambda X, Y: X @ Y.T, name="linear", decay=decay,
                      feature_map=lambda X: X)


def feature_kernel(feature_map, name="features", decay=None, bounded=True):
    """Finite-rank kernel ``<phi(z), phi(z')>`` from an explicit feature map."""
    return KernelSpec(lambda X, Y: feature_map(X) @ feature_map(Y).T, name=name,
                      decay=decay, feature_map=feature_map, bounded=bounded)


def inner_product_kernel(kfun, name="inner_product", decay=None, bounded=True):
    """Kernel ``k(<z, z'>)`` for points on the unit sphere."""

    def fn(X, Y):
        return kfun(np.clip(X @ Y.T, -1.0, 1.0))

    return KernelSpec(fn, name=name, decay=decay, bounded=bounded, meta={"kfun": kfun})


def rbf_kernel(sigma=1.0, decay=None):
    def fn(X, Y):
        sq = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
        return np.exp(-np.maximum(sq, 0.0) / sigma ** 2)

    return KernelSpec(fn, name=f"rbf({sigma})", decay=decay)


def gram_matrix(kernel, points, dim=None):
    """Symmetric Gram matrix of ``kernel`` over ``points``; 0x0 when empty."""
    X = as_array(points, dim)
    if X.shape[0] == 0:
        return np.zeros((0, 0))
    G = np.asarray(kernel(X, X), dtype=float)
    # mirror the upper triangle so symmetry is exact, whatever BLAS did
    return np.triu(G) + np.triu(G, 1).T


def _jittered_cholesky(A):
    """Cholesky of A with escalating diagonal jitter; returns (L, jitter)."""
    try:
        return np.linalg.cholesky(A), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = max(np.trace(A) / max(A.shape[0], 1), 1.0)
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(A + jitter * scale * np.eye(A.shape[0])), jitter * scale
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError("Cholesky failed after jitter escalation to 1e-6")


class DataBlock:
    """Visited points of one step together with the Cholesky factor of K + lam I.

    Single writer: ``append`` mutates, everything else reads.
    """

    def __init__(self, kernel, lam, dim, capacity=64):
        if lam <= 0:
            raise InputError("ridge parameter must be positive")
        self.kernel = kernel
        self.lam = float(lam)
        self.dim = int(dim)
        self.n = 0
        self.jitter = 0.0
        self._X = np.zeros((capacity, self.dim))
        self._L = np.zeros((capacity, capacity))
        self._tracked = []

    # construction --------------------------------------------------------
    @classmethod
    def from_points(cls, kernel, lam, points, dim=None):
        """Factor a whole point set at once (the non-incremental route)."""
        X = as_array(points, dim)
        block = cls(kernel, lam, X.shape[1] if X.size else (dim or 1), capacity=max(X.shape[0], 1))
        if X.shape[0]:
            L, jit = _jittered_cholesky(gram_matrix(kernel, X) + block.lam * np.eye(X.shape[0]))
            block._X[: X.shape[0]] = X
            block._L[: X.shape[0], : X.shape[0]] = L
            block.n = X.shape[0]
            block.jitter = jit
        return block

    def copy(self):
        other = DataBlock(self.kernel, self.lam, self.dim, capacity=max(self.n, 1))
        other.n = self.n
        other.jitter = self.jitter
        other._X[: self.n] = self._X[: self.n]
        other._L[: self.n, : self.n] = self._L[: self.n, : self.n]
        for t in self._tracked:
            other._tracked.append({k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in t.items()})
        return other

    def _grow(self):
        cap = self._X.shape[0]
        new = max(2 * cap, 1)
        X = np.zeros((new, self.dim))
        X[:cap] = self._X
        L = np.zeros((new, new))
        L[:cap, :cap] = self._L
        self._X, self._L = X, L
        for t in self._tracked:
            V = np.zeros((new, t["V"].shape[1]))
            V[:cap] = t["V"]
            t["V"] = V

    # views -----------------------------------------------------------------
    @property
    def points(self):
        return self._X[: self.n]

    @property
    def cholesky(self):
        return self._L[: self.n, : self.n]

    def gram(self):
        return gram_matrix(self.kernel, self.points)

    def __len__(self):
        return self.n

    # mutation --------------------------------------------------------------
    def append(self, z):
        z = as_array(z, self.dim)
        if z.shape[0] != 1:
            raise InputError("append takes exactly one point")
        n = self.n
        if n == self._X.shape[0]:
            self._grow()
        kzz = float(self.kernel(z, z)[0, 0]) + self.lam
        if n:
            kvec = np.asarray(self.kernel(self._X[:n], z)[:, 0], dtype=float)
            row = solve_triangular(self._L[:n, :n], kvec, lower=True, check_finite=False)
            dsq = kzz - row @ row
        else:
            row = np.zeros(0)
            dsq = kzz
        if not dsq > 0.0:
            dsq = self._rescue(dsq, kzz)
        diag = np.sqrt(dsq)
        self._X[n] = z[0]
        self._L[n, :n] = row
        self._L[n, n] = diag
        for t in self._tracked:
            kq = np.asarray(self.kernel(z, t["Q"])[0], dtype=float)
            v = (kq - row @ t["V"][:n]) / diag
            t["V"][n] = v
            t["sq"] += v * v
        self.n = n + 1

    def _rescue(self, dsq, kzz):
        scale = max(kzz, 1.0)
        jitter = JITTER_START
        while jitter <= JITTER_MAX * (1 + 1e-9):
            if dsq + jitter * scale > 0.0:
                self.jitter += jitter * scale
                return dsq + jitter * scale
            jitter *= 10.0
        raise NumericalError("rank-one Cholesky append failed after jitter escalation")

    def extend(self, points):
        for z in as_array(points, self.dim):
            self.append(z)

    # tracked query sets ----------------------------------------------------
    def track(self, queries):
        """Start maintaining posterior variances at a fixed query set; returns a handle."""
        Q = as_array(queries, self.dim)
        cap = self._X.shape[0]
        V = np.zeros((cap, Q.shape[0]))
        if self.n:
            K = np.asarray(self.kernel(self.points, Q), dtype=float)
            V[: self.n] = solve_triangular(self.cholesky, K, lower=True, check_finite=False)
        entry = {"Q": Q, "V": V, "sq": (V[: self.n] ** 2).sum(0), "kqq": self.kernel.diag(Q)}
        self._tracked.append(entry)
        return len(self._tracked) - 1

    def tracked_variance(self, handle):
        t = self._tracked[handle]
        return np.maximum(t["kqq"] - t["sq"], 0.0)

    def tracked_predict(self, handle, alpha_tri):
        """Predictions at tracked queries given ``alpha_tri = L^{-1} y``."""
        return self._tracked[handle]["V"][: self.n].T @ alpha_tri

    # solves ----------------------------------------------------------------
    def solve(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n,):
            raise InputError(f"expected {self.n} responses, got shape {y.shape}")
        if self.n == 0:
            return np.zeros(0)
        return cho_solve((self.cholesky, True), y, check_finite=False)

    def half_solve(self, y):
        """``L^{-1} y``."""
        y = np.asarray(y, dtype=float)
        if y.shape[0] != self.n:
            raise InputError(f"expected {self.n} rows, got {y.shape[0]}")
        if self.n == 0:
            return np.zeros((0,) + y.shape[1:])
        return solve_triangular(self.cholesky, y, lower=True, check_finite=False)

    def cross(self, Z):
        Z = as_array(Z, self.dim)
        if self.n == 0:
            return np.zeros((0, Z.shape[0]))
        return np.asarray(self.kernel(self.points, Z), dtype=float)

    def variance(self, Z):
        """Posterior variance ``K(z,z) - k(z)^T (K + lam I)^{-1} k(z)``, clamped at 0."""
        Z = as_array(Z, self.dim)
        kzz = self.kernel.diag(Z)
        if self.n == 0:
            return np.maximum(kzz, 0.0)
        V = self.half_solve(self.cross(Z))
        return np.maximum(kzz - (V * V).sum(0), 0.0)


def krr_fit(block, responses):
    """Dual weights ``alpha = (K + lam I)^{-1} y``."""
    return block.solve(responses)


def _one(z, dim):
    if isinstance(z, StateActionPoint):
        return as_array([z], dim)
    return as_array(np.asarray(z, dtype=float).reshape(1, -1), dim)


def predict(block, alpha, z):
    """``k(z)^T alpha`` at one point; 0 on an empty block."""
    return float(predict_many(block, alpha, _one(z, block.dim))[0])


def predict_many(block, alpha, Z):
    Z = as_array(Z, block.dim)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (block.n,):
        raise InputError(f"alpha has length {alpha.shape}, block has {block.n} points")
    if block.n == 0:
        return np.zeros(Z.shape[0])
    return block.cross(Z).T @ alpha


def ucb_bonus(block, z):
    return float(ucb_bonus_many(block, _one(z, block.dim))[0])


def ucb_bonus_many(block, Z):
    return np.sqrt(block.variance(Z) / block.lam)


def info_gain(block):
    """Empirical information gain ``1/2 logdet(I + K / lam)`` of the block's points."""
    if block.n == 0:
        return 0.0
    return float(np.sum(np.log(np.diag(block.cholesky))) - 0.5 * block.n * np.log(block.lam))


# --- primal (feature-space) forms ---------------------------------------------

def primal_precision(features, lam):
    """``lam I + Phi^T Phi``."""
    F = np.asarray(features, dtype=float)
    return lam * np.eye(F.shape[1]) + F.T @ F


def primal_predict(features, responses, query_features, lam):
    F = np.asarray(features, dtype=float)
    w = np.linalg.solve(primal_precision(F, lam), F.T @ np.asarray(responses, dtype=float))
    return np.atleast_2d(query_features) @ w


def primal_bonus(features, query_features, lam):
    """``sqrt(phi^T (lam I + Phi^T Phi)^{-1} phi)`` per query row."""
    F = np.asarray(features, dtype=float)
    Q = np.atleast_2d(query_features)
    sol = np.linalg.solve(primal_precision(F, lam), Q.T)
    return np.sqrt(np.maximum(np.einsum("ij,ji->i", Q, sol), 0.0))
