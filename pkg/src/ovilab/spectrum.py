"""Mercer spectra of inner-product kernels on the sphere and the analytic
information-gain, covering-number and exploration-weight formulas.

Eigenvalues are taken with respect to the normalized uniform measure on
S^{d-1}, so a kernel ``k(<z, z'>)`` satisfies ``sum_j N(d, j) rho_j = k(1)``.
"""
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial import chebyshev as C
from numpy.polynomial import polynomial as P
from scipy.special import beta as beta_fn
from scipy.special import gammaln, roots_jacobi, roots_legendre

from .errors import InputError, SpectrumAccuracyError
from .kernels import DecayClass, inner_product_kernel

DEFAULT_ORDER = 64
MAX_ORDER = 4096
ORDER_TOL = 1e-8
ROUTE_TOL = 1e-6


# --- spherical harmonics bookkeeping ------------------------------------------

def harmonic_multiplicity(d, j):
    """Dimension N(d, j) of degree-j spherical harmonics on S^{d-1}."""
    d, j = int(d), int(j)
    if d < 2:
        raise InputError("harmonic multiplicity needs d >= 2")
    if j < 0:
        raise InputError("degree must be nonnegative")
    if j == 0:
        return 1
    num = (2 * j + d - 2) * math.factorial(d + j - 3)
    den = math.factorial(j) * math.factorial(d - 2)
    value = num // den
    if value > sys.maxsize:
        raise OverflowError(f"N({d}, {j}) exceeds the int64 range")
    return value


def sphere_area(ell):
    """Lebesgue measure of S^{ell-1}."""
    return 2.0 * math.pi ** (ell / 2.0) / math.gamma(ell / 2.0)


def area_ratio(d):
    """|S^{d-2}| / |S^{d-1}|, computed in log space."""
    return math.exp(gammaln(d / 2.0) - gammaln((d - 1) / 2.0) - 0.5 * math.log(math.pi))


def legendre_sphere(j, u, d):
    """Degree-j Legendre polynomial in dimension d, normalized so P_j(1) = 1.

    Uses u P_j = j/(2j+d-2) P_{j-1} + (j+d-2)/(2j+d-2) P_{j+1}.
    """
    u = np.asarray(u, dtype=float)
    if j == 0:
        return np.ones_like(u)
    prev, cur = np.ones_like(u), u.copy()
    for k in range(1, j):
        prev, cur = cur, ((2 * k + d - 2) * u * cur - k * prev) / (k + d - 2)
    return cur


def rodrigues_constant(j, d):
    return math.exp(-j * math.log(2.0) + gammaln((d - 1) / 2.0) - gammaln((2 * j + d - 1) / 2.0))


# --- eigenvalue routes ----------------------------------------------------------

def _fh_integral(kfun, d, j, order):
    a = (d - 3) / 2.0
    x, w = roots_jacobi(order, a, a)
    return area_ratio(d) * float(np.sum(w * kfun(x) * legendre_sphere(j, x, d)))


def funk_hecke_quadrature(kfun, d, j, order=DEFAULT_ORDER, tol=ORDER_TOL, max_order=MAX_ORDER):
    """Gauss-Jacobi evaluation of rho_j, doubling the order until two successive
    orders agree within ``tol``.  Returns (rho_j, order_used)."""
    if d < 2:
        raise InputError("d must be >= 2")
    if j < 0:
        raise InputError("degree must be nonnegative")
    order = max(int(order), j + 2)
    prev = _fh_integral(kfun, d, j, order)
    while order < max_order:
        order *= 2
        cur = _fh_integral(kfun, d, j, order)
        if abs(cur - prev) <= tol * max(1.0, abs(cur)):
            return cur, order
        prev = cur
    raise SpectrumAccuracyError(f"quadrature for rho_{j} did not settle by order {max_order}")


def _derivative(kfun, j):
    if isinstance(kfun, P.Polynomial):
        return kfun.deriv(j) if j else kfun
    if isinstance(kfun, C.Chebyshev):
        return kfun.deriv(j) if j else kfun
    cheb = C.Chebyshev.interpolate(kfun, 96, domain=[-1, 1])
    return cheb.deriv(j) if j else cheb


def rodrigues_eigenvalue(kfun, d, j, order=DEFAULT_ORDER):
    """rho_j through Rodrigues' rule: integrate the j-th derivative of k against
    (1 - u^2)^{(2j+d-3)/2}.  Non-polynomial k is first interpolated by Chebyshev."""
    dk = _derivative(kfun, j)
    a = (2 * j + d - 3) / 2.0
    x, w = roots_jacobi(max(order, j + 2), a, a)
    return area_ratio(d) * rodrigues_constant(j, d) * float(np.sum(w * dk(x)))


def funk_hecke_eigenvalue(kfun, d, j, order=DEFAULT_ORDER, cross_check=None):
    """Eigenvalue rho_j of the kernel k(<z, z'>) on S^{d-1}.

    ``cross_check`` (default: on for polynomial k) compares against the
    Rodrigues route and raises :class:`SpectrumAccuracyError` on a disagreement
    above 1e-6.
    """
    value, _ = funk_hecke_quadrature(kfun, d, j, order)
    if cross_check is None:
        cross_check = isinstance(kfun, (P.Polynomial, C.Chebyshev))
    if cross_check:
        other = rodrigues_eigenvalue(kfun, d, j, order)
        if abs(other - value) > ROUTE_TOL * max(1.0, abs(value)):
            raise SpectrumAccuracyError(
                f"rho_{j}: Funk-Hecke {value:.12g} vs Rodrigues {other:.12g}")
    return value


@dataclass
class SphericalSpectrum:
    d: int
    kernel: str
    eigenvalues: list = field(default_factory=list)  # (j, rho_j, N(d, j))
    quadrature_order: int = DEFAULT_ORDER

    def nonzero_count(self, tol=1e-6):
        """Number of eigenvalues above ``tol`` in magnitude, with multiplicity."""
        return int(sum(mult for _, rho, mult in self.eigenvalues if abs(rho) > tol))

    def trace(self):
        return float(sum(rho * mult for _, rho, mult in self.eigenvalues))

    def to_dict(self):
        return {"d": self.d, "kernel": self.kernel,
                "eigenvalues": [[int(j), float(r), int(m)] for j, r, m in self.eigenvalues],
                "quadrature_order": int(self.quadrature_order)}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["d"]), data["kernel"],
                   [(int(j), float(r), int(m)) for j, r, m in data["eigenvalues"]],
                   int(data["quadrature_order"]))


def spherical_spectrum(kfun, d, jmax, kernel="kernel", order=DEFAULT_ORDER, cross_check=None):
    eig = []
    used = order
    for j in range(jmax + 1):
        rho, o = funk_hecke_quadrature(kfun, d, j, order)
        if cross_check or (cross_check is None and isinstance(kfun, (P.Polynomial, C.Chebyshev))):
            funk_hecke_eigenvalue(kfun, d, j, order, cross_check=True)
        used = max(used, o)
        eig.append((j, rho, harmonic_multiplicity(d, j)))
    return SphericalSpectrum(d, kernel, eig, used)


# --- neural tangent kernels -----------------------------------------------------

def parse_activation(spec):
    """'quadratic' | 'sine' | 'relu_power:s' | ('relu_power', s) -> (name, s)."""
    if isinstance(spec, tuple):
        name, s = spec
    elif isinstance(spec, str) and ":" in spec:
        name, s = spec.split(":", 1)
        s = float(s)
    else:
        name, s = spec, None
    if name == "relu_power":
        if s is None or s < 1:
            raise InputError("relu_power needs an exponent s >= 1")
        s = int(s) if float(s).is_integer() else float(s)
        return name, s
    if name not in ("quadratic", "sine"):
        raise InputError(f"unknown activation {spec!r}")
    return name, 0


def _relu_angular(theta, s, nodes):
    """(1/2pi) * integral over phi of cos(phi)_+^s cos(phi - theta)_+^s."""
    x, w = nodes
    lo = theta - math.pi / 2
    hi = math.pi / 2
    half = 0.5 * (hi - lo)
    phi = lo + half * (x + 1.0)
    vals = np.maximum(np.cos(phi), 0.0) ** s * np.maximum(np.cos(phi - theta), 0.0) ** s
    return half * float(np.sum(w * vals)) / (2.0 * math.pi)


def relu_ks(u, d, s, order=96):
    """K_s as a function of the inner product u, by quadrature over the 2-D
    cross-section of the uniform sphere distribution."""
    u = np.clip(np.asarray(u, dtype=float), -1.0, 1.0)
    nodes = roots_legendre(order)
    if d == 2:
        radial = 1.0
    else:
        radial = beta_fn(s + 1.0, (d - 2) / 2.0) / beta_fn(1.0, (d - 2) / 2.0)
    flat = np.array([_relu_angular(math.acos(v), s, nodes) for v in u.ravel()])
    return ((s + 1) ** 2 * radial * flat).reshape(u.shape)


def relu_ks_monte_carlo(u, d, s, n_samples=200_000, seed=0):
    """Monte Carlo K_s(u) with its standard error."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n_samples, d))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    z = np.zeros(d)
    z[0] = 1.0
    zp = np.zeros(d)
    zp[0], zp[1] = u, math.sqrt(max(1.0 - u * u, 0.0))
    vals = (s + 1) ** 2 * np.maximum(w @ z, 0.0) ** s * np.maximum(w @ zp, 0.0) ** s
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))


def ntk_kfun(activation, d):
    """Univariate profile k(u) of the limiting NTK, K(z, z') = k(<z, z'>)."""
    name, s = parse_activation(activation)
    if d < 2:
        raise InputError("NTK on the sphere needs d >= 2")
    if name == "quadratic":
        return P.Polynomial([0.0, 0.0, 4.0 / d])
    if name == "sine":
        return lambda u: np.asarray(u) * np.exp(np.asarray(u) - 1.0)
    return lambda u: np.asarray(u) * relu_ks(u, d, s)


def ntk_decay(activation, d):
    name, s = parse_activation(activation)
    if name == "quadratic":
        return DecayClass.finite(d * (d + 1) // 2, d=d)
    if name == "sine":
        return DecayClass.exponential(1.0 / d, d=d)
    return DecayClass.polynomial(1.0 + (1.0 + 2.0 * s) / (d - 1), tau=(d - 2) / (2.0 * d + 4.0 * s), d=d)


def ntk_closed_form(activation, d):
    """Limiting NTK of the two-layer network as a :class:`KernelSpec`."""
    name, s = parse_activation(activation)
    kfun = ntk_kfun(activation, d)
    label = name if name != "relu_power" else f"relu_power:{s}"
    return inner_product_kernel(kfun, name=f"ntk_{label}", decay=ntk_decay(activation, d),
                                bounded=(name == "sine"))


def matern_decay(nu, d):
    return DecayClass.polynomial(1.0 + 2.0 * nu / d, tau=0.0, d=d)


def rbf_decay(d):
    return DecayClass.exponential(1.0 / d, d=d)


def rbf_sphere_kfun(sigma):
    return lambda u: np.exp(-2.0 * (1.0 - np.asarray(u)) / sigma ** 2)


def rbf_eigen_envelope(j, d, sigma):
    """(2e/sigma^2)^j (2j+d-2)^{-(2j+d-1)/2}: the shape both sides of the
    squared-exponential eigenvalue bounds share."""
    return math.exp(j * math.log(2 * math.e / sigma ** 2) - (2 * j + d - 1) / 2.0 * math.log(2 * j + d - 2))


# --- analytic bounds ---------------------------------------------------------

@dataclass(frozen=True)
class Bound:
    value: float
    feasible: bool = True
    note: str = ""

    def __float__(self):
        return float(self.value)


def _need_d(decay):
    if decay.d is None:
        raise InputError("polynomial decay formulas need the input dimension d")
    return decay.d


def gamma_bound(decay, T, lam=1.0, C_K=1.0):
    """Leading-order bound on the maximal information gain Gamma_K(T, lam)."""
    if T < 1:
        raise InputError("T must be >= 1")
    if lam <= 0:
        raise InputError("lam must be positive")
    g = decay.gamma
    logT = math.log(T)
    if decay.kind == "finite":
        return Bound(C_K * g * logT)
    if decay.kind == "exponential":
        return Bound(C_K * logT ** (1.0 + 1.0 / g))
    d = _need_d(decay)
    ok = g >= 2.0 + 1.0 / d
    return Bound(C_K * T ** ((d + 1.0) / (g + d)) * logT, ok,
                 "" if ok else "polynomial decay needs gamma >= 2 + 1/d")


def covering_bound(decay, R, B, eps, C_N=1.0):
    """Upper bound on the log covering number of the optimistic value class."""
    if not 0.0 < eps < 1.0 / math.e:
        raise InputError("eps must lie in (0, 1/e)")
    if R <= 0 or B <= 0:
        raise InputError("R and B must be positive")
    g = decay.gamma
    lr = 1.0 + math.log(R / eps)
    lb = 1.0 + math.log(B / eps)
    if decay.kind == "finite":
        return Bound(C_N * g * lr + C_N * g * g * lb)
    if decay.kind == "exponential":
        return Bound(C_N * lr ** (1.0 + 1.0 / g) + C_N * lb ** (1.0 + 2.0 / g))
    eff = g * (1.0 - 2.0 * decay.tau) - 1.0
    if eff <= 0:
        return Bound(math.inf, False, "polynomial decay needs gamma (1 - 2 tau) > 1")
    return Bound(C_N * (R / eps) ** (2.0 / eff) * lr + C_N * (B / eps) ** (4.0 / eff) * lb)


@dataclass(frozen=True)
class BetaSchedule:
    decay: DecayClass
    C_b: float
    H: int
    T: int
    value: float
    kappa: Optional[float] = None
    xi: Optional[float] = None
    feasible: bool = True

    @property
    def eps(self):
        return self.H / self.T

    def __float__(self):
        return float(self.value)


def poly_exponents(decay):
    """(kappa*, xi*) for polynomial decay."""
    d = _need_d(decay)
    g, tau = decay.gamma, decay.tau
    xi = (d + 1.0) / (2.0 * (g + d))
    eff = g * (1.0 - 2.0 * tau)
    second = (2.0 * d + g + 1.0) / ((d + g) * (eff - 1.0)) if eff > 1 else math.inf
    third = 2.0 / (eff - 3.0) if eff > 3 else math.inf
    return max(xi, second, third), xi


def bt_schedule(decay, H, T, C_b=1.0):
    """Closed-form exploration weight B_T for each decay regime."""
    if C_b <= 0:
        raise InputError("C_b must be positive")
    if H < 1 or T < 1:
        raise InputError("H and T must be >= 1")
    g = decay.gamma
    if decay.kind == "finite":
        return BetaSchedule(decay, C_b, H, T, C_b * g * H * math.sqrt(math.log(g * T * H)))
    if decay.kind == "exponential":
        value = C_b * H * math.sqrt(math.log(T * H)) * math.log(T) ** (1.0 / g)
        return BetaSchedule(decay, C_b, H, T, value)
    kappa, xi = poly_exponents(decay)
    feasible = math.isfinite(kappa) and kappa + xi < 0.5
    value = C_b * H * math.log(T * H) * T ** kappa if math.isfinite(kappa) else math.inf
    return BetaSchedule(decay, C_b, H, T, value, kappa, xi, feasible)


def beta_fixed_point(decay, H, T, C_K=1.0, C_N=1.0, R_Q=2.0, neural=False, lam=None,
                     max_iter=500, tol=1e-10):
    """Smallest B solving the implicit exploration-weight inequality by
    iterating B <- H * sqrt(rhs(B)), with Gamma and log N taken from the
    analytic bounds above.

    ``neural=True`` uses the width-m variant, where lam is a free constant and
    the value-class radius is H sqrt(2T/lam).
    """
    if lam is None:
        lam = 1.0 + 1.0 / T
    eps = H / T
    if not eps < 1.0 / math.e:
        raise InputError("need H/T < 1/e for the covering bound")
    gam = float(gamma_bound(decay, T, lam, C_K))
    if neural:
        d = decay.d or 1
        R = H * math.sqrt(2.0 * T / lam)

        def rhs(B):
            return (16 * gam + 16 * float(covering_bound(decay, R, B, eps, C_N))
                    + 32 * math.log(2 * T * H) + 4 * R_Q ** 2 * (1 + lam / d))
    else:
        R = 2.0 * H * math.sqrt(max(gam, 1e-300))

        def rhs(B):
            return (8 * gam + 8 * float(covering_bound(decay, R, B, eps, C_N))
                    + 16 * math.log(2 * T * H) + 22 + 2 * R_Q ** 2)

    B = H * 1.0
    for _ in range(max_iter):
        new = H * math.sqrt(rhs(B))
        if not math.isfinite(new):
            return Bound(math.inf, False, "fixed point diverged")
        if abs(new - B) <= tol * max(1.0, new):
            return Bound(new)
        B = new
    return Bound(B, False, "fixed point iteration did not converge")


def misspecification_proxy(T, H, m):
    """T^{7/12} H^{1/6} m^{-1/12} (log m)^{1/4}."""
    return T ** (7 / 12) * H ** (1 / 6) * m ** (-1 / 12) * math.log(m) ** 0.25
