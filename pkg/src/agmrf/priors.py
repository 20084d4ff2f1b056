"""Penalized-complexity priors for tau_b, phi and theta.

The phi and theta priors are exponential on a KL-based distance ``d`` pushed
forward to the parameter, with closed-form distances built from eigenvalues:

* theta (base theta = 1): eps_i, the eigenvalues of (R1 + R2)^-1 R2 after
  deleting one row/column of the scaled parts;
* phi (base phi = 0): gamma_tilde_i, inverted non-zero eigenvalues of the
  scaled structure matrix.

Both ``d^2`` expressions are sums of ``f(u) = log1p(u) - u/(1+u)`` (theta) or
``g(v) = v - log1p(v)`` (phi).  These cancel catastrophically near the base
model, so small arguments use their Taylor series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import scipy.linalg as la
from scipy import integrate, optimize

from .structmat import StructureParts, generalized_inverse

CLAMP = 1e-12
QUAD_EPSABS = 1e-8
_SERIES_CUT = 1e-3


class PriorError(ValueError):
    pass


def _kl_terms_theta(u: np.ndarray) -> np.ndarray:
    """log1p(u) - u/(1+u), accurate for small |u|."""
    out = np.empty_like(u)
    small = np.abs(u) < _SERIES_CUT
    us = u[small]
    # sum_{k>=2} (-1)^k (k-1)/k u^k
    out[small] = us**2 * (0.5 - us * (2 / 3 - us * (0.75 - us * (0.8 - us * 5 / 6))))
    ub = u[~small]
    out[~small] = np.log1p(ub) - ub / (1.0 + ub)
    return out


def _kl_terms_phi(v: np.ndarray) -> np.ndarray:
    """v - log1p(v), accurate for small |v|."""
    out = np.empty_like(v)
    small = np.abs(v) < _SERIES_CUT
    vs = v[small]
    out[small] = vs**2 * (0.5 - vs * (1 / 3 - vs * (0.25 - vs * (0.2 - vs / 6))))
    vb = v[~small]
    out[~small] = vb - np.log1p(vb)
    return out


# ---------------------------------------------------------------- precision


@dataclass(frozen=True)
class PcPrecisionPrior:
    """PC prior on a precision: 1/sqrt(tau) ~ Exponential(lam)."""

    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise PriorError("lambda must be positive")

    def logpdf(self, tau):
        tau = np.asarray(tau, dtype=float)
        return np.log(self.lam / 2) - 1.5 * np.log(tau) - self.lam / np.sqrt(tau)

    def pdf(self, tau):
        return np.exp(self.logpdf(tau))

    def cdf(self, tau):
        """P(precision < tau) = P(sd > 1/sqrt(tau))."""
        return np.exp(-self.lam / np.sqrt(np.asarray(tau, dtype=float)))

    def tail_sd(self, u: float) -> float:
        """P(1/sqrt(tau) > u)."""
        return math.exp(-self.lam * u)

    @property
    def support(self):
        return (0.0, math.inf)


def pc_precision_calibrate(u: float = 1.0, a: float = 0.01) -> PcPrecisionPrior:
    """lambda such that P(1/sqrt(tau) > u) = a."""
    if not u > 0:
        raise PriorError("u must be positive")
    if not 0 < a < 1:
        raise PriorError("a must lie in (0, 1)")
    return PcPrecisionPrior(-math.log(a) / u)


# -------------------------------------------------------------------- theta


def _deleted(M, r: int) -> np.ndarray:
    A = M.toarray() if hasattr(M, "toarray") else np.asarray(M, dtype=float)
    keep = np.r_[0:r, r + 1 : A.shape[0]]
    return A[np.ix_(keep, keep)]


def theta_pencil(parts: StructureParts) -> tuple:
    """(reference, shock) matrices for the theta KL distance.

    For L = 2 these are R*_1 and R*_2.  For the general multi-country
    structure the reference is sum_{m<=M} R*_m (all psi_m = 1) and the shock
    part is the between-country R*_{M+1}.
    """
    if parts.n_parts < 2:
        raise PriorError("theta needs an adaptive structure with at least two parts")
    scaled = parts.scaled_parts if parts.scaled else parts.parts
    ref = scaled[0]
    for R in scaled[1:-1]:
        ref = ref + R
    return ref, scaled[-1]


def theta_eigenvalues(parts: StructureParts, removed_index: int = 1) -> np.ndarray:
    """Sorted eigenvalues of (R1^ + R2^)^-1 R2^ with row/column r (1-based) deleted."""
    n = parts.n
    if not 1 <= removed_index <= n:
        raise PriorError(f"removed_index must lie in 1..{n}")
    ref, shock = theta_pencil(parts)
    r = removed_index - 1
    A = _deleted(ref + shock, r)
    B = _deleted(shock, r)
    try:
        vals = la.eigh(B, A, eigvals_only=True)
    except la.LinAlgError as exc:
        raise PriorError("deleted structure is singular; is the graph connected?") from exc
    return np.sort(np.clip(vals, 0.0, 1.0))


def d_theta(theta, eps) -> np.ndarray:
    """Distance of theta from the base model theta = 1."""
    eps = np.asarray(eps, dtype=float)
    th = np.asarray(theta, dtype=float)
    if np.any(th <= 0) or np.any(th > 1):
        raise PriorError("theta must lie in (0, 1]")
    u = (th[..., None] - 1.0) * eps
    if np.any(1.0 + u <= 0):
        raise PriorError("1 + (theta - 1) eps_i must be positive")
    d2 = _kl_terms_theta(u).sum(axis=-1)
    return np.sqrt(np.maximum(d2, 0.0))


def d_theta_slope(theta, eps) -> np.ndarray:
    """d'(theta); finite and negative at theta = 1 via its limit."""
    eps = np.asarray(eps, dtype=float)
    th = np.asarray(theta, dtype=float)
    u = (th[..., None] - 1.0) * eps
    s = np.sum(eps**2 / (1.0 + u) ** 2, axis=-1)
    d = d_theta(th, eps)
    # (1 - theta)/d -> sqrt(2 / sum eps^2) at theta = 1
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(d > 0, (1.0 - th) / np.where(d > 0, d, 1.0), math.sqrt(2.0 / max(np.sum(eps**2), 1e-300)))
    return -0.5 * ratio * s


@dataclass(frozen=True)
class PcThetaPrior:
    lam: float
    eps: tuple[float, ...]
    removed_index: int = 1

    def __post_init__(self):
        if not self.lam > 0:
            raise PriorError("lambda must be positive")

    @property
    def support(self):
        return (0.0, 1.0)

    def distance(self, theta):
        return d_theta(theta, self.eps)

    def pdf(self, theta):
        th = np.asarray(theta, dtype=float)
        if np.any(th <= 0) or np.any(th > 1):
            raise PriorError("theta must lie in (0, 1]")
        eps = np.asarray(self.eps)
        if not np.any(eps > 0):
            raise PriorError("all eigenvalues are zero; prior is degenerate")
        return self.lam * np.exp(-self.lam * d_theta(th, eps)) * np.abs(d_theta_slope(th, eps))

    def logpdf(self, theta):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(theta))

    def cdf(self, theta):
        """P(theta' < theta) = exp(-lam d(theta))."""
        return np.exp(-self.lam * d_theta(theta, self.eps))


def pc_theta_calibrate(U: float, alpha: float, eps, removed_index: int = 1) -> PcThetaPrior:
    """lambda = -log(alpha)/d(U), so P(theta < U) = alpha."""
    if not 0 < U < 1:
        raise PriorError("U must lie in (0, 1)")
    if not 0 < alpha < 1:
        raise PriorError("alpha must lie in (0, 1)")
    dU = float(d_theta(U, eps))
    if dU == 0.0:
        raise PriorError("d(U) = 0: the two parts are indistinguishable, theta cannot be calibrated")
    return PcThetaPrior(-math.log(alpha) / dU, tuple(float(e) for e in eps), removed_index)


# ---------------------------------------------------------------------- phi


def phi_gamma_tilde(Q, rtol: float = 1e-8) -> np.ndarray:
    """Inverted non-zero eigenvalues of a scaled structure matrix (zeros kept)."""
    A = Q.toarray() if hasattr(Q, "toarray") else np.asarray(Q, dtype=float)
    vals = np.linalg.eigvalsh(A)
    keep = vals > rtol * vals.max()
    out = np.zeros_like(vals)
    out[keep] = 1.0 / vals[keep]
    return np.sort(out)


def d_phi(phi, gamma_tilde) -> np.ndarray:
    """Distance of phi from the base model phi = 0."""
    g = np.asarray(gamma_tilde, dtype=float) - 1.0
    ph = np.asarray(phi, dtype=float)
    if np.any(ph < 0) or np.any(ph >= 1):
        raise PriorError("phi must lie in [0, 1)")
    v = ph[..., None] * g
    if np.any(1.0 + v <= 0):
        raise PriorError("1 + phi (gamma_i - 1) must be positive")
    return np.sqrt(np.maximum(_kl_terms_phi(v).sum(axis=-1), 0.0))


def d_phi_slope(phi, gamma_tilde) -> np.ndarray:
    g = np.asarray(gamma_tilde, dtype=float) - 1.0
    ph = np.asarray(phi, dtype=float)
    s = np.sum(g**2 / (1.0 + ph[..., None] * g), axis=-1)
    d = d_phi(ph, gamma_tilde)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(d > 0, ph / np.where(d > 0, d, 1.0), math.sqrt(2.0 / max(np.sum(g**2), 1e-300)))
    return 0.5 * ratio * s


def phi_distance_s(s, gamma_tilde) -> tuple[np.ndarray, np.ndarray]:
    """d and dd/ds in the coordinate s = -log(1 - phi).

    Zero entries of gamma_tilde give the term log(1 - phi) = -s, which
    diverges only logarithmically: a large share of the prior mass sits
    where 1 - phi underflows in double precision.  Working in s keeps both
    the distance and the density exact out there.
    """
    gt = np.asarray(gamma_tilde, dtype=float)
    s = np.asarray(s, dtype=float)
    ph = -np.expm1(-s)[..., None]
    g = gt - 1.0
    v = ph * g
    small = np.abs(v) < _SERIES_CUT
    terms = np.empty(np.broadcast(ph, g).shape)
    terms[small] = _kl_terms_phi(v[small])
    # log(1 + phi (gt - 1)) = log(exp(-s) + phi gt)
    with np.errstate(divide="ignore"):
        log_arg = np.logaddexp(-s[..., None], np.log(ph * gt))
    big = ~small
    terms[big] = (v - log_arg)[big]
    d = np.sqrt(np.maximum(terms.sum(axis=-1), 0.0))
    # dd/dphi * dphi/ds, with dphi/ds = exp(-s) folded into the ratio
    q = np.sum(g**2 * np.exp(-s[..., None] - log_arg), axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(d > 0, ph[..., 0] / np.where(d > 0, d, 1.0), math.sqrt(2.0 / max(np.sum(g**2), 1e-300)))
    return d, 0.5 * ratio * q


@dataclass(frozen=True)
class PcPhiPrior:
    lam: float
    gamma_tilde: tuple[float, ...]

    def __post_init__(self):
        if not self.lam > 0:
            raise PriorError("lambda must be positive")

    @property
    def support(self):
        return (0.0, 1.0)

    def distance(self, phi):
        return d_phi(phi, self.gamma_tilde)

    def pdf(self, phi):
        ph = np.asarray(phi, dtype=float)
        if np.any(ph < 0) or np.any(ph > 1):
            raise PriorError("phi must lie in [0, 1]")
        ph = np.minimum(ph, 1.0 - CLAMP)
        return self.lam * np.exp(-self.lam * d_phi(ph, self.gamma_tilde)) * np.abs(d_phi_slope(ph, self.gamma_tilde))

    def logpdf(self, phi):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(phi))

    def pdf_s(self, s):
        """Density of s = -log(1 - phi)."""
        d, slope = phi_distance_s(s, self.gamma_tilde)
        return self.lam * np.exp(-self.lam * d) * np.abs(slope)

    def logpdf_logit(self, z):
        """Log density of z = logit(phi), stable for large z."""
        z = np.asarray(z, dtype=float)
        s = np.logaddexp(0.0, z)  # -log(1 - expit(z))
        d, slope = phi_distance_s(s, self.gamma_tilde)
        # ds/dz = expit(z)
        with np.errstate(divide="ignore"):
            return np.log(self.lam) - self.lam * d + np.log(np.abs(slope)) - np.logaddexp(0.0, -z)

    def cdf(self, phi):
        """P(phi' < phi) = 1 - exp(-lam d(phi))."""
        return -np.expm1(-self.lam * d_phi(phi, self.gamma_tilde))


def pc_phi_calibrate(U: float, alpha: float, gamma_tilde) -> PcPhiPrior:
    """lambda = -log(1 - alpha)/d(U), so P(phi < U) = alpha."""
    if not 0 < U < 1:
        raise PriorError("U must lie in (0, 1)")
    if not 0 < alpha < 1:
        raise PriorError("alpha must lie in (0, 1)")
    dU = float(d_phi(U, gamma_tilde))
    if dU == 0.0:
        raise PriorError("d(U) = 0: structured and unstructured effects coincide")
    return PcPhiPrior(-math.log1p(-alpha) / dU, tuple(float(g) for g in gamma_tilde))


# ------------------------------------------------------- convenience builders


def default_theta_prior(parts: StructureParts, U: float = 0.75, alpha: float = 0.75) -> PcThetaPrior:
    return pc_theta_calibrate(U, alpha, theta_eigenvalues(parts))


def default_phi_prior(parts: StructureParts, U: float = 0.5, alpha: float = 2 / 3) -> PcPhiPrior:
    """phi prior conditional on theta = 1 (and every psi_m = 1)."""
    return pc_phi_calibrate(U, alpha, phi_gamma_tilde(parts.combine([1.0] * parts.n_parts)))


# ------------------------------------------------------------ mass/quantiles

Prior = Union[PcPrecisionPrior, PcThetaPrior, PcPhiPrior]


def _pdf_scalar(prior: Prior, x: float) -> float:
    lo, hi = prior.support
    if isinstance(prior, PcPrecisionPrior):
        return float(prior.pdf(x)) if x > 0 else 0.0
    x = min(max(x, lo + CLAMP), hi - CLAMP)
    return float(prior.pdf(x))


def prior_mass(prior: Prior, interval: Sequence[float] | None = None) -> float:
    """Probability of ``interval`` by adaptive Gauss-Kronrod quadrature."""
    lo, hi = prior.support
    a, b = (lo, hi) if interval is None else interval
    if a < lo or b > hi or a > b:
        raise PriorError(f"interval {a, b} outside support {lo, hi}")
    if a == b:
        return 0.0
    if isinstance(prior, PcPrecisionPrior):
        # integrate in sd = 1/sqrt(tau) where the density is a plain exponential
        f = lambda s: prior.lam * math.exp(-prior.lam * s)
        s_lo = 0.0 if math.isinf(b) else 1.0 / math.sqrt(b)
        s_hi = math.inf if a == 0 else 1.0 / math.sqrt(a)
        val, _ = integrate.quad(f, s_lo, s_hi, epsabs=QUAD_EPSABS, epsrel=1e-10, limit=200)
        return val
    if isinstance(prior, PcPhiPrior):
        # s = -log(1 - phi) reaches the mass piled up next to phi = 1
        s_lo = -math.log1p(-a)
        s_hi = math.inf if b >= 1.0 else -math.log1p(-b)
        f = lambda s: float(prior.pdf_s(s))
        if math.isinf(s_hi):
            val, _ = integrate.quad(f, s_lo, 50.0, epsabs=QUAD_EPSABS, epsrel=1e-10, limit=400)
            # beyond s = 50 the distance is sqrt(s + c): integrate in t = sqrt(s)
            g = lambda t: 2.0 * t * float(prior.pdf_s(t * t))
            tail, _ = integrate.quad(g, math.sqrt(max(s_lo, 50.0)), math.inf, epsabs=QUAD_EPSABS, limit=400)
            return val + tail
        val, _ = integrate.quad(f, s_lo, s_hi, epsabs=QUAD_EPSABS, epsrel=1e-10, limit=400)
        return val
    val, _ = integrate.quad(lambda x: _pdf_scalar(prior, x), a, b, epsabs=QUAD_EPSABS, epsrel=1e-10, limit=200)
    return val


def prior_quantiles(prior: Prior, probs: Sequence[float], xtol: float = 1e-12) -> np.ndarray:
    """Inverse CDF by bisection on the quadrature mass."""
    lo, hi = prior.support
    out = []
    for p in probs:
        if not 0 < p < 1:
            raise PriorError("probabilities must lie in (0, 1)")
        if isinstance(prior, PcPrecisionPrior):
            a, b = 1e-12, 1.0
            while prior_mass(prior, (0.0, b)) < p:
                b *= 10.0
        elif isinstance(prior, PcPhiPrior):
            # bisect in s = -log(1 - phi) so upper quantiles past 1 - 1e-16 stay resolvable
            b = 1.0
            while prior_mass(prior, (0.0, -math.expm1(-b))) < p:
                b *= 2.0
                if b > 1e12:
                    raise PriorError("quantile lies beyond representable phi")
            s = optimize.bisect(lambda s: prior_mass(prior, (0.0, -math.expm1(-s))) - p, 0.0, b, xtol=xtol, maxiter=400)
            out.append(-math.expm1(-s))
            continue
        else:
            a, b = lo + CLAMP, hi - CLAMP
        out.append(optimize.bisect(lambda x: prior_mass(prior, (lo, x)) - p, a, b, xtol=xtol, maxiter=200))
    return np.array(out)


# ------------------------------------------------- brute-force KL references


def kl_distance_theta_direct(parts: StructureParts, theta: float, removed_index: int = 1) -> float:
    """sqrt(2 KL) from trace and log-determinants of the deleted matrices."""
    ref, shock = theta_pencil(parts)
    r = removed_index - 1
    base = _deleted(ref + shock, r)
    flex = _deleted(ref + theta * shock, r)
    m = base.shape[0]
    tr = np.trace(base @ np.linalg.inv(flex))
    logdet = np.linalg.slogdet(base)[1] - np.linalg.slogdet(flex)[1]
    return math.sqrt(max(tr - m - logdet, 0.0))


def kl_distance_phi_direct(Q, phi: float) -> float:
    """sqrt(2 KL) of N(0, (1-phi) I + phi Q^-) from N(0, I)."""
    Qinv, _ = generalized_inverse(Q)
    n = Qinv.shape[0]
    S = (1.0 - phi) * np.eye(n) + phi * Qinv
    return math.sqrt(max(np.trace(S) - n - np.linalg.slogdet(S)[1], 0.0))
