"""Deterministic Bayesian inference for the smoothed direct model.

Given hyperparameters the working likelihood is Gaussian with known
variances, so the latent posterior is exactly Gaussian.  The hyperparameters
are integrated over a grid built around the posterior mode; everything
reported (latent marginals, U5MR, DIC, LS) is a weighted mixture over that
grid.

Hard sum-to-zero constraints are handled by conditioning by kriging.  The
intrinsic prior precision Q is first augmented to Q + kappa C^T C, which is
positive definite and restricts to the same density on {Cz = 0}; the
constrained posterior and evidence follow from standard Gaussian identities,
so no generalised determinants are needed.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy import optimize
from scipy.special import expit, ndtr

from .latent import (
    DensePrecision,
    ModelError,
    ModelSpec,
    area_predictor_matrix,
    constraint_rows,
    design_matrix,
    hyper_values,
    intercept_row,
    prior_precision,
)

log = logging.getLogger(__name__)

LOG2PI = math.log(2 * math.pi)


class NumericalError(ArithmeticError):
    """Factorisation or optimisation failure inside the inference engine."""


def _dense(M) -> np.ndarray:
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


def _chol(M: np.ndarray, what: str):
    try:
        return la.cho_factor(M, lower=True, check_finite=True)
    except (la.LinAlgError, ValueError) as exc:
        raise NumericalError(f"{what} is not positive definite") from exc


def _logdet(cf) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(cf[0]))))


# ------------------------------------------------------- Gaussian conditional


@dataclass
class GaussianConditional:
    """Posterior N(mean, Sigma) of the latent vector given y and hyperparameters.

    ``chol`` factors the (augmented) posterior precision P; Sigma is
    P^-1 corrected for the constraints C z = 0.
    """

    mean: np.ndarray
    chol: tuple
    C: Optional[np.ndarray]
    PinvCt: Optional[np.ndarray]  # P^-1 C^T
    G_chol: Optional[tuple]  # factor of C P^-1 C^T
    log_evidence: float

    @property
    def dim(self) -> int:
        return self.mean.size

    def _correction(self, L: np.ndarray) -> Optional[np.ndarray]:
        if self.C is None:
            return None
        LW = L @ self.PinvCt  # m x k
        return LW, la.cho_solve(self.G_chol, LW.T)

    def cov(self, L) -> np.ndarray:
        """Covariance of L z for a dense or sparse m x d matrix L."""
        L = _dense(L)
        out = L @ la.cho_solve(self.chol, L.T)
        corr = self._correction(L)
        if corr is not None:
            LW, GiLW = corr
            out -= LW @ GiLW
        return 0.5 * (out + out.T)

    def var(self, L) -> np.ndarray:
        L = _dense(L)
        X = la.cho_solve(self.chol, L.T)
        v = np.einsum("ij,ji->i", L, X)
        corr = self._correction(L)
        if corr is not None:
            LW, GiLW = corr
            v -= np.einsum("ij,ji->i", LW, GiLW)
        return np.maximum(v, 0.0)

    def marginal_variances(self) -> np.ndarray:
        return self.var(np.eye(self.dim))


def gaussian_conditional_core(Q, A, y, V, C=None, kappa: float = 1.0) -> GaussianConditional:
    """Exact Gaussian posterior for z ~ N(0, Q^-) | Cz = 0 and y ~ N(Az, diag(V)).

    Q may be intrinsic provided C removes its null space.
    """
    Q = _dense(Q)
    A = _dense(A)
    y = np.asarray(y, dtype=float)
    V = np.asarray(V, dtype=float)
    n = y.size
    if C is not None:
        C = np.atleast_2d(np.asarray(C, dtype=float))
        Qt = Q + kappa * (C.T @ C)
    else:
        Qt = Q
    cQ = _chol(Qt, "prior precision")
    AtVi = A.T / V
    P = Qt + AtVi @ A
    cP = _chol(P, "posterior precision")
    b = AtVi @ y
    m = la.cho_solve(cP, b)
    logp = -0.5 * n * LOG2PI - 0.5 * np.sum(np.log(V)) + 0.5 * _logdet(cQ) - 0.5 * _logdet(cP) - 0.5 * (np.sum(y * y / V) - b @ m)
    W = Gc = None
    if C is not None:
        W = la.cho_solve(cP, C.T)
        Gc = _chol(C @ W, "constraint system")
        r = C @ m
        Gir = la.cho_solve(Gc, r)
        m = m - W @ Gir
        # log N(0; Cm, C P^-1 C^T) - log N(0; 0, C Qt^-1 C^T)
        G0 = _chol(C @ la.cho_solve(cQ, C.T), "prior constraint system")
        logp += -0.5 * _logdet(Gc) - 0.5 * r @ Gir + 0.5 * _logdet(G0)
    return GaussianConditional(mean=m, chol=cP, C=C, PinvCt=W, G_chol=Gc, log_evidence=float(logp))


class ConditionalEngine:
    """Caches the hyperparameter-free pieces of a ModelSpec."""

    def __init__(self, spec: ModelSpec, kappa: float = 1.0):
        self.spec = spec
        self.A = design_matrix(spec).toarray()
        self.y = np.array([o.y for o in spec.observations])
        self.V = np.array([o.var for o in spec.observations])
        self.C = constraint_rows(spec)
        self.kappa = kappa
        self.hypers = spec.free_hypers()
        self._precision = DensePrecision(spec)

    def conditional(self, z: Sequence[float]) -> GaussianConditional:
        hv = hyper_values(self.spec, z)
        Q = self._precision(hv)
        return gaussian_conditional_core(Q, self.A, self.y, self.V, self.C, self.kappa)

    def log_prior(self, z: Sequence[float]) -> float:
        """Log prior density of the internal coordinates z (Jacobians included)."""
        pri = self.spec.priors
        total = 0.0
        for h, zi in zip(self.hypers, z):
            zi = float(zi)
            v = h.to_natural(zi)
            if h.name == "tau_b":
                total += float(pri.tau_b.logpdf(v)) + zi
            elif h.name == "phi":
                total += float(pri.phi.logpdf_logit(zi))
            elif h.name == "theta":
                total += float(pri.theta.logpdf(v)) + h.log_jacobian(zi)
            elif h.name.startswith("psi_"):
                total += float(pri.psi.logpdf(v)) + zi
            elif h.name == "tau_nu":
                total += float(pri.tau_nu.logpdf(v)) + zi
            else:  # pragma: no cover - layout and engine disagree
                raise NumericalError(f"no prior for hyperparameter {h.name}")
        return total

    def log_posterior(self, z: Sequence[float]) -> float:
        try:
            return self.conditional(z).log_evidence + self.log_prior(z)
        except (NumericalError, ModelError):
            return -math.inf

    def initial_point(self) -> np.ndarray:
        start = {"tau_b": math.log(10.0), "phi": 0.0, "theta": 0.0, "tau_nu": math.log(100.0)}
        return np.array([start.get(h.name, 0.0) for h in self.hypers])


# -------------------------------------------------------- hyperparameter grid


@dataclass(frozen=True)
class GridConfig:
    delta: float = 0.75  # lattice step in standardised units
    drop: float = 6.0  # keep points within this log-density drop of the mode
    max_full_grid_dim: int = 5
    max_steps: int = 40  # per axis, each direction
    bound: float = 20.0  # |z| box for the mode search
    hessian_step: float = 1e-2
    ccd_scale: float = 1.2

    @classmethod
    def from_dict(cls, d) -> "GridConfig":
        return cls(**{k: type(getattr(cls(), k))(v) for k, v in d.items()})


@dataclass
class HyperPoint:
    z: np.ndarray
    log_post: float
    weight: float = 0.0


@dataclass
class Exploration:
    points: list[HyperPoint]
    mode: np.ndarray
    scales: np.ndarray  # per-axis standard deviation used for the lattice
    design: str  # "grid", "ccd" or "point"


def find_mode(logpost: Callable, z0: np.ndarray, config: GridConfig = GridConfig()) -> np.ndarray:
    """Derivative-free ascent (bounded Nelder-Mead, restarted once from its optimum)."""
    z0 = np.asarray(z0, dtype=float)
    if not math.isfinite(logpost(z0)):
        raise NumericalError("log posterior is not finite at the initial point")
    bounds = [(-config.bound, config.bound)] * z0.size

    def negative(z):
        v = logpost(z)
        return -v if math.isfinite(v) else 1e300

    z = z0
    for _ in range(2):
        res = optimize.minimize(
            negative,
            z,
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": 1e-7, "fatol": 1e-10, "maxiter": 4000 * z0.size, "maxfev": 8000 * z0.size},
        )
        z = res.x
    if not res.success and res.status != 2:
        raise NumericalError(f"mode search failed: {res.message}")
    return z


def hessian(logpost: Callable, z: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Hessian of logpost."""
    k = z.size
    f0 = logpost(z)
    H = np.zeros((k, k))
    E = np.eye(k) * h
    for i in range(k):
        H[i, i] = (logpost(z + E[i]) - 2 * f0 + logpost(z - E[i])) / h**2
        for j in range(i):
            H[i, j] = H[j, i] = (
                logpost(z + E[i] + E[j]) - logpost(z + E[i] - E[j]) - logpost(z - E[i] + E[j]) + logpost(z - E[i] - E[j])
            ) / (4 * h**2)
    return H


def axis_scales(H: np.ndarray) -> np.ndarray:
    """Marginal posterior sds from -H, falling back to 1/sqrt(curvature)."""
    negH = -H
    try:
        np.linalg.cholesky(negH)
        sd = np.sqrt(np.diag(np.linalg.inv(negH)))
    except np.linalg.LinAlgError:
        sd = 1.0 / np.sqrt(np.maximum(np.diag(negH), 1e-2))
    return np.clip(sd, 1e-3, 10.0)


def _lattice_grid(logpost, mode, scales, config: GridConfig) -> list[HyperPoint]:
    k = mode.size
    lp0 = logpost(mode)
    seen: dict[tuple, float] = {}
    kept: list[tuple] = []
    frontier = [tuple([0] * k)]
    seen[frontier[0]] = lp0
    while frontier:
        nxt = []
        for idx in frontier:
            lp = seen[idx]
            if not (math.isfinite(lp) and lp >= lp0 - config.drop):
                continue
            kept.append(idx)
            for axis, step in itertools.product(range(k), (-1, 1)):
                cand = list(idx)
                cand[axis] += step
                cand = tuple(cand)
                if cand in seen or abs(cand[axis]) > config.max_steps:
                    continue
                z = mode + config.delta * scales * np.array(cand)
                # the integration box is the mode-search box
                seen[cand] = logpost(z) if np.all(np.abs(z) <= config.bound) else -math.inf
                nxt.append(cand)
        frontier = nxt
    kept.sort()
    return [HyperPoint(mode + config.delta * scales * np.array(i), seen[i]) for i in kept]


def _ccd_grid(logpost, mode, H, config: GridConfig) -> list[HyperPoint]:
    """Central composite design in the Hessian-standardised space.

    Corners sit at +-a in every coordinate and axial points at +-a sqrt(k),
    with design weights chosen so a standard normal's mass and variance are
    integrated exactly; density ratios to that Gaussian reweight the points.
    """
    k = mode.size
    negH = -H
    vals, vecs = np.linalg.eigh(negH)
    vals = np.maximum(vals, 1e-2)
    T = vecs / np.sqrt(vals)  # z = mode + T s
    a = config.ccd_scale
    pts = [np.zeros(k)]
    pts += [np.array(c) * a for c in itertools.product((-1.0, 1.0), repeat=k)]
    for i in range(k):
        for sgn in (-1.0, 1.0):
            e = np.zeros(k)
            e[i] = sgn * a * math.sqrt(k)
            pts.append(e)
    n_outer = 2**k + 2 * k
    w_outer = 1.0 / (a * a * n_outer)
    design_w = [1.0 - 1.0 / (a * a)] + [w_outer] * n_outer
    lp0 = logpost(mode)
    out = []
    for s, dw in zip(pts, design_w):
        z = mode + T @ s
        lp = logpost(z)
        # weight relative to the fitted Gaussian
        out.append(HyperPoint(z, lp, math.log(dw) + (lp - lp0) + 0.5 * float(s @ s)))
    return out


def explore(logpost: Callable, z0, config: GridConfig = GridConfig()) -> Exploration:
    """Mode, scales and normalised weights for an arbitrary log posterior."""
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    if z0.size == 0:
        return Exploration([HyperPoint(z0, float(logpost(z0)), 1.0)], z0, z0, "point")
    mode = find_mode(logpost, z0, config)
    H = hessian(logpost, mode, config.hessian_step)
    scales = axis_scales(H)
    if z0.size <= config.max_full_grid_dim:
        pts = _lattice_grid(logpost, mode, scales, config)
        logw = np.array([p.log_post for p in pts])
        design = "grid"
    else:
        pts = _ccd_grid(logpost, mode, H, config)
        logw = np.array([p.weight for p in pts])
        design = "ccd"
    w = np.exp(logw - logw.max())
    w /= w.sum()
    for p, wi in zip(pts, w):
        p.weight = float(wi)
    return Exploration(pts, mode, scales, design)


def explore_hyperparameters(spec: ModelSpec, config: GridConfig = GridConfig(), engine: Optional[ConditionalEngine] = None) -> Exploration:
    engine = engine or ConditionalEngine(spec)
    return explore(engine.log_posterior, engine.initial_point(), config)


# ------------------------------------------------------------------ mixtures


def mixture_quantiles(weights, means, sds, probs, tol: float = 1e-12) -> np.ndarray:
    """Quantiles of per-element Gaussian mixtures by vectorised bisection.

    ``means``/``sds`` are (K, m) for K components and m elements; returns
    (len(probs), m).
    """
    w = np.asarray(weights, dtype=float)[:, None]
    mu = np.atleast_2d(np.asarray(means, dtype=float))
    sd = np.atleast_2d(np.asarray(sds, dtype=float))
    out = []
    for p in probs:
        lo = (mu - 10 * sd).min(axis=0) - 1e-12
        hi = (mu + 10 * sd).max(axis=0) + 1e-12
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                zs = np.where(sd > 0, (mid - mu) / np.where(sd > 0, sd, 1.0), np.where(mid >= mu, np.inf, -np.inf))
            cdf = np.sum(w * ndtr(zs), axis=0)
            below = cdf < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.max(hi - lo) < tol * max(1.0, np.max(np.abs(mid))):
                break
        out.append(0.5 * (lo + hi))
    return np.array(out)


@dataclass
class MixtureSummary:
    mean: np.ndarray
    sd: np.ndarray
    q025: np.ndarray
    median: np.ndarray
    q975: np.ndarray


def summarize_mixture(weights, means, variances) -> MixtureSummary:
    w = np.asarray(weights, dtype=float)
    mu = np.atleast_2d(means)
    var = np.atleast_2d(variances)
    mean = w @ mu
    second = w @ (var + mu**2)
    sd = np.sqrt(np.maximum(second - mean**2, 0.0))
    q = mixture_quantiles(w, mu, np.sqrt(np.maximum(var, 0.0)), [0.025, 0.5, 0.975])
    return MixtureSummary(mean, sd, q[0], q[1], q[2])


def latent_marginals(weights, conditionals: Sequence[GaussianConditional], L=None) -> MixtureSummary:
    """Mixture summaries of L z (default: every latent element)."""
    if L is None:
        means = np.array([c.mean for c in conditionals])
        variances = np.array([c.marginal_variances() for c in conditionals])
    else:
        Ld = _dense(L)
        means = np.array([Ld @ c.mean for c in conditionals])
        variances = np.array([c.var(Ld) for c in conditionals])
    return summarize_mixture(weights, means, variances)


# ----------------------------------------------------------------- CPO / LS


def loo_predictive(y, V, mu, s):
    """Leave-one-out predictive mean/variance of y_k from the full-data
    posterior of its linear predictor (mean mu, variance s).

    Returns (mean, var, ok) where ``ok`` is False when the downdated
    precision is not positive.
    """
    prec = 1.0 / s - 1.0 / V
    ok = prec > 1e-12 / V
    safe = np.where(ok, prec, 1.0)
    m = (mu / s - y / V) / safe
    return m, 1.0 / safe + V, ok


def _log_normal(x, m, v):
    return -0.5 * (LOG2PI + np.log(v) + (x - m) ** 2 / v)


def log_cpo_point(engine: ConditionalEngine, z, cond: GaussianConditional) -> np.ndarray:
    """log pi(y_k | y_-k, hyperparameters) for every observation."""
    A, y, V = engine.A, engine.y, engine.V
    mu = A @ cond.mean
    s = cond.var(A)
    m, v, ok = loo_predictive(y, V, mu, s)
    out = _log_normal(y, m, v)
    for k in np.flatnonzero(~ok):
        out[k] = _refit_log_cpo(engine, z, k)
    return out


def _refit_log_cpo(engine: ConditionalEngine, z, k: int) -> float:
    keep = np.arange(engine.y.size) != k
    if not keep.any():
        Ak = engine.A[k : k + 1]
        hv = hyper_values(engine.spec, z)
        Q = prior_precision(engine.spec, hv)
        prior = gaussian_conditional_core(Q, np.zeros((0, Ak.shape[1])), np.zeros(0), np.zeros(0), engine.C, engine.kappa)
        return float(_log_normal(engine.y[k], Ak @ prior.mean, prior.var(Ak) + engine.V[k])[0])
    hv = hyper_values(engine.spec, z)
    Q = prior_precision(engine.spec, hv)
    c = gaussian_conditional_core(Q, engine.A[keep], engine.y[keep], engine.V[keep], engine.C, engine.kappa)
    a = engine.A[k : k + 1]
    return float(_log_normal(engine.y[k], a @ c.mean, c.var(a) + engine.V[k])[0])


def refit_log_cpo(engine: ConditionalEngine, z, k: int) -> float:
    """Explicit leave-one-out refit; the reference for the downdate."""
    return _refit_log_cpo(engine, z, k)


def mix_log_cpo(weights, log_cpo: np.ndarray) -> np.ndarray:
    """Combine per-point log CPO (K x n) into log pi(y_k | y_-k)."""
    w = np.asarray(weights, dtype=float)[:, None]
    # 1/CPO = sum_h w_h / CPO_h
    a = np.log(w) - log_cpo
    mx = a.max(axis=0)
    return -(mx + np.log(np.sum(np.exp(a - mx), axis=0)))


# ----------------------------------------------------------------- results


@dataclass
class FitResult:
    spec: ModelSpec
    exploration: Exploration
    conditionals: list[GaussianConditional]
    weights: np.ndarray
    eta_obs_mean: np.ndarray  # (K, n_obs)
    eta_obs_var: np.ndarray
    log_cpo_points: np.ndarray  # (K, n_obs)
    engine: ConditionalEngine = field(repr=False)

    @property
    def points(self) -> list[HyperPoint]:
        return self.exploration.points

    @property
    def hyper_names(self) -> list[str]:
        return [h.name for h in self.spec.free_hypers()]

    # latent -------------------------------------------------------------
    def latent_summary(self) -> MixtureSummary:
        return latent_marginals(self.weights, self.conditionals)

    def combo_summary(self, L) -> MixtureSummary:
        return latent_marginals(self.weights, self.conditionals, L)

    def area_eta_summary(self) -> MixtureSummary:
        return self.combo_summary(area_predictor_matrix(self.spec))

    def area_eta_mean(self) -> np.ndarray:
        L = area_predictor_matrix(self.spec)
        return self.weights @ np.array([L @ c.mean for c in self.conditionals])

    # metrics ------------------------------------------------------------
    def dic(self) -> float:
        return dic_from_moments(self.weights, self.eta_obs_mean, self.eta_obs_var, self.engine.y, self.engine.V)

    def log_cpo(self) -> np.ndarray:
        return mix_log_cpo(self.weights, self.log_cpo_points)

    def log_score(self) -> float:
        return float(-np.mean(self.log_cpo()))

    def rmse(self, truth) -> float:
        return rmse(truth, self.area_eta_mean())

    # hyperparameters ----------------------------------------------------
    def hyper_summaries(self) -> dict[str, dict[str, float]]:
        out = {}
        Z = np.array([p.z for p in self.points]).reshape(len(self.points), -1)
        best = int(np.argmax(self.weights))
        for j, h in enumerate(self.spec.free_hypers()):
            nat = np.array([h.to_natural(z) for z in Z[:, j]])
            mean = float(self.weights @ nat)
            sd = math.sqrt(max(float(self.weights @ nat**2) - mean**2, 0.0))
            qs = [h.to_natural(q) for q in _cell_quantiles(Z[:, j], self.weights, [0.025, 0.5, 0.975])]
            out[h.name] = dict(mean=mean, sd=sd, q025=qs[0], median=qs[1], q975=qs[2], mode=float(nat[best]))
        return out

    def hyper_density(self, name: str, values) -> np.ndarray:
        """Posterior density of a hyperparameter on its natural scale.

        Grid mass is spread over cells in the internal coordinate and
        interpolated linearly between cell centres.
        """
        j = self.hyper_names.index(name)
        h = self.spec.free_hypers()[j]
        Z = np.array([p.z[j] for p in self.points])
        centres, mass, widths = _cells(Z, self.weights)
        dens_z = mass / widths
        values = np.asarray(values, dtype=float)
        zv = np.array([h.to_internal(v) for v in values])
        fz = np.interp(zv, centres, dens_z, left=0.0, right=0.0)
        jac = np.exp([h.log_jacobian(z) for z in zv])
        return fz / jac

    def u5mr_summaries(self, n_draws: int = 4000, seed: int = 0) -> MixtureSummary:
        return u5mr_summaries(self, n_draws, seed)


def _cells(z, w):
    z = np.round(np.asarray(z, dtype=float), 12)
    centres = np.unique(z)
    mass = np.array([w[z == c].sum() for c in centres])
    if centres.size == 1:
        widths = np.ones(1)
    else:
        gaps = np.diff(centres)
        left = np.r_[gaps[0], gaps]
        right = np.r_[gaps, gaps[-1]]
        widths = 0.5 * (left + right)
    return centres, mass, widths


def _cell_quantiles(z, w, probs) -> list[float]:
    centres, mass, widths = _cells(z, w)
    if centres.size == 1:
        return [float(centres[0])] * len(probs)
    gaps = np.diff(centres)
    edges = np.r_[centres[0] - gaps[0] / 2, centres[:-1] + gaps / 2, centres[-1] + gaps[-1] / 2]
    cdf = np.r_[0.0, np.cumsum(mass)]
    cdf /= cdf[-1]
    return [float(np.interp(p, cdf, edges)) for p in probs]


def dic_from_moments(weights, eta_mean, eta_var, y, V) -> float:
    """DIC = Dbar + pD under the Gaussian working-likelihood deviance."""
    w = np.asarray(weights, dtype=float)
    const = np.sum(np.log(2 * np.pi * V))
    exp_sq = w @ ((y - eta_mean) ** 2 + eta_var)  # E (y - eta)^2 per obs
    dbar = const + np.sum(exp_sq / V)
    eta_bar = w @ eta_mean
    d_at_mean = const + np.sum((y - eta_bar) ** 2 / V)
    return float(2 * dbar - d_at_mean)


def deviance(eta, y, V) -> np.ndarray:
    eta = np.atleast_2d(eta)
    return np.sum(np.log(2 * np.pi * V) + (y - eta) ** 2 / V, axis=-1)


def rmse(truth, estimate) -> float:
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise ValueError(f"length mismatch: {truth.shape} vs {estimate.shape}")
    return float(np.sqrt(np.mean((truth - estimate) ** 2)))


def make_rng(*keys: int) -> np.random.Generator:
    """Counter-based generator keyed by integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(keys))))


def _sample_gaussian(rng, mean, cov, n):
    vals, vecs = np.linalg.eigh(cov)
    root = vecs * np.sqrt(np.maximum(vals, 0.0))
    return mean + rng.standard_normal((n, mean.size)) @ root.T


def sample_area_predictor(fit: FitResult, n_draws: int, seed: int) -> np.ndarray:
    """Draws of mu + (i - c) beta + b_i from the grid mixture, in grid order."""
    rng = make_rng(seed)
    L = area_predictor_matrix(fit.spec)
    counts = np.bincount(rng.choice(len(fit.weights), size=n_draws, p=fit.weights), minlength=len(fit.weights))
    draws = []
    for c, cond in zip(counts, fit.conditionals):
        if c:
            draws.append(_sample_gaussian(rng, L @ cond.mean, cond.cov(L), c))
    return np.vstack(draws)


def u5mr_summaries(fit: FitResult, n_draws: int = 4000, seed: int = 0) -> MixtureSummary:
    """Monte Carlo summaries of p_i = expit(area linear predictor)."""
    if n_draws < 1000:
        raise ValueError("use at least 1000 draws")
    p = expit(sample_area_predictor(fit, n_draws, seed))
    q = np.quantile(p, [0.025, 0.5, 0.975], axis=0)
    return MixtureSummary(p.mean(axis=0), p.std(axis=0, ddof=1), q[0], q[1], q[2])


def fit_model(spec: ModelSpec, config: GridConfig = GridConfig()) -> FitResult:
    """Grid-integrated posterior of a smoothed direct model."""
    engine = ConditionalEngine(spec)
    expl = explore_hyperparameters(spec, config, engine)
    weights = np.array([p.weight for p in expl.points])
    conds, mus, vs, cpos = [], [], [], []
    for p in expl.points:
        c = engine.conditional(p.z)
        conds.append(c)
        mus.append(engine.A @ c.mean)
        vs.append(c.var(engine.A))
        cpos.append(log_cpo_point(engine, p.z, c))
    return FitResult(
        spec=spec,
        exploration=expl,
        conditionals=conds,
        weights=weights,
        eta_obs_mean=np.array(mus),
        eta_obs_var=np.array(vs),
        log_cpo_points=np.array(cpos),
        engine=engine,
    )


def intercept_summary(fit: FitResult) -> MixtureSummary:
    return fit.combo_summary(intercept_row(fit.spec)[None, :])
