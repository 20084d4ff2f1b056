"""Smoothed direct model: latent layout, priors, design and constraints.

Latent vector layout, in order::

    mu | beta (slope models only) | nu_1..nu_S | b_1..b_N | x*_1..x*_N

``b`` is the total area effect and ``x*`` the scaled structured component;
their joint precision is the sparse BYM2-like block matrix.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .priors import (
    PcPhiPrior,
    PcPrecisionPrior,
    PcThetaPrior,
    pc_phi_calibrate,
    pc_precision_calibrate,
    pc_theta_calibrate,
    phi_gamma_tilde,
    theta_eigenvalues,
)
from .structmat import StructureParts, parts_for, scale_parts

NONADAPTIVE = "nonadaptive"
ADAPTIVE = "adaptive"
GENERAL = "general-multicountry"

MODEL_KINDS = {
    "smoothed-direct": NONADAPTIVE,
    "proposed": ADAPTIVE,
    "proposed-general": GENERAL,
}


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    area: int  # 1-based
    survey: int  # 1-based
    y: float
    var: float


def read_direct_estimates(text: str) -> list[Observation]:
    """Parse ``area_id,survey_id,logit_est,variance`` CSV text."""
    reader = csv.DictReader(io.StringIO(text))
    want = ["area_id", "survey_id", "logit_est", "variance"]
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != want:
        raise ModelError(f"data file header must be {','.join(want)}")
    out = []
    for k, row in enumerate(reader, 2):
        try:
            out.append(Observation(int(row["area_id"]), int(row["survey_id"]), float(row["logit_est"]), float(row["variance"])))
        except (TypeError, ValueError) as exc:
            raise ModelError(f"line {k}: {exc}") from None
    return out


def format_direct_estimates(obs: Sequence[Observation]) -> str:
    lines = ["area_id,survey_id,logit_est,variance"]
    lines += [f"{o.area},{o.survey},{o.y:.17g},{o.var:.17g}" for o in obs]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class HyperPriors:
    tau_b: PcPrecisionPrior
    phi: PcPhiPrior
    theta: Optional[PcThetaPrior] = None
    psi: Optional[PcPrecisionPrior] = None
    tau_nu: Optional[PcPrecisionPrior] = None


@dataclass(frozen=True)
class Hyper:
    """Transform between a named hyperparameter and its internal coordinate."""

    name: str
    transform: str  # "log" or "logit"

    def to_natural(self, z: float) -> float:
        if self.transform == "log":
            return math.exp(z)
        return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))

    def to_internal(self, v: float) -> float:
        if self.transform == "log":
            return math.log(v)
        return math.log(v) - math.log1p(-v)

    def log_jacobian(self, z: float) -> float:
        """log |d natural / d z|."""
        if self.transform == "log":
            return z
        # log expit(z) + log expit(-z)
        return -_softplus(-z) - _softplus(z)


def _softplus(z: float) -> float:
    return max(z, 0.0) + math.log1p(math.exp(-abs(z)))


@dataclass(frozen=True)
class ModelSpec:
    """Complete smoothed direct model description.

    ``fixed_hyper`` pins hyperparameters (e.g. ``{"theta": 1.0}``) which are
    then dropped from the integration and from the prior.
    """

    parts: StructureParts
    structured_kind: str
    observations: tuple[Observation, ...]
    priors: HyperPriors
    n_surveys: int = 1
    survey_mode: str = "none"  # none | random | fixed
    include_slope: bool = False
    center_slope: bool = True
    fixed_effect_precision: float = 0.001
    fixed_hyper: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.parts.scaled:
            raise ModelError("structure parts must be scaled")
        L = self.parts.n_parts
        if self.structured_kind == NONADAPTIVE and L != 1:
            raise ModelError("non-adaptive model takes a single structure part")
        if self.structured_kind == ADAPTIVE and L != 2:
            raise ModelError("adaptive model needs exactly 2 structure parts")
        if self.structured_kind == GENERAL and L < 3:
            raise ModelError("general multi-country model needs M + 1 >= 3 parts")
        if self.structured_kind not in (NONADAPTIVE, ADAPTIVE, GENERAL):
            raise ModelError(f"unknown structured kind {self.structured_kind!r}")
        if self.survey_mode not in ("none", "random", "fixed"):
            raise ModelError(f"unknown survey mode {self.survey_mode!r}")
        if not self.observations:
            raise ModelError("no observations")
        for o in self.observations:
            if not 1 <= o.area <= self.n:
                raise ModelError(f"observation references area {o.area} outside 1..{self.n}")
            if not 1 <= o.survey <= self.n_surveys:
                raise ModelError(f"observation references survey {o.survey} outside 1..{self.n_surveys}")
            if not o.var > 0:
                raise ModelError("direct-estimate variances must be positive")
            if not math.isfinite(o.y):
                raise ModelError("direct estimates must be finite")
        if self.structured_kind != NONADAPTIVE and self.priors.theta is None and "theta" not in self.fixed_hyper:
            raise ModelError("adaptive model needs a theta prior or a fixed theta")
        if self.survey_mode == "random" and self.priors.tau_nu is None:
            raise ModelError("random survey effects need a precision prior")
        unknown = set(self.fixed_hyper) - {h.name for h in self.all_hypers()}
        if unknown:
            raise ModelError(f"cannot fix unknown hyperparameter(s) {sorted(unknown)}")

    @property
    def n(self) -> int:
        return self.parts.n

    @property
    def graph(self):
        return self.parts.graph

    @property
    def n_countries(self) -> int:
        return self.parts.n_parts - 1 if self.structured_kind == GENERAL else 0

    @property
    def slope_center(self) -> float:
        return (self.n + 1) / 2 if self.center_slope else 0.0

    @property
    def forecast_areas(self) -> tuple[int, ...]:
        seen = {o.area for o in self.observations}
        return tuple(i for i in range(1, self.n + 1) if i not in seen)

    def all_hypers(self) -> list[Hyper]:
        out = [Hyper("tau_b", "log"), Hyper("phi", "logit")]
        if self.structured_kind != NONADAPTIVE:
            out.append(Hyper("theta", "logit"))
        for m in range(2, self.n_countries + 1):
            out.append(Hyper(f"psi_{m}", "log"))
        if self.survey_mode == "random":
            out.append(Hyper("tau_nu", "log"))
        return out

    def free_hypers(self) -> list[Hyper]:
        return [h for h in self.all_hypers() if h.name not in self.fixed_hyper]

    def layout(self) -> "LatentLayout":
        return LatentLayout.for_spec(self)

    def with_fixed(self, **values: float) -> "ModelSpec":
        from dataclasses import replace

        return replace(self, fixed_hyper={**self.fixed_hyper, **values})


@dataclass(frozen=True)
class LatentLayout:
    mu: int
    beta: Optional[int]
    nu: slice
    b: slice
    x: slice
    dim: int

    @classmethod
    def for_spec(cls, spec: ModelSpec) -> "LatentLayout":
        k = 1
        beta = None
        if spec.include_slope:
            beta = k
            k += 1
        S = spec.n_surveys if spec.survey_mode != "none" else 0
        nu = slice(k, k + S)
        k += S
        b = slice(k, k + spec.n)
        x = slice(k + spec.n, k + 2 * spec.n)
        return cls(mu=0, beta=beta, nu=nu, b=b, x=x, dim=k + 2 * spec.n)

    def names(self) -> list[str]:
        out = ["mu"]
        if self.beta is not None:
            out.append("beta")
        out += [f"nu[{s + 1}]" for s in range(self.nu.stop - self.nu.start)]
        n = self.b.stop - self.b.start
        out += [f"b[{i + 1}]" for i in range(n)]
        out += [f"x[{i + 1}]" for i in range(n)]
        return out


# ----------------------------------------------------------------- assembly


def structured_coefs(kind: str, theta: float = 1.0, psis: Sequence[float] = ()) -> list[float]:
    if kind == NONADAPTIVE:
        return [1.0]
    if kind == ADAPTIVE:
        return [1.0, theta]
    return [1.0, *psis, theta]


def bym2_joint_precision(
    parts: StructureParts,
    tau_b: float,
    phi: float,
    theta: float = 1.0,
    psis: Optional[Sequence[float]] = None,
) -> sp.csr_matrix:
    """Joint precision of (b, x*) for the BYM2-like reparameterisation."""
    if not tau_b > 0:
        raise ModelError("tau_b must be positive")
    if not 0 < phi < 1:
        raise ModelError("phi must lie strictly inside (0, 1)")
    if not 0 < theta <= 1:
        raise ModelError("theta must lie in (0, 1]")
    if parts.n_parts == 1:
        coefs = [1.0]
    elif psis is None:
        coefs = [1.0] + [1.0] * (parts.n_parts - 2) + [theta]
    else:
        if len(psis) != parts.n_parts - 2:
            raise ModelError(f"expected {parts.n_parts - 2} psi values")
        if any(not p > 0 for p in psis):
            raise ModelError("psi values must be positive")
        coefs = [1.0, *psis, theta]
    R = parts.combine(coefs)
    n = parts.n
    eye = sp.identity(n, format="csr")
    a = tau_b / (1.0 - phi)
    c = -math.sqrt(phi * tau_b) / (1.0 - phi)
    lower = R + (phi / (1.0 - phi)) * eye
    return sp.bmat([[a * eye, c * eye], [c * eye, lower]], format="csr")


def hyper_values(spec: ModelSpec, z: Sequence[float]) -> dict[str, float]:
    """Natural-scale hyperparameters (free from z, fixed from the spec)."""
    free = spec.free_hypers()
    if len(z) != len(free):
        raise ModelError(f"expected {len(free)} internal coordinates, got {len(z)}")
    vals = {h.name: h.to_natural(float(zi)) for h, zi in zip(free, z)}
    vals.update(spec.fixed_hyper)
    return vals


def prior_precision(spec: ModelSpec, hv: Mapping[str, float]) -> sp.csr_matrix:
    """Block-diagonal prior precision of the full latent vector (intrinsic in x*)."""
    lay = spec.layout()
    fe = spec.fixed_effect_precision
    blocks = [sp.csr_matrix([[fe]])]
    if lay.beta is not None:
        blocks.append(sp.csr_matrix([[fe]]))
    S = lay.nu.stop - lay.nu.start
    if S:
        tau_nu = hv["tau_nu"] if spec.survey_mode == "random" else fe
        blocks.append(tau_nu * sp.identity(S, format="csr"))
    psis = [hv[f"psi_{m}"] for m in range(2, spec.n_countries + 1)] if spec.structured_kind == GENERAL else None
    theta = hv.get("theta", 1.0)
    blocks.append(bym2_joint_precision(spec.parts, hv["tau_b"], hv["phi"], theta, psis))
    return sp.block_diag(blocks, format="csr")


class DensePrecision:
    """Dense assembler for prior_precision; the parts are densified once.

    Used by the inference loop, where rebuilding sparse blocks per
    hyperparameter point dominated the run time.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.lay = spec.layout()
        self.parts = [R.toarray() for R in spec.parts.parts]
        self.sigma2 = spec.parts.sigma2 if spec.parts.sigma2 is not None else 1.0

    def __call__(self, hv: Mapping[str, float]) -> np.ndarray:
        spec, lay = self.spec, self.lay
        tau_b, phi = hv["tau_b"], hv["phi"]
        if not (tau_b > 0 and 0 < phi < 1):
            raise ModelError("tau_b or phi outside its support")
        if spec.structured_kind == GENERAL:
            coefs = [1.0, *(hv[f"psi_{m}"] for m in range(2, spec.n_countries + 1)), hv.get("theta", 1.0)]
        elif spec.structured_kind == ADAPTIVE:
            coefs = [1.0, hv.get("theta", 1.0)]
        else:
            coefs = [1.0]
        R = self.parts[0].copy()
        for c, P in zip(coefs[1:], self.parts[1:]):
            R += c * P
        R *= self.sigma2
        Q = np.zeros((lay.dim, lay.dim))
        fe = spec.fixed_effect_precision
        Q[lay.mu, lay.mu] = fe
        if lay.beta is not None:
            Q[lay.beta, lay.beta] = fe
        if lay.nu.stop > lay.nu.start:
            tau_nu = hv["tau_nu"] if spec.survey_mode == "random" else fe
            idx = np.arange(lay.nu.start, lay.nu.stop)
            Q[idx, idx] = tau_nu
        ib = np.arange(lay.b.start, lay.b.stop)
        ix = np.arange(lay.x.start, lay.x.stop)
        Q[lay.x, lay.x] = R
        Q[ib, ib] = tau_b / (1.0 - phi)
        Q[ib, ix] = Q[ix, ib] = -math.sqrt(phi * tau_b) / (1.0 - phi)
        Q[ix, ix] += phi / (1.0 - phi)
        return Q


def design_matrix(spec: ModelSpec) -> sp.csr_matrix:
    """Rows map the latent vector to eta_is = mu + (i - c) beta + nu_s + b_i."""
    lay = spec.layout()
    rows, cols, vals = [], [], []
    for k, o in enumerate(spec.observations):
        rows.append(k), cols.append(lay.mu), vals.append(1.0)
        if lay.beta is not None:
            rows.append(k), cols.append(lay.beta), vals.append(o.area - spec.slope_center)
        if lay.nu.stop > lay.nu.start:
            rows.append(k), cols.append(lay.nu.start + o.survey - 1), vals.append(1.0)
        rows.append(k), cols.append(lay.b.start + o.area - 1), vals.append(1.0)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(spec.observations), lay.dim))


def area_predictor_matrix(spec: ModelSpec) -> sp.csr_matrix:
    """Rows give the area-level linear predictor mu + (i - c) beta + b_i (no survey effect)."""
    lay = spec.layout()
    n = spec.n
    rows, cols, vals = [], [], []
    for i in range(n):
        rows.append(i), cols.append(lay.mu), vals.append(1.0)
        if lay.beta is not None:
            rows.append(i), cols.append(lay.beta), vals.append(i + 1 - spec.slope_center)
        rows.append(i), cols.append(lay.b.start + i), vals.append(1.0)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, lay.dim))


def intercept_row(spec: ModelSpec) -> np.ndarray:
    """Linear combination giving the uncentred intercept mu - c beta."""
    lay = spec.layout()
    row = np.zeros(lay.dim)
    row[lay.mu] = 1.0
    if lay.beta is not None:
        row[lay.beta] = -spec.slope_center
    return row


def constraint_rows(spec: ModelSpec) -> np.ndarray:
    """Sum-to-zero on x*, plus sum-to-zero on nu for fixed survey effects."""
    lay = spec.layout()
    rows = []
    r = np.zeros(lay.dim)
    r[lay.x] = 1.0
    rows.append(r)
    if spec.survey_mode == "fixed" and lay.nu.stop > lay.nu.start:
        r = np.zeros(lay.dim)
        r[lay.nu] = 1.0
        rows.append(r)
    return np.vstack(rows)


# ---------------------------------------------------------------- builders


@dataclass(frozen=True)
class PriorStatements:
    """Tail-probability statements calibrating each PC prior."""

    tau_b: tuple[float, float] = (1.0, 0.01)  # P(1/sqrt(tau_b) > U) = alpha
    phi: tuple[float, float] = (0.5, 2 / 3)  # P(phi < U) = alpha
    theta: tuple[float, float] = (0.75, 0.75)  # P(theta < U) = alpha
    psi: tuple[float, float] = (1.0, 0.01)
    tau_nu: tuple[float, float] = (1.0, 0.01)

    @classmethod
    def from_dict(cls, d: Mapping) -> "PriorStatements":
        kw = {}
        for name in ("tau_b", "phi", "theta", "psi", "tau_nu"):
            if name in d:
                item = d[name]
                kw[name] = (float(item["U"]), float(item["alpha"])) if isinstance(item, Mapping) else tuple(map(float, item))
        return cls(**kw)


def build_priors(parts: StructureParts, kind: str, statements: PriorStatements = PriorStatements(), survey_mode: str = "none") -> HyperPriors:
    theta = None
    if kind != NONADAPTIVE:
        theta = pc_theta_calibrate(*statements.theta, theta_eigenvalues(parts))
    phi = pc_phi_calibrate(*statements.phi, phi_gamma_tilde(parts.combine([1.0] * parts.n_parts)))
    return HyperPriors(
        tau_b=pc_precision_calibrate(*statements.tau_b),
        phi=phi,
        theta=theta,
        psi=pc_precision_calibrate(*statements.psi) if kind == GENERAL else None,
        tau_nu=pc_precision_calibrate(*statements.tau_nu) if survey_mode == "random" else None,
    )


def build_model(
    graph,
    model: str,
    observations: Sequence[Observation],
    *,
    statements: PriorStatements = PriorStatements(),
    include_slope: bool = False,
    survey_mode: Optional[str] = None,
    n_surveys: Optional[int] = None,
    fixed_hyper: Optional[Mapping[str, float]] = None,
    center_slope: bool = True,
    parts: Optional[StructureParts] = None,
) -> ModelSpec:
    """Assemble a ModelSpec by model name (smoothed-direct, proposed, proposed-general)."""
    if model not in MODEL_KINDS:
        raise ModelError(f"unknown model {model!r}; choose from {sorted(MODEL_KINDS)}")
    kind = MODEL_KINDS[model]
    if parts is None:
        struct = {NONADAPTIVE: "plain", ADAPTIVE: "adaptive", GENERAL: "general-multicountry"}[kind]
        parts = scale_parts(parts_for(graph, struct))
    obs = tuple(observations)
    S = n_surveys if n_surveys is not None else max((o.survey for o in obs), default=1)
    if survey_mode is None:
        survey_mode = "random" if S > 1 else "none"
    return ModelSpec(
        parts=parts,
        structured_kind=kind,
        observations=obs,
        priors=build_priors(parts, kind, statements, survey_mode),
        n_surveys=S,
        survey_mode=survey_mode,
        include_slope=include_slope,
        center_slope=center_slope,
        fixed_hyper=dict(fixed_hyper or {}),
    )
