"""Structure and precision matrices for RW1/ICAR and their adaptive variants.

Every matrix here is a weighted graph Laplacian (or, for the second-order
walk, a sum of rank-one second-difference terms), returned as a CSR matrix.
Parts are kept unscaled and integer-valued; scaling multiplies by ``sigma2``
at assembly time so that the theta = 1 reduction is exact in floating point.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import AreaGraph, GraphError, TEMPORAL

log = logging.getLogger(__name__)

PINV_RTOL = 1e-8


class StructureError(ValueError):
    pass


class DegenerateStructureWarning(UserWarning):
    """An edge class is empty, so one part is the zero matrix."""


def weighted_laplacian(n: int, edges: Sequence[tuple[int, int]], weights: Sequence[float]) -> sp.csr_matrix:
    """Sum of w_e (e_i - e_j)(e_i - e_j)^T over 0-based edges."""
    if len(edges) == 0:
        return sp.csr_matrix((n, n))
    e = np.asarray(edges, dtype=int).reshape(-1, 2)
    w = np.asarray(weights, dtype=float)
    i, j = e[:, 0], e[:, 1]
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    vals = np.concatenate([w, w, -w, -w])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def rw1_structure(n: int) -> sp.csr_matrix:
    if n < 2:
        raise StructureError(f"RW1 needs n >= 2, got {n}")
    return weighted_laplacian(n, [(i, i + 1) for i in range(n - 1)], np.ones(n - 1))


def icar_structure(g: AreaGraph) -> sp.csr_matrix:
    return weighted_laplacian(g.n, g.edges, np.ones(len(g.edges)))


def general_arw1_precision(taus: Sequence[float]) -> sp.csr_matrix:
    """Adaptive RW1 precision; ``taus[i]`` governs the step from i to i+1."""
    taus = np.asarray(taus, dtype=float)
    if taus.ndim != 1 or taus.size < 1:
        raise StructureError("need at least one transition precision")
    if np.any(~(taus > 0)):
        raise StructureError("transition precisions must be positive")
    n = taus.size + 1
    return weighted_laplacian(n, [(i, i + 1) for i in range(n - 1)], taus)


def general_aicar_precision(g: AreaGraph, tau_edges: Mapping[tuple[int, int], float]) -> sp.csr_matrix:
    """Adaptive ICAR precision from per-edge precisions.

    ``tau_edges`` is keyed by 1-based unordered pairs (either orientation).
    """
    lookup = {}
    for (a, b), t in tau_edges.items():
        key = (min(a, b) - 1, max(a, b) - 1)
        if key in lookup:
            raise StructureError(f"edge {{{a}, {b}}} given twice")
        lookup[key] = float(t)
    have = set(lookup)
    want = set(g.edges)
    if have - want:
        i, j = sorted(have - want)[0]
        raise StructureError(f"precision given for non-edge {{{i + 1}, {j + 1}}}")
    if want - have:
        i, j = sorted(want - have)[0]
        raise StructureError(f"missing precision for edge {{{i + 1}, {j + 1}}}")
    w = [lookup[e] for e in g.edges]
    if any(not t > 0 for t in w):
        raise StructureError("edge precisions must be positive")
    return weighted_laplacian(g.n, g.edges, w)


def arw2_precision(taus: Sequence[float]) -> sp.csr_matrix:
    """Adaptive second-order random walk: sum of tau_i d_i d_i^T."""
    taus = np.asarray(taus, dtype=float)
    if taus.ndim != 1 or taus.size < 1:
        raise StructureError("ARW2 needs N >= 3")
    if np.any(~(taus > 0)):
        raise StructureError("second-difference precisions must be positive")
    n = taus.size + 2
    k = np.arange(n - 2)
    D = sp.coo_matrix(
        (np.tile([1.0, -2.0, 1.0], n - 2), (np.repeat(k, 3), (k[:, None] + np.arange(3)).ravel())),
        shape=(n - 2, n),
    ).tocsr()
    return (D.T @ sp.diags(taus) @ D).tocsr()


@dataclass(frozen=True)
class StructureParts:
    """Split structure matrices R_1..R_L whose sum is the RW1/ICAR structure.

    ``parts`` are unscaled; ``sigma2`` is None until :func:`scale_parts`.
    ``degenerate`` lists 1-based part indices that are the zero matrix.
    """

    graph: AreaGraph
    parts: tuple[sp.csr_matrix, ...]
    edge_counts: tuple[int, ...]
    sigma2: Optional[float] = None
    degenerate: tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return self.parts[0].shape[0]

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    @property
    def scaled(self) -> bool:
        return self.sigma2 is not None

    @property
    def scaled_parts(self) -> tuple[sp.csr_matrix, ...]:
        if self.sigma2 is None:
            raise StructureError("parts are not scaled yet")
        return tuple((R * self.sigma2).tocsr() for R in self.parts)

    def total(self) -> sp.csr_matrix:
        return _sum(self.parts)

    def combine(self, coefs: Sequence[float]) -> sp.csr_matrix:
        """sigma2 * sum_l coefs[l] R_l (sigma2 = 1 when unscaled).

        The multiplication happens once, after summing, so coefs of all ones give
        exactly the scaled total structure matrix.
        """
        if len(coefs) != self.n_parts:
            raise StructureError(f"expected {self.n_parts} coefficients, got {len(coefs)}")
        out = _sum([c * R if c != 1.0 else R for c, R in zip(coefs, self.parts)])
        if self.sigma2 is not None:
            out = out * self.sigma2
        return out.tocsr()


def _sum(mats) -> sp.csr_matrix:
    out = mats[0].copy()
    for R in mats[1:]:
        out = out + R
    return out.tocsr()


def single_part(g: AreaGraph) -> StructureParts:
    """Non-adaptive RW1/ICAR as a one-part structure."""
    R = icar_structure(g)
    return StructureParts(graph=g, parts=(R,), edge_counts=(len(g.edges),))


def _class_parts(g: AreaGraph, classes: Sequence[int], n_classes: int) -> StructureParts:
    parts, counts = [], []
    for c in range(1, n_classes + 1):
        edges = [e for e, k in zip(g.edges, classes) if k == c]
        parts.append(weighted_laplacian(g.n, edges, np.ones(len(edges))))
        counts.append(len(edges))
    degenerate = tuple(c + 1 for c, k in enumerate(counts) if k == 0)
    if degenerate:
        warnings.warn(
            f"edge class(es) {list(degenerate)} are empty; the adaptive structure reduces to the plain one",
            DegenerateStructureWarning,
            stacklevel=3,
        )
    return StructureParts(graph=g, parts=tuple(parts), edge_counts=tuple(counts), degenerate=degenerate)


def conflict_arw1_parts(g: AreaGraph) -> StructureParts:
    if g.kind != TEMPORAL or g.conflict_set is None:
        raise StructureError("conflict ARW1 needs a temporal graph with a conflict set")
    return _class_parts(g, [g.edge_class(i, j) for i, j in g.edges], 2)


def multicountry_aicar_parts(g: AreaGraph) -> StructureParts:
    if g.country_of is None:
        raise StructureError("multi-country AICAR needs country labels")
    return _class_parts(g, [g.edge_class(i, j) for i, j in g.edges], 2)


def general_multicountry_parts(g: AreaGraph) -> StructureParts:
    """M within-country parts (ordered by sorted country label) plus one between part."""
    if g.country_of is None:
        raise StructureError("general multi-country AICAR needs country labels")
    labels = sorted(set(g.country_of))
    if len(labels) < 2:
        raise StructureError("general multi-country AICAR needs at least 2 countries")
    pos = {c: k + 1 for k, c in enumerate(labels)}
    between = len(labels) + 1
    classes = [pos[g.country_of[i]] if g.same_country(i, j) else between for i, j in g.edges]
    return _class_parts(g, classes, between)


def parts_for(g: AreaGraph, kind: str) -> StructureParts:
    """Unscaled parts by model name: plain, conflict, multicountry, general-multicountry."""
    if kind in ("plain", "rw1", "icar"):
        return single_part(g)
    if kind == "conflict":
        return conflict_arw1_parts(g)
    if kind == "multicountry":
        return multicountry_aicar_parts(g)
    if kind == "general-multicountry":
        return general_multicountry_parts(g)
    if kind == "adaptive":
        return conflict_arw1_parts(g) if g.kind == TEMPORAL else multicountry_aicar_parts(g)
    raise StructureError(f"unknown structure kind {kind!r}")


def generalized_inverse(M, rtol: float = PINV_RTOL) -> tuple[np.ndarray, int]:
    """Eigen-decomposition pseudo-inverse of a symmetric PSD matrix.

    Returns the inverse and the count of eigenvalues treated as zero.
    """
    A = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    vals, vecs = np.linalg.eigh(A)
    cutoff = rtol * max(vals.max(), 0.0)
    keep = vals > cutoff
    inv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
    return inv, int((~keep).sum())


def scaled_variance(M) -> float:
    """Geometric mean of the generalized-inverse diagonal of an intrinsic structure."""
    inv, null = generalized_inverse(M)
    if null != 1:
        raise StructureError(f"structure matrix has {null} null directions; expected exactly 1 (connected graph)")
    return float(math.exp(np.mean(np.log(np.diag(inv)))))


def scale_parts(parts: StructureParts) -> StructureParts:
    """Attach sigma2 so the scaled total has unit geometric-mean marginal variance."""
    return replace(parts, sigma2=scaled_variance(parts.total()))


def rank(M, rtol: float = PINV_RTOL) -> int:
    _, null = generalized_inverse(M, rtol)
    return M.shape[0] - null


def is_symmetric(M, atol: float = 0.0) -> bool:
    diff = (M - M.T)
    return abs(diff).max() <= atol if diff.nnz else True


def quadratic_form_from_edges(x, edges, weights) -> float:
    """sum_e w_e (x_i - x_j)^2; independent check of x^T Q x."""
    x = np.asarray(x, dtype=float)
    e = np.asarray(edges, dtype=int).reshape(-1, 2)
    w = np.asarray(weights, dtype=float)
    return float(np.sum(w * (x[e[:, 0]] - x[e[:, 1]]) ** 2))


def upper_triangle_coo(M) -> list[tuple[int, int, float]]:
    """1-based (i, j, value) for i <= j, row-major, explicit nonzeros only."""
    U = sp.triu(sp.csr_matrix(M)).tocoo()
    triples = sorted(zip(U.row.tolist(), U.col.tolist(), U.data.tolist()))
    return [(i + 1, j + 1, v) for i, j, v in triples if v != 0.0]


__all__ = [
    "StructureError",
    "DegenerateStructureWarning",
    "StructureParts",
    "rw1_structure",
    "icar_structure",
    "general_arw1_precision",
    "general_aicar_precision",
    "arw2_precision",
    "conflict_arw1_parts",
    "multicountry_aicar_parts",
    "general_multicountry_parts",
    "single_part",
    "parts_for",
    "scale_parts",
    "generalized_inverse",
    "scaled_variance",
    "weighted_laplacian",
    "quadratic_form_from_edges",
    "upper_triangle_coo",
    "GraphError",
]
