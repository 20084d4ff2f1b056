"""Neighbourhood structures for temporal and areal random effects.

Areas are 1-based everywhere a user can see them (files, reports, the
``conflict_set`` and ``country_of`` fields).  Edges are stored internally as
sorted 0-based pairs because every consumer indexes numpy arrays with them.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    """Raised when a neighbourhood structure fails validation."""


TEMPORAL = "temporal-path"
AREAL = "areal"


@dataclass(frozen=True)
class AreaGraph:
    n: int
    edges: tuple[tuple[int, int], ...]  # 0-based, i < j, sorted
    kind: str = AREAL
    conflict_set: Optional[frozenset[int]] = None  # 1-based
    country_of: Optional[tuple[int, ...]] = None  # country label per area
    m: Optional[int] = None

    def __post_init__(self):
        if self.n < 2:
            raise GraphError(f"graph needs at least 2 areas, got {self.n}")
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise GraphError(f"edge ({i + 1}, {j + 1}) has an endpoint outside 1..{self.n}")
            if i == j:
                raise GraphError(f"self-loop at area {i + 1}")
            if i > j:
                raise GraphError("edges must be stored as (i, j) with i < j")
            if (i, j) in seen:
                raise GraphError(f"duplicate edge ({i + 1}, {j + 1})")
            seen.add((i, j))
        if self.kind == TEMPORAL:
            if set(self.edges) != {(i, i + 1) for i in range(self.n - 1)}:
                raise GraphError("temporal graph must be the path 1-2-...-N")
            if self.country_of is not None:
                raise GraphError("country labels only apply to areal graphs")
        elif self.kind == AREAL:
            if self.conflict_set is not None:
                raise GraphError("conflict sets only apply to temporal graphs")
        else:
            raise GraphError(f"unknown graph kind {self.kind!r}")
        if self.conflict_set is not None:
            bad = [c for c in self.conflict_set if not 1 <= c <= self.n]
            if bad:
                raise GraphError(f"conflict index {min(bad)} outside 1..{self.n}")
        if self.country_of is not None:
            if len(self.country_of) != self.n:
                raise GraphError("every area needs exactly one country label")
            if self.m != len(set(self.country_of)):
                raise GraphError("m must equal the number of distinct country labels")
        if _n_components(self.n, self.edges) != 1:
            raise GraphError("graph is disconnected (islands are not supported)")

    def neighbours(self) -> list[list[int]]:
        """0-based neighbour lists."""
        out: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            out[i].append(j)
            out[j].append(i)
        return [sorted(v) for v in out]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def same_country(self, i: int, j: int) -> bool:
        """A_ij for 0-based areas; requires country labels."""
        if self.country_of is None:
            raise GraphError("graph has no country labels")
        return self.country_of[i] == self.country_of[j]

    def edge_class(self, i: int, j: int) -> int:
        """1 for reference-class edges, 2 for the shock class.

        Temporal: class 2 when either endpoint is a conflict period.
        Areal with countries: class 2 for between-country edges.
        Otherwise every edge is class 1.
        """
        if self.conflict_set is not None:
            return 2 if (i + 1 in self.conflict_set or j + 1 in self.conflict_set) else 1
        if self.country_of is not None:
            return 1 if self.same_country(i, j) else 2
        return 1


def _n_components(n: int, edges: Iterable[tuple[int, int]]) -> int:
    edges = list(edges)
    if not edges:
        return n
    rows, cols = zip(*edges)
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    n_comp, _ = connected_components(adj, directed=False)
    return int(n_comp)


def temporal_graph(n: int, conflict_years: Optional[Iterable[int]] = None) -> AreaGraph:
    """Path graph over ``n`` periods, with an optional 1-based conflict set."""
    if n < 2:
        raise GraphError(f"temporal graph needs n >= 2, got {n}")
    conflict = None
    if conflict_years is not None:
        conflict = frozenset(int(c) for c in conflict_years)
    return AreaGraph(
        n=n,
        edges=tuple((i, i + 1) for i in range(n - 1)),
        kind=TEMPORAL,
        conflict_set=conflict,
    )


def areal_graph(
    adjacency: Mapping[int, Iterable[int]],
    countries: Optional[Mapping[int, int]] = None,
) -> AreaGraph:
    """Build an areal graph from 1-based neighbour lists.

    Args:
        adjacency: area id -> neighbour ids; ids must be exactly 1..N and the
            lists symmetric.
        countries: optional area id -> country id covering every area.
    """
    ids = sorted(adjacency)
    n = len(ids)
    if ids != list(range(1, n + 1)):
        raise GraphError("area ids must be the contiguous integers 1..N")
    nbrs = {i: set(int(j) for j in adjacency[i]) for i in ids}
    edges = set()
    for i in ids:
        for j in nbrs[i]:
            if j not in nbrs:
                raise GraphError(f"area {i} lists unknown neighbour {j}")
            if i not in nbrs[j]:
                raise GraphError(f"asymmetric adjacency: {i} lists {j} but {j} does not list {i}")
            if i == j:
                raise GraphError(f"self-loop at area {i}")
            edges.add((min(i, j) - 1, max(i, j) - 1))
    country_of = None
    m = None
    if countries is not None:
        missing = [i for i in ids if i not in countries]
        if missing:
            raise GraphError(f"missing country label for area {missing[0]}")
        country_of = tuple(int(countries[i]) for i in ids)
        m = len(set(country_of))
    return AreaGraph(n=n, edges=tuple(sorted(edges)), kind=AREAL, country_of=country_of, m=m)


def parse_adjacency(text: str) -> dict[int, list[int]]:
    """Parse ``<area_id>: <nbr> <nbr> ...`` lines."""
    out: dict[int, list[int]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, sep, tail = line.partition(":")
        if not sep:
            raise GraphError(f"line {lineno}: expected '<area_id>: <neighbours>'")
        try:
            area = int(head)
            nbrs = [int(tok) for tok in tail.split()]
        except ValueError as exc:
            raise GraphError(f"line {lineno}: {exc}") from None
        if area in out:
            raise GraphError(f"line {lineno}: area {area} listed twice")
        out[area] = nbrs
    return out


def format_adjacency(g: AreaGraph) -> str:
    lines = []
    for i, nb in enumerate(g.neighbours()):
        lines.append(f"{i + 1}: " + " ".join(str(j + 1) for j in nb))
    return "\n".join(lines) + "\n"


def parse_country_table(text: str) -> dict[int, int]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["area_id", "country_id"]:
        raise GraphError("country table must have header 'area_id,country_id'")
    out = {}
    for row in reader:
        area = int(row["area_id"])
        if area in out:
            raise GraphError(f"area {area} has two country labels")
        out[area] = int(row["country_id"])
    return out


def format_country_table(g: AreaGraph) -> str:
    if g.country_of is None:
        raise GraphError("graph has no country labels")
    rows = ["area_id,country_id"] + [f"{i + 1},{c}" for i, c in enumerate(g.country_of)]
    return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class TemporalConfig:
    """Calendar view of a temporal graph.

    ``n_periods`` counts the observed periods starting at ``start_year``;
    ``forecast_until`` extends the graph with unobserved periods.
    """

    n_periods: int
    start_year: int
    conflict_years: tuple[int, ...] = ()
    forecast_until: Optional[int] = None

    @property
    def n(self) -> int:
        if self.forecast_until is None:
            return self.n_periods
        return max(self.n_periods, self.forecast_until - self.start_year + 1)

    def index_of(self, year: int) -> int:
        idx = year - self.start_year + 1
        if not 1 <= idx <= self.n:
            raise GraphError(f"year {year} outside {self.start_year}..{self.start_year + self.n - 1}")
        return idx

    def year_of(self, index: int) -> int:
        return self.start_year + index - 1

    def graph(self) -> AreaGraph:
        return temporal_graph(self.n, [self.index_of(y) for y in self.conflict_years])

    @classmethod
    def from_dict(cls, d: Mapping) -> "TemporalConfig":
        try:
            return cls(
                n_periods=int(d["n_periods"]),
                start_year=int(d["start_year"]),
                conflict_years=tuple(int(y) for y in d.get("conflict_years", ())),
                forecast_until=None if d.get("forecast_until") is None else int(d["forecast_until"]),
            )
        except KeyError as exc:
            raise GraphError(f"temporal config missing field {exc}") from None


@dataclass(frozen=True)
class ConnectivityReport:
    connected: bool
    n_components: int
    reference_components: int  # components of the class-1 (R1-only) subgraph
    class_counts: tuple[int, int] = field(default=(0, 0))

    @property
    def degenerate(self) -> bool:
        return 0 in self.class_counts


def connectivity_report(g: AreaGraph) -> ConnectivityReport:
    """Connectivity of the full graph and of its reference-class subgraph.

    When the reference-class subgraph splits into two or more components the
    distance from the base model diverges as the shock-class precision ratio
    goes to zero, so the ratio's PC prior is proper on (0, 1].
    """
    return _report(g.n, g.edges, [g.edge_class(i, j) for i, j in g.edges])


def _report(n, edges, classes) -> ConnectivityReport:
    ref = [e for e, c in zip(edges, classes) if c == 1]
    n_comp = _n_components(n, edges)
    return ConnectivityReport(
        connected=n_comp == 1,
        n_components=n_comp,
        reference_components=_n_components(n, ref),
        class_counts=(len(ref), len(edges) - len(ref)),
    )


def edge_list_report(n: int, edges: Iterable[tuple[int, int]]) -> ConnectivityReport:
    """Report for a raw 0-based edge list that may be disconnected."""
    edges = [tuple(sorted(e)) for e in edges]
    return _report(n, edges, [1] * len(edges))
