"""Causal diagrams, d-separation, and the CI patterns of the audit.

A :class:`CausalDag` holds directed edges plus bidirected edges (``u <-> v``,
an unspecified association).  Queries first replace every bidirected edge by
a fresh latent parent of both endpoints and then run an active-trail
reachability search, which visits each (node, direction) state once.

The audit looks at three test-set variables: the prediction score ``R``, the
label ``Y`` and the confounder ``A``.  A :class:`CiPattern` records the five
(in)dependencies, always in this order::

    R _||_ Y,  R _||_ A,  A _||_ Y,  R _||_ Y | A,  R _||_ A | Y
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .errors import DagParseError, SpecificationError

HYPOTHESES = ("R_||_Y", "R_||_A", "A_||_Y", "R_||_Y|A", "R_||_A|Y")
_QUERIES = (
    ("R", "Y", ()),
    ("R", "A", ()),
    ("A", "Y", ()),
    ("R", "Y", ("A",)),
    ("R", "A", ("Y",)),
)


@dataclass(frozen=True)
class CausalDag:
    nodes: frozenset
    directed_edges: frozenset = frozenset()
    bidirected_edges: frozenset = frozenset()

    def __post_init__(self):
        nodes = frozenset(self.nodes)
        directed = frozenset(tuple(e) for e in self.directed_edges)
        bidirected = frozenset(frozenset(e) for e in self.bidirected_edges)
        for u, v in directed:
            if u == v:
                raise SpecificationError(f"self-loop on {u!r}")
            if u not in nodes or v not in nodes:
                raise SpecificationError(f"edge {u!r} -> {v!r} uses an unknown node")
        for e in bidirected:
            if len(e) != 2:
                raise SpecificationError(f"bidirected self-loop on {sorted(e)!r}")
            if not e <= nodes:
                raise SpecificationError(f"edge {' <-> '.join(sorted(e))} uses an unknown node")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "directed_edges", directed)
        object.__setattr__(self, "bidirected_edges", bidirected)
        if _has_cycle(nodes, directed):
            raise SpecificationError("directed edges contain a cycle")

    @classmethod
    def from_edges(cls, directed: Iterable = (), bidirected: Iterable = (), nodes: Iterable = ()):
        directed = [tuple(e) for e in directed]
        bidirected = [tuple(e) for e in bidirected]
        all_nodes = set(nodes)
        for e in directed + bidirected:
            all_nodes.update(e)
        return cls(frozenset(all_nodes), frozenset(directed), frozenset(frozenset(e) for e in bidirected))

    def parents(self, v) -> set:
        return {u for u, w in self.directed_edges if w == v}

    def children(self, v) -> set:
        return {w for u, w in self.directed_edges if u == v}

    def expanded(self) -> "CausalDag":
        """Equivalent DAG with each bidirected edge replaced by a latent common parent."""
        if not self.bidirected_edges:
            return self
        nodes = set(self.nodes)
        directed = set(self.directed_edges)
        for e in sorted(tuple(sorted(b)) for b in self.bidirected_edges):
            name = "_L_" + "_".join(e)
            while name in nodes:
                name += "_"
            nodes.add(name)
            directed.update({(name, e[0]), (name, e[1])})
        return CausalDag(frozenset(nodes), frozenset(directed))

    def to_text(self) -> str:
        lines = [f"{u} -> {v}" for u, v in sorted(self.directed_edges)]
        lines += [" <-> ".join(sorted(e)) for e in sorted(tuple(sorted(b)) for b in self.bidirected_edges)]
        touched = {n for e in self.directed_edges for n in e} | {n for e in self.bidirected_edges for n in e}
        lines += sorted(self.nodes - touched)
        return "\n".join(lines) + "\n"


def _has_cycle(nodes, directed) -> bool:
    children = {v: [] for v in nodes}
    indeg = {v: 0 for v in nodes}
    for u, v in directed:
        children[u].append(v)
        indeg[v] += 1
    queue = deque(v for v in nodes if indeg[v] == 0)
    seen = 0
    while queue:
        u = queue.popleft()
        seen += 1
        for v in children[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    return seen != len(nodes)


def is_d_separated(g: CausalDag, i, j, cond=()) -> bool:
    """True iff every path between ``i`` and ``j`` is blocked by ``cond``.

    A path is blocked when it has a non-collider in ``cond``, or a collider
    that is neither in ``cond`` nor an ancestor of a member of ``cond``.
    """
    cond = frozenset(cond)
    for v in (i, j, *cond):
        if v not in g.nodes:
            raise SpecificationError(f"unknown node {v!r}")
    if i == j:
        raise SpecificationError("i and j must differ")
    if i in cond or j in cond:
        raise SpecificationError("i and j must not be in the conditioning set")
    h = g.expanded()
    parents = {v: set() for v in h.nodes}
    children = {v: set() for v in h.nodes}
    for u, v in h.directed_edges:
        parents[v].add(u)
        children[u].add(v)

    # Nodes that are in cond or have a descendant in cond.
    opens_collider = set()
    stack = list(cond)
    while stack:
        v = stack.pop()
        if v not in opens_collider:
            opens_collider.add(v)
            stack.extend(parents[v])

    # States: (node, arrived_from_child) -- True means travelling up.
    frontier = deque([(i, True)])
    visited = set()
    while frontier:
        v, up = frontier.popleft()
        if (v, up) in visited:
            continue
        visited.add((v, up))
        if v == j:
            return False
        if up:
            if v in cond:
                continue
            frontier.extend((p, True) for p in parents[v])
            frontier.extend((c, False) for c in children[v])
        else:
            if v not in cond:
                frontier.extend((c, False) for c in children[v])
            if v in opens_collider:
                frontier.extend((p, True) for p in parents[v])
    return True


# --------------------------------------------------------------------------
# Plain-text DAG format
# --------------------------------------------------------------------------

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_EDGE_RE = re.compile(rf"^({_IDENT})\s*(<->|->)\s*({_IDENT})$")
_NODE_RE = re.compile(rf"^({_IDENT})$")


def parse_dag(text: str) -> CausalDag:
    """Parse one edge per line (``A -> B`` or ``A <-> B``); ``#`` starts a comment.

    A line holding a single identifier declares an isolated node.
    """
    directed, bidirected, nodes = [], [], set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _EDGE_RE.match(line)
        if m:
            u, arrow, v = m.groups()
            if u == v:
                raise DagParseError(lineno, raw, "self-loop")
            (directed if arrow == "->" else bidirected).append((u, v))
            continue
        m = _NODE_RE.match(line)
        if m:
            nodes.add(m.group(1))
            continue
        raise DagParseError(lineno, raw, "expected 'A -> B', 'A <-> B' or a node name")
    try:
        return CausalDag.from_edges(directed, bidirected, nodes)
    except SpecificationError as exc:
        raise DagParseError(0, text.splitlines()[0] if text else "", str(exc)) from None


_QUERY_RE = re.compile(rf"^\s*({_IDENT})\s*_\|\|_\s*({_IDENT})\s*(?:\|\s*(.*))?$")


def parse_query(query: str):
    """Parse ``"R _||_ Y | A, B"`` into ``("R", "Y", ("A", "B"))``."""
    m = _QUERY_RE.match(query)
    if not m:
        raise SpecificationError(f"cannot parse query {query!r}; expected 'I _||_ J | C1, C2'")
    i, j, rest = m.groups()
    cond = tuple(c.strip() for c in re.split(r"[,\s]+", rest or "") if c.strip())
    for c in cond:
        if not re.fullmatch(_IDENT, c):
            raise SpecificationError(f"bad node name {c!r} in query")
    return i, j, cond


# --------------------------------------------------------------------------
# CI patterns and the scenario catalogue
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CiPattern:
    """Five (in)dependence verdicts; ``True`` means independent."""

    r_y: bool
    r_a: bool
    a_y: bool
    r_y_given_a: bool
    r_a_given_y: bool

    @classmethod
    def from_sequence(cls, values) -> "CiPattern":
        values = tuple(bool(v) for v in values)
        if len(values) != 5:
            raise SpecificationError("a CI pattern has exactly five slots")
        return cls(*values)

    def as_tuple(self) -> tuple:
        return (self.r_y, self.r_a, self.a_y, self.r_y_given_a, self.r_a_given_y)

    def to_dict(self) -> dict:
        return {h: ("independent" if v else "dependent") for h, v in zip(HYPOTHESES, self.as_tuple())}

    def __str__(self) -> str:
        return ", ".join(h.replace("_||_", " _||_ " if v else " not_||_ ") for h, v in zip(HYPOTHESES, self.as_tuple()))


def implied_ci_pattern(g: CausalDag, r="R", y="Y", a="A") -> CiPattern:
    alias = {"R": r, "Y": y, "A": a}
    for name in alias.values():
        if name not in g.nodes:
            raise SpecificationError(f"graph has no node {name!r}")
    return CiPattern(
        *(is_d_separated(g, alias[i], alias[j], {alias[c] for c in cond}) for i, j, cond in _QUERIES)
    )


@dataclass(frozen=True)
class Scenario:
    name: str
    dag: CausalDag
    pattern: CiPattern
    full_dag: CausalDag = field(repr=False)


def _collapsed(a_to_r: bool, y_to_r: bool, a_y: bool) -> CausalDag:
    directed = ([("A", "R")] if a_to_r else []) + ([("Y", "R")] if y_to_r else [])
    return CausalDag.from_edges(directed, [("A", "Y")] if a_y else [], nodes={"R", "Y", "A"})


def _full(a_to_x: bool, y_to_x: bool, a_y: bool) -> CausalDag:
    """Training side, fitted model ``M`` and test side; ``X`` is the test feature set."""
    directed = [("X_tr", "M"), ("Y_tr", "M"), ("M", "R"), ("X", "R")]
    if a_to_x:
        directed += [("A_tr", "X_tr"), ("A", "X")]
    if y_to_x:
        directed += [("Y_tr", "X_tr"), ("Y", "X")]
    bidirected = [("A_tr", "Y_tr"), ("A", "Y")] if a_y else []
    return CausalDag.from_edges(directed, bidirected, nodes={"A_tr", "A"})


# name -> (A reaches R, Y reaches R, A associated with Y)
_SCENARIOS = {
    "confounded": (True, True, True),
    "confounder_only": (True, False, True),
    "feature_adjusted": (False, True, True),
    "label_decoupled": (True, True, False),
}


def scenario_catalogue() -> dict[str, Scenario]:
    """The four reference scenarios, their test-side graphs and implied patterns."""
    out = {}
    for name, (a_r, y_r, a_y) in _SCENARIOS.items():
        dag = _collapsed(a_r, y_r, a_y)
        out[name] = Scenario(name, dag, implied_ci_pattern(dag), _full(a_r, y_r, a_y))
    return out


@dataclass(frozen=True)
class Verdict:
    matches: tuple
    diffs: dict

    @property
    def label(self) -> str:
        if len(self.matches) == 1:
            return self.matches[0]
        return "unrecognized" if not self.matches else "ambiguous"

    @property
    def recognized(self) -> bool:
        return len(self.matches) == 1

    def to_dict(self) -> dict:
        return {"label": self.label, "matches": list(self.matches), "diffs": {k: list(v) for k, v in self.diffs.items()}}


def match_pattern(observed: CiPattern, catalogue: dict | None = None) -> Verdict:
    """Scenarios whose implied pattern equals ``observed``, plus per-slot differences."""
    catalogue = scenario_catalogue() if catalogue is None else catalogue
    obs = observed.as_tuple()
    matches, diffs = [], {}
    for name, sc in catalogue.items():
        diff = tuple(h for h, o, e in zip(HYPOTHESES, obs, sc.pattern.as_tuple()) if o != e)
        diffs[name] = diff
        if not diff:
            matches.append(name)
    return Verdict(tuple(matches), diffs)
