import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confaudit import dsep as D
from confaudit.errors import DagParseError, SpecificationError


def moral_separated(nodes, edges, i, j, cond):
    """Separation of i and j by cond in the moral graph of their ancestral set."""
    parents = {v: {u for u, w in edges if w == v} for v in nodes}
    anc, stack = set(), [i, j, *cond]
    while stack:
        v = stack.pop()
        if v not in anc:
            anc.add(v)
            stack.extend(parents[v])
    adj = {v: set() for v in anc}
    for v in anc:
        ps = parents[v] & anc
        for p in ps:
            adj[v].add(p)
            adj[p].add(v)
        for p, q in itertools.combinations(ps, 2):
            adj[p].add(q)
            adj[q].add(p)
    seen, stack = {i}, [i]
    while stack:
        v = stack.pop()
        for w in adj[v] - set(cond):
            if w == j:
                return False
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return True


def upper_triangular_dags(k, max_edges):
    slots = list(itertools.combinations(range(k), 2))
    for m in range(max_edges + 1):
        for chosen in itertools.combinations(slots, m):
            yield [(f"v{u}", f"v{w}") for u, w in chosen]


# Regression fixtures: expected patterns, in HYPOTHESES order.
EXPECTED = {
    "confounded": (False, False, False, False, False),
    "confounder_only": (False, False, False, True, False),
    "feature_adjusted": (False, False, False, False, True),
    "label_decoupled": (False, False, True, False, False),
}


def test_hypothesis_order():
    assert D.HYPOTHESES == ("R_||_Y", "R_||_A", "A_||_Y", "R_||_Y|A", "R_||_A|Y")


def test_catalogue_patterns_equal_fixtures():
    cat = D.scenario_catalogue()
    assert len(cat) == 4
    for name, expected in EXPECTED.items():
        assert cat[name].pattern.as_tuple() == expected
        assert D.implied_ci_pattern(cat[name].dag).as_tuple() == expected


def test_full_graphs_collapse_to_same_pattern():
    for sc in D.scenario_catalogue().values():
        assert D.implied_ci_pattern(sc.full_dag) == sc.pattern


def test_panel_queries():
    cat = D.scenario_catalogue()
    assert D.is_d_separated(cat["confounder_only"].full_dag, "R", "Y", {"A"})
    assert not D.is_d_separated(cat["confounded"].full_dag, "R", "Y", {"A"})


def test_chain():
    g = D.CausalDag.from_edges([("i", "m"), ("m", "j")])
    assert D.is_d_separated(g, "i", "j", {"m"})
    assert not D.is_d_separated(g, "i", "j", set())


def test_collider_and_descendant():
    g = D.CausalDag.from_edges([("i", "c"), ("j", "c"), ("c", "d")])
    assert D.is_d_separated(g, "i", "j", set())
    assert not D.is_d_separated(g, "i", "j", {"c"})
    assert not D.is_d_separated(g, "i", "j", {"d"})


@pytest.mark.parametrize("k", [2, 3, 4, 5])
def test_brute_force_against_moral_graph(k):
    nodes = [f"v{u}" for u in range(k)]
    count = 0
    for edges in upper_triangular_dags(k, 6):
        g = D.CausalDag.from_edges(edges, nodes=nodes)
        for i, j in itertools.combinations(nodes, 2):
            rest = [v for v in nodes if v not in (i, j)]
            for r in range(len(rest) + 1):
                for cond in itertools.combinations(rest, r):
                    ours = D.is_d_separated(g, i, j, set(cond))
                    assert ours == moral_separated(nodes, edges, i, j, cond), (edges, i, j, cond)
                    count += 1
    assert count > 0


def test_agrees_with_networkx_on_random_graphs():
    nx = pytest.importorskip("networkx")
    check = getattr(nx, "is_d_separator", None) or nx.d_separated
    import random

    rnd = random.Random(0)
    for _ in range(200):
        k = rnd.randint(3, 7)
        edges = [(f"v{u}", f"v{w}") for u in range(k) for w in range(u + 1, k) if rnd.random() < 0.35]
        g = D.CausalDag.from_edges(edges, nodes=[f"v{u}" for u in range(k)])
        G = nx.DiGraph(edges)
        G.add_nodes_from(g.nodes)
        i, j = rnd.sample(sorted(g.nodes), 2)
        others = sorted(g.nodes - {i, j})
        cond = set(rnd.sample(others, rnd.randint(0, len(others))))
        assert D.is_d_separated(g, i, j, cond) == check(G, {i}, {j}, cond)


graphs = st.integers(0, 2**32).map(lambda s: __import__("random").Random(s))


@settings(max_examples=100)
@given(graphs)
def test_symmetry_and_latent_expansion(rnd):
    k = rnd.randint(3, 6)
    names = [f"v{u}" for u in range(k)]
    directed = [(names[u], names[w]) for u in range(k) for w in range(u + 1, k) if rnd.random() < 0.3]
    bidirected = [(names[u], names[w]) for u in range(k) for w in range(u + 1, k) if rnd.random() < 0.15]
    g = D.CausalDag.from_edges(directed, bidirected, nodes=names)
    explicit = list(directed)
    for t, (u, w) in enumerate(bidirected):
        explicit += [(f"L{t}", u), (f"L{t}", w)]
    h = D.CausalDag.from_edges(explicit, nodes=names)
    i, j = rnd.sample(names, 2)
    cond = set(rnd.sample([v for v in names if v not in (i, j)], rnd.randint(0, k - 2)))
    ans = D.is_d_separated(g, i, j, cond)
    assert ans == D.is_d_separated(g, j, i, cond)
    assert ans == D.is_d_separated(h, i, j, cond)


def test_validation():
    with pytest.raises(SpecificationError):
        D.CausalDag.from_edges([("a", "b"), ("b", "a")])
    with pytest.raises(SpecificationError):
        D.CausalDag.from_edges([("a", "a")])
    with pytest.raises(SpecificationError):
        D.CausalDag(frozenset({"a"}), frozenset({("a", "b")}))
    g = D.CausalDag.from_edges([("a", "b")])
    with pytest.raises(SpecificationError, match="'q'"):
        D.is_d_separated(g, "a", "q")
    with pytest.raises(SpecificationError):
        D.is_d_separated(g, "a", "a")
    with pytest.raises(SpecificationError):
        D.is_d_separated(g, "a", "b", {"a"})
    with pytest.raises(SpecificationError):
        D.implied_ci_pattern(g)


def test_match_pattern():
    all_dep = D.CiPattern(False, False, False, False, False)
    assert D.match_pattern(all_dep).matches == ("confounded",)
    assert D.match_pattern(D.CiPattern(False, False, True, False, False)).label == "label_decoupled"
    v = D.match_pattern(D.CiPattern(True, True, True, True, True))
    assert v.label == "unrecognized" and not v.recognized
    assert v.diffs["confounded"] == D.HYPOTHESES
    assert v.diffs["label_decoupled"] == ("R_||_Y", "R_||_A", "R_||_Y|A", "R_||_A|Y")


def test_parse_dag_round_trip():
    text = "# panel\nA -> R  # collapsed path\nY -> R\nA <-> Y\n\nZ\n"
    g = D.parse_dag(text)
    assert g.nodes == {"A", "R", "Y", "Z"}
    assert g.bidirected_edges == {frozenset({"A", "Y"})}
    assert D.parse_dag(g.to_text()) == g
    assert D.implied_ci_pattern(g).as_tuple() == EXPECTED["confounded"]


@pytest.mark.parametrize(
    "text,lineno",
    [("A -> B\nA => B\n", 2), ("A -> B\n\nA -> A\n", 3), ("1A -> B\n", 1), ("A -> B -> C\n", 1)],
)
def test_parse_dag_errors(text, lineno):
    with pytest.raises(DagParseError) as err:
        D.parse_dag(text)
    assert err.value.lineno == lineno
    assert f"line {lineno}" in str(err.value)


def test_parse_dag_cycle():
    with pytest.raises(DagParseError, match="cycle"):
        D.parse_dag("A -> B\nB -> A\n")


def test_parse_query():
    assert D.parse_query("R _||_ Y | A") == ("R", "Y", ("A",))
    assert D.parse_query("R _||_ Y") == ("R", "Y", ())
    assert D.parse_query("R_||_Y | A, B") == ("R", "Y", ("A", "B"))
    with pytest.raises(SpecificationError):
        D.parse_query("R indep Y")
