import numpy as np
import pytest

from coalglm.genealogy import (
    COALESCENT,
    SAMPLING,
    Genealogy,
    GenealogyError,
    emit_newick,
    event_timeline,
    parse_genealogy,
    parse_tip_date_table,
)


def test_parse_isochronous_three_tips():
    g = parse_genealogy("((A:1,B:1):1,C:2);")
    assert g.n_tips == 3
    assert np.allclose(g.tip_times, [0.0, 0.0, 0.0])
    assert np.allclose(g.coalescent_times, [1.0, 2.0])


def test_parse_rejects_dates_inconsistent_with_branch_lengths():
    with pytest.raises(GenealogyError, match="inconsistent"):
        parse_genealogy("(A:2,B:1);", tip_dates={"A": 1.0, "B": 0.0})


def test_parse_heterochronous_two_tips():
    # hand-propagation: A sampled at 1 with a 1.5 branch and B sampled at 0
    # with a 2.5 branch both place the coalescence at 2.5
    g = parse_genealogy("(A:1.5,B:2.5);", tip_dates={"A": 1.0, "B": 0.0})
    assert np.allclose(sorted(zip(g.tip_ids, g.tip_times)), [("A", 1.0), ("B", 0.0)])
    assert np.allclose(g.coalescent_times, [2.5])


def test_calendar_dates_anchor_at_most_recent():
    g = parse_genealogy(
        "(A:1.5,B:2.5);",
        tip_dates={"A": 2004.0, "B": 2003.0},
        date_convention="calendar",
    )
    times = dict(zip(g.tip_ids, g.tip_times))
    assert times["A"] == 0.0
    assert times["B"] == 1.0
    assert np.allclose(g.coalescent_times, [1.5])


def test_label_embedded_dates():
    g = parse_genealogy("(A|1:1.5,B|0:2.5);", label_date_delimiter="|")
    assert set(g.tip_ids) == {"A", "B"}
    assert np.allclose(g.coalescent_times, [2.5])


def test_parse_rejects_polytomy():
    with pytest.raises(GenealogyError, match="polytom"):
        parse_genealogy("(A:1,B:1,C:1);")


def test_parse_rejects_negative_branch_length():
    with pytest.raises(GenealogyError, match="negative branch"):
        parse_genealogy("(A:-1,B:1);")


def test_parse_rejects_malformed_newick():
    for bad in ["(A:1,B:1)", "(A:1,B:1;", "A;", "(A:1,B:1));", ""]:
        with pytest.raises(GenealogyError):
            parse_genealogy(bad)


def test_parse_rejects_simultaneous_coalescences():
    with pytest.raises(GenealogyError, match="simultaneous"):
        parse_genealogy("((A:1,B:1):1,(C:1,D:1):1);")


def test_roundtrip_preserves_times_and_topology():
    rng = np.random.default_rng(7)
    for _ in range(20):
        g = _random_genealogy(rng, n=rng.integers(2, 9))
        text = emit_newick(g)
        dates = dict(zip(g.tip_ids, g.tip_times))
        g2 = parse_genealogy(text, tip_dates=dates)
        assert g2.tip_ids == g.tip_ids
        assert np.allclose(np.sort(g2.node_times), np.sort(g.node_times), atol=1e-12)
        assert emit_newick(g2) == text


def test_timeline_isochronous_pair():
    g = parse_genealogy("(A:1,B:1);")
    tl = event_timeline(g)
    assert tl.times.tolist() == [0.0, 1.0]
    assert tl.kinds.tolist() == [SAMPLING, COALESCENT]
    assert tl.lineages_after.tolist() == [2, 1]


def test_timeline_three_isochronous_tips():
    g = parse_genealogy("((A:0.5,B:0.5):0.7,C:1.2);")
    tl = event_timeline(g)
    assert tl.times.tolist() == [0.0, 0.5, 1.2]
    assert tl.lineages_after.tolist() == [3, 2, 1]


def test_timeline_heterochronous_counts():
    # tips at 0, 0, 1.0 with coalescences at 0.4 and 1.8
    g = parse_genealogy(
        "((A:0.4,B:0.4):1.4,C:0.8);", tip_dates={"A": 0.0, "B": 0.0, "C": 1.0}
    )
    tl = event_timeline(g)
    assert tl.times.tolist() == [0.0, 0.4, 1.0, 1.8]
    assert tl.kinds.tolist() == [SAMPLING, COALESCENT, SAMPLING, COALESCENT]
    assert tl.lineages_after.tolist() == [2, 1, 2, 1]


def test_timeline_invariant_to_tip_order():
    dates = {"A": 0.0, "B": 0.0, "C": 1.0}
    g1 = parse_genealogy("((A:0.4,B:0.4):1.4,C:0.8);", tip_dates=dates)
    g2 = parse_genealogy("(C:0.8,(B:0.4,A:0.4):1.4);", tip_dates=dates)
    t1, t2 = event_timeline(g1), event_timeline(g2)
    assert t1.times.tolist() == t2.times.tolist()
    assert t1.lineages_after.tolist() == t2.lineages_after.tolist()


def test_timeline_coalescence_count_and_final_lineage():
    rng = np.random.default_rng(21)
    for _ in range(25):
        g = _random_genealogy(rng, n=rng.integers(2, 12))
        tl = event_timeline(g)
        assert tl.n_coalescences == g.n_tips - 1
        assert tl.lineages_after[-1] == 1


def test_tip_date_table_parsing():
    table = "A\t0.5\nB\t0\n# comment line\n\nC 1.25\n"
    assert parse_tip_date_table(table) == {"A": 0.5, "B": 0.0, "C": 1.25}
    with pytest.raises(GenealogyError):
        parse_tip_date_table("A\t0.5\textra\n")
    with pytest.raises(GenealogyError):
        parse_tip_date_table("A\tnotanumber\n")


def test_genealogy_invariant_checks():
    # parent younger than child
    with pytest.raises(GenealogyError, match="older"):
        Genealogy(
            tip_ids=("A", "B"),
            node_times=np.array([0.5, 0.0, 0.2]),
            parent=np.array([2, 2, -1]),
        )
    # negative tip time
    with pytest.raises(GenealogyError, match="negative tip"):
        Genealogy(
            tip_ids=("A", "B"),
            node_times=np.array([-0.1, 0.0, 1.0]),
            parent=np.array([2, 2, -1]),
        )


def _random_genealogy(rng, n=6):
    """Random heterochronous tree built by merging uniformly chosen lineages."""
    n = int(n)
    tip_times = np.round(rng.uniform(0.0, 1.0, size=n), 3)
    tip_times[rng.integers(0, n)] = 0.0
    node_times = np.concatenate([tip_times, np.zeros(n - 1)])
    parent = np.full(2 * n - 1, -1, dtype=int)
    t = 0.0
    active: list[int] = []
    pending = sorted(range(n), key=lambda v: tip_times[v])
    nxt = n
    while nxt < 2 * n - 1:
        while pending and tip_times[pending[0]] <= t:
            active.append(pending.pop(0))
        if len(active) < 2:
            t = tip_times[pending[0]]
            continue
        t += rng.exponential(0.3)
        if pending and tip_times[pending[0]] < t:
            t = tip_times[pending[0]]
            continue
        i, j = rng.choice(len(active), size=2, replace=False)
        a, b = active[i], active[j]
        node_times[nxt] = t
        parent[a] = nxt
        parent[b] = nxt
        active = [v for v in active if v not in (a, b)] + [nxt]
        nxt += 1
    return Genealogy(
        tip_ids=tuple(f"t{i}" for i in range(n)),
        node_times=node_times,
        parent=parent,
    )
