import math

import numpy as np
import pytest

from asdkit.bounds import (BoundInputs, coupling_rate, concentration_bound, degree_law_distances, depth_tail,
                           estimate_tree_tails, gw_moment_probe, ode_distance_bound, poisson_offspring,
                           run_coupling, sample_truncated_tree, topological_bound, wilson_interval)
from asdkit.errors import InvalidSpec, InvalidStep, TreeBudgetExceeded
from asdkit.graph import labeled_regular_statistics, regular_statistics


def _term(report, name):
    return next(term for term in report.terms if term.term == name)


def test_pairing_term_value(stats_k3):
    tails = estimate_tree_tails(stats_k3, 1.0, trials=200, seed=1)
    report = topological_bound(stats_k3, 10 ** 4, 1.0, cuts=32, tails=tails, conservative=False)
    # 32 * 33 / 2 * E[d] / l with E[d] = 3 and l = 3 * 10^4
    assert _term(report, "pairing 0->0").value == pytest.approx(0.0528)
    assert report.cuts == {("0", "0"): 32.0}


def test_bound_at_time_zero(stats_k3):
    report = topological_bound(stats_k3, 10 ** 4, 0.0, cuts=1, trials=100, conservative=False)
    assert _term(report, "tail 0->0").value == 0.0
    assert report.value == pytest.approx(1e-4)
    rows = list(report.rows())
    assert rows[0] == {"term": "topological", "value": report.value, "detail": "total"}


def test_optimized_cuts_do_not_lose_to_fixed_cut(stats_k3):
    tails = estimate_tree_tails(stats_k3, 0.5, trials=500, seed=2)
    best = topological_bound(stats_k3, 10 ** 5, 0.5, tails=tails)
    fixed = topological_bound(stats_k3, 10 ** 5, 0.5, cuts=8, tails=tails)
    assert best.value <= fixed.value + 1e-12
    assert not best.vacuous


def test_multi_label_bound_has_cross_terms():
    stats = labeled_regular_statistics(3, [0.5, 0.5], labels=["u", "v"])
    report = topological_bound(stats, 10 ** 4, 0.5, cuts=4, trials=200)
    names = {term.term for term in report.terms}
    assert {"tail u->v", "pairing u->v", "cross u->v"} <= names
    with pytest.raises(InvalidSpec):
        topological_bound(stats, 10 ** 4, 0.5, form="classic", trials=10)
    with pytest.raises(InvalidSpec):
        topological_bound(stats, 10 ** 4, 0.5, cuts={("u", "u"): 2}, trials=10)


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and 0 < hi < 0.05
    lo, hi = wilson_interval(50, 100)
    assert 0.5 - lo == pytest.approx(hi - 0.5)
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_path_tree_size():
    # out-degree one: the tree is a path grown by a rate-one clock
    tails = estimate_tree_tails(regular_statistics(1), 1.0, trials=4000, seed=3)
    mean, se = tails.moment(1)
    assert mean == pytest.approx(2.0, abs=0.1)
    assert se > 0


def test_tree_with_late_root_timer(stats_k3):
    tree = sample_truncated_tree(stats_k3, 1.0, root_timer=1.5)
    assert tree.node_count == 1
    assert tree.edge_count == 0
    assert len(tree.explored()) == 0
    with pytest.raises(InvalidSpec):
        sample_truncated_tree(stats_k3, -1.0)


def test_tree_records_parents(stats_k3):
    tree = sample_truncated_tree(stats_k3, 2.0, seed=4, root_timer=0.0)
    assert tree.node_count == 1 + tree.edge_count
    assert tree.parent[0] == -1
    depth = tree.depth()
    assert depth[1:4].tolist() == [1, 1, 1]
    assert sum(1 for _ in tree.lines()) == tree.node_count + 1


def test_tree_budget():
    with pytest.raises(TreeBudgetExceeded) as err:
        sample_truncated_tree(regular_statistics(5), 20.0, seed=1, budget=50)
    assert err.value.partial.node_count <= 50


def test_coupling_structures_agree_under_both_events(regular3):
    equal = 0
    for i in range(200):
        trace = run_coupling(regular3, 1.0, seed=i)
        if trace.b1 and trace.b2:
            assert trace.equal
        equal += trace.equal
        assert trace.tree_nodes == len(trace.replica)
    assert equal > 0


def test_coupling_at_time_zero_is_trivial(regular3):
    trace = run_coupling(regular3, 0.0, seed=1, root=5)
    assert trace.root == 5
    assert trace.equal and trace.b1 and trace.b2
    assert trace.graph_nodes == trace.tree_nodes == 1


def test_coupling_rate_rows(stats_k3):
    rows = coupling_rate(stats_k3, [300], 0.5, traces=40, seed=2, tail_trials=200)
    assert len(rows) == 1
    row = rows[0]
    assert row["n"] == 300 and row["traces"] == 40
    assert 0.0 <= row["ci_low"] <= row["rate"] <= row["ci_high"] <= 1.0
    assert row["b1b2_violations"] == 0
    assert math.isfinite(row["bound"])


def test_concentration_terms():
    report = concentration_bound(BoundInputs(n=10 ** 6, t=0.0, eta=0.1, mean_degree=3.0), moment=1.0)
    assert [term.term for term in report.terms] == [
        "update-count", "large-neighbourhood", "clock-deviation", "initial-state", "in-degree-moment",
        "graph-deviation"]
    assert _term(report, "update-count").value == 0.0
    assert report.value == pytest.approx(sum(term.value for term in report.terms))
    assert report.notes["x"] == pytest.approx(10 ** (6 * 4 / 9))


def test_concentration_is_vacuous_for_small_graphs():
    report = concentration_bound(BoundInputs(n=100, t=1.0, eta=0.05), moment=5.0)
    assert report.vacuous
    assert report.dominant is not None
    with pytest.raises(InvalidSpec):
        concentration_bound(BoundInputs(n=100, t=1.0, eta=0.0), moment=1.0)


def test_ode_distance_without_growth(stats_k3):
    res = ode_distance_bound(stats_k3, stats_k3, zeta_gap=0.01, L=0.0, M=0.0, delta=0.01, m=100)
    assert res.zeta_bound == pytest.approx(0.01)
    assert res.y_bound == 0.0
    assert res.horizon == pytest.approx(1.0)
    assert [row["term"] for row in res.rows()] == ["zeta", "y", "tv_q", "tv_p", "L", "M"]


def test_ode_distance_step_checks(stats_k3):
    with pytest.raises(InvalidStep):
        ode_distance_bound(stats_k3, stats_k3, 0.0, L=200.0, M=1.0, delta=0.01)
    with pytest.raises(InvalidSpec):
        ode_distance_bound(stats_k3, stats_k3, 0.0)


def test_ode_distance_estimates_lipschitz(stats_k3, erg):
    res = ode_distance_bound(stats_k3, stats_k3, 0.0, kernel=erg, samples=50, delta=0.001, m=10)
    assert res.L > 0
    assert res.lipschitz_method == "sampled finite differences"


def test_truncation_distance_equals_dropped_mass(mixed_degree_stats):
    trunc, discarded = mixed_degree_stats.truncated(0.9)
    tv_q, tv_p = degree_law_distances(trunc, mixed_degree_stats)
    kept = len(trunc.p)
    p = mixed_degree_stats.p
    j = np.arange(1, 11)
    assert tv_p == pytest.approx(discarded["0"])
    assert tv_q == pytest.approx(1 - (j * p)[:kept].sum() / (j * p).sum())


def test_deterministic_branching_sizes():
    probe = gw_moment_probe({2: 1.0}, 4, s=1, trials=10)
    assert [row.mean for row in probe.rows] == [1, 3, 7, 15, 31]
    assert probe.mu1 == 2.0
    last = probe.rows[-1]
    assert last.ci_low == last.ci_high == 31
    assert last.envelope == 16.0
    assert len(list(probe.csv_rows())) == 5


def test_branching_probe_limits():
    with pytest.raises(InvalidSpec):
        gw_moment_probe({1: 1.0}, 3, s=4)
    with pytest.raises(InvalidSpec):
        gw_moment_probe({1: 1.0}, 13)
    pmf = poisson_offspring(2.0)
    assert pmf.sum() == pytest.approx(1.0)
    assert (np.arange(len(pmf)) * pmf).sum() == pytest.approx(2.0)


def test_depth_tail():
    exact, bound = depth_tail(1.0, 3)
    assert exact == pytest.approx(1 - 2.5 / math.e)
    assert exact <= bound == pytest.approx((math.e / 3) ** 3)
    assert depth_tail(1.0, 0) == (1.0, 1.0)
