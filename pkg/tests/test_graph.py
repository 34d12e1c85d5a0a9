import numpy as np
import pytest

from asdkit.errors import InvalidSpec, ParseError, UnbalancedStatistics
from asdkit.graph import (DegreeSequence, GraphRecipe, InitialStateRule, NodeStatistics, PowerLawSpec,
                          SINGLE_LABEL, extract_statistics, graph_from_degree_sequence,
                          labeled_regular_statistics, load_edge_list, powerlaw_statistics, read_statistics,
                          regular_statistics, rewire, sample_cbm, sample_configuration_model,
                          sample_labeled_regular, sample_powerlaw_sequence, sample_regular,
                          write_edge_list, write_id_mapping, write_statistics)
from asdkit.utils import make_rng

from conftest import write_text


def test_regular_graph_has_exact_degrees():
    g = sample_regular(3, 50, seed=1)
    assert g.n == 50
    assert g.edge_count == 150
    assert np.all(g.out_degree_vecs[:, 0] == 3)
    assert np.all(g.in_degree_vecs[:, 0] == 3)


def test_regular_graph_is_reproducible():
    a = sample_regular(4, 30, seed=5)
    b = sample_regular(4, 30, seed=5)
    c = sample_regular(4, 30, seed=6)
    assert np.array_equal(a.out_heads, b.out_heads)
    assert not np.array_equal(a.out_heads, c.out_heads)


def test_write_edge_list_one_line_per_edge(tmp_path):
    g = sample_regular(2, 4, seed=0)
    path = tmp_path / "g.edges"
    assert write_edge_list(g, path) == 8
    assert len(path.read_text().splitlines()) == 8


def test_configuration_model_realises_cells(stats_k3):
    g = sample_configuration_model(stats_k3, 100, seed=3)
    assert np.all(g.out_degree_vecs == 3)
    assert np.all(g.in_degree_vecs == 3)
    stats = extract_statistics(g)
    assert len(stats.p) == 1
    assert stats.p[0] == pytest.approx(1.0)


def test_configuration_model_rejects_large_imbalance():
    stats = NodeStatistics(SINGLE_LABEL, [[1]], [[2]], [0], [1.0])
    with pytest.raises(UnbalancedStatistics):
        sample_configuration_model(stats, 100, seed=0)


def test_configuration_model_repairs_rounding(mixed_degree_stats):
    g = sample_configuration_model(mixed_degree_stats, 997, seed=2)
    assert g.out_degree_vecs.sum() == g.in_degree_vecs.sum() == g.edge_count


def test_labeled_regular_statistics_are_balanced():
    stats = labeled_regular_statistics(3, [0.25, 0.75], labels=["x", "y"])
    assert stats.is_balanced()
    assert stats.mean_degree() == pytest.approx(3.0)
    assert stats.p_a() == pytest.approx([0.25, 0.75])
    # edges from x to y per node: p_x * 3 * p_y
    assert stats.density()[0, 1] == pytest.approx(0.25 * 3 * 0.75)


def test_labeled_regular_graph_label_counts():
    g = sample_labeled_regular(4, 100, [0.7, 0.3], seed=1, labels=["coord", "anti"])
    assert list(g.labels) == ["coord", "anti"]
    assert np.bincount(g.label_of).tolist() == [70, 30]
    assert np.all(g.out_degree_vecs.sum(axis=1) == 4)
    assert np.all(g.in_degree_vecs.sum(axis=1) == 4)


def test_cbm_edge_classes_match_means():
    g = sample_cbm([500, 500], [[4, 1], [2, 4]], seed=11, labels=["c1", "c2"])
    l = g.edge_class_counts()
    per_node = l / 500.0
    assert per_node == pytest.approx(np.array([[4, 1], [2, 4]]), abs=0.4)
    assert l.sum() == g.edge_count
    stats = extract_statistics(g)
    assert stats.edge_counts(g.n) == pytest.approx(l)


def test_cbm_rejects_wrong_total():
    with pytest.raises(InvalidSpec):
        sample_cbm([10, 10], [[1, 1], [1, 1]], n=25)


def test_powerlaw_sequence_is_balanced():
    spec = PowerLawSpec(2.5, 40)
    seq = sample_powerlaw_sequence(spec, 2000, seed=4)
    assert seq.out_degrees.sum() == seq.in_degrees.sum()
    g = graph_from_degree_sequence(seq, seed=4)
    assert np.array_equal(g.out_degree_vecs[:, 0], seq.out_degrees)
    assert np.array_equal(g.in_degree_vecs[:, 0], seq.in_degrees)


def test_powerlaw_repair_stays_in_support():
    spec = PowerLawSpec(2.5, 3)
    for seed in range(200):
        seq = sample_powerlaw_sequence(spec, 20, seed=seed)
        assert seq.out_degrees.sum() == seq.in_degrees.sum()
        for degrees in (seq.out_degrees, seq.in_degrees):
            assert degrees.min() >= 1 and degrees.max() <= 3, seed


def test_powerlaw_with_unit_cap_is_all_ones():
    seq = sample_powerlaw_sequence(PowerLawSpec(2.5, 1), 50, seed=2)
    assert seq.out_degrees.tolist() == [1] * 50
    assert seq.in_degrees.tolist() == [1] * 50


def test_regular_graph_of_degree_zero_is_empty():
    g = sample_regular(0, 10, seed=1)
    assert g.n == 10
    assert g.edge_count == 0


def test_degree_sequence_must_balance():
    seq = DegreeSequence(np.array([1, 1]), np.array([1, 2]))
    with pytest.raises(UnbalancedStatistics):
        graph_from_degree_sequence(seq)


def test_powerlaw_statistics_moments():
    spec = PowerLawSpec(3.0, 20)
    stats = powerlaw_statistics(spec)
    assert stats.mean_degree() == pytest.approx(spec.truncated_mean())
    assert spec.regime_report()["checked"] is False


def test_powerlaw_rejects_small_exponent():
    with pytest.raises(InvalidSpec):
        PowerLawSpec(1.5, 10).pmf()


def test_rewire_keeps_degree_vectors(regular3):
    h = rewire(regular3, seed=99)
    assert np.array_equal(h.out_degree_vecs, regular3.out_degree_vecs)
    assert np.array_equal(h.in_degree_vecs, regular3.in_degree_vecs)
    assert not np.array_equal(h.out_heads, regular3.out_heads)


def test_truncated_reports_discarded_mass(mixed_degree_stats):
    trunc, discarded = mixed_degree_stats.truncated(0.9)
    kept = mixed_degree_stats.p[:len(trunc.p)].sum()
    assert discarded["0"] == pytest.approx(1 - kept)
    assert kept >= 0.9
    assert trunc.p.sum() == pytest.approx(1.0)


def test_statistics_json_file(tmp_path, mixed_degree_stats):
    path = tmp_path / "stats.json"
    write_statistics(mixed_degree_stats, path)
    back = read_statistics(path)
    assert back.p == pytest.approx(mixed_degree_stats.p)
    assert back.density() == pytest.approx(mixed_degree_stats.density())


def test_child_distribution_is_size_biased(mixed_degree_stats):
    ks, probs = mixed_degree_stats.child_distribution(0, 0)
    j = np.arange(1, 11)
    expected = (j / j ** 2) / (j / j ** 2).sum()
    assert ks[:, 0].tolist() == j.tolist()
    assert probs == pytest.approx(expected)


def test_load_edge_list_with_labels(tmp_path):
    edges = write_text(tmp_path / "g.txt", "# FromNodeId ToNodeId\n10 20\n20 30\n\n30 10\n10 30\n")
    labels = write_text(tmp_path / "labels.txt", "10 red\n20 blue\n30 red\n40 blue\n")
    g = load_edge_list(edges, labels)
    assert g.n == 4
    assert g.edge_count == 4
    assert list(g.labels) == ["blue", "red"]
    assert g.node_ids.tolist() == [10, 20, 30, 40]
    # node 40 only appears in the label map
    assert g.out_degree_vecs[3].sum() == 0 and g.in_degree_vecs[3].sum() == 0
    ids = tmp_path / "ids.txt"
    assert write_id_mapping(g, ids) == 4


def test_load_edge_list_reports_line(tmp_path):
    edges = write_text(tmp_path / "bad.txt", "1 2\n2 3 4\n")
    with pytest.raises(ParseError) as err:
        load_edge_list(edges)
    assert err.value.line == 2


def test_load_edge_list_needs_every_label(tmp_path):
    edges = write_text(tmp_path / "g.txt", "1 2\n")
    labels = write_text(tmp_path / "labels.txt", "1 a\n")
    with pytest.raises(InvalidSpec):
        load_edge_list(edges, labels)


def test_initial_rule_exact_counts(regular3):
    rule = InitialStateRule.fraction_per_class(("-1", "1"), {"1": 0.25, "-1": 0.75}, regular3.labels,
                                               exact=True)
    states = rule.draw(regular3, make_rng(0, "init"))
    assert np.bincount(states, minlength=2).tolist() == [150, 50]


def test_initial_rule_from_file(tmp_path, triangle):
    path = write_text(tmp_path / "init.txt", "0 R\n1 P\n2 S\n")
    rule = InitialStateRule.from_file(("R", "P", "S"), path, triangle)
    assert rule.draw(triangle, make_rng(0)).tolist() == [0, 1, 2]
    assert rule.p_s_given_a(triangle) == pytest.approx(np.full((1, 3), 1 / 3))


def test_initial_rule_file_unknown_state(tmp_path, triangle):
    path = write_text(tmp_path / "init.txt", "0 R\n1 Q\n2 S\n")
    with pytest.raises(ParseError):
        InitialStateRule.from_file(("R", "P", "S"), path, triangle)


def test_recipe_limit_statistics():
    assert GraphRecipe("regular", {"k": 5, "n": 10}).limit_statistics().mean_degree() == 5
    assert GraphRecipe("cbm", {"community_sizes": [5, 5], "edge_means": [[1, 0], [0, 1]]}) \
        .limit_statistics() is None
    with pytest.raises(InvalidSpec):
        GraphRecipe("lattice", {}).build(0)


def test_regular_statistics_single_cell():
    stats = regular_statistics(4)
    assert stats.density().tolist() == [[4.0]]
    ks, probs = stats.root_distribution(0)
    assert ks.tolist() == [[4]] and probs.tolist() == [1.0]
