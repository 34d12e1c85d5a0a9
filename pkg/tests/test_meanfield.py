import itertools

import numpy as np
import pytest
from scipy.optimize import brentq

from asdkit.dynamics import BrcaKernel, ErgKernel, TableKernel, TltmKernel
from asdkit.errors import BudgetExceeded, InvalidSpec, NoConvergence, StepTooLarge
from asdkit.graph import NodeStatistics, labeled_regular_statistics, regular_statistics
from asdkit.meanfield import (MeanFieldState, MeanFieldSystem, OdeConfig, brca_alpha_th, brca_derivative_zeros,
                              brca_phi1, brca_rhs, erg_pi, find_stationary, initial_state_from_rule, integrate,
                              integrate_label_independent, map_basins, phi_bar, phi_varphi, psi_bar, tltm_phi_minus,
                              tltm_phi_plus)


def _single(law):
    return np.asarray(law, dtype=float).reshape(-1, 1, 1)


def test_varphi_is_a_distribution(erg):
    res = phi_varphi((5,), 0, _single([0.5, 0.3, 0.2]), erg)
    assert res.mode == "exact"
    assert res.probs.sum() == pytest.approx(1.0)
    assert np.all(res.probs >= 0)


def test_varphi_matches_brute_force(tltm2):
    # states (-1, 0, 1) with laws 0.2, 0.3, 0.5
    law = np.array([0.2, 0.3, 0.5])
    expected = np.zeros(3)
    for tup in itertools.product(range(3), repeat=3):
        xi = np.bincount(tup, minlength=3)
        expected += np.prod(law[list(tup)]) * tltm2(0, [xi])
    res = phi_varphi((3,), 0, _single(law), tltm2)
    assert res.probs == pytest.approx(expected, abs=1e-12)


def test_monte_carlo_agrees_with_exact(erg):
    zeta = _single([0.4, 0.35, 0.25])
    exact = phi_varphi((6,), 0, zeta, erg)
    mc = phi_varphi((6,), 0, zeta, erg, OdeConfig(phi_mode="monte-carlo", mc_samples=20000, seed=3))
    assert mc.mode == "monte-carlo"
    assert mc.std_error is not None
    assert mc.probs == pytest.approx(exact.probs, abs=0.02)


def test_budget_controls_evaluation_mode(erg):
    zeta = _single([0.4, 0.35, 0.25])
    with pytest.raises(BudgetExceeded):
        phi_varphi((10,), 0, zeta, erg, OdeConfig(phi_mode="exact", budget=10))
    res = phi_varphi((10,), 0, zeta, erg, OdeConfig(budget=10, mc_samples=200))
    assert res.mode == "monte-carlo"


def test_system_matches_tltm_closed_form():
    system = MeanFieldSystem(regular_statistics(10), TltmKernel(2, 2))
    for x, z in [(0.3, 0.2), (0.05, 0.6), (0.5, 0.5)]:
        phi, _ = system.evaluate(_single([z, 1 - x - z, x]))
        assert phi[2, 0, 0] == pytest.approx(tltm_phi_plus(10, 2, x, z), abs=1e-12)
        assert phi[0, 0, 0] == pytest.approx(tltm_phi_minus(10, 2, x, z), abs=1e-12)


def test_tltm_closed_form_edges():
    assert tltm_phi_plus(10, 3, 1.0, 0.0) == pytest.approx(1.0)
    assert tltm_phi_plus(10, 2, 0.0, 0.7) == 0.0
    grid = np.linspace(0, 0.5, 11)
    values = tltm_phi_plus(10, 2, grid, 0.1)
    assert np.all(np.diff(values) >= -1e-15)
    with pytest.raises(InvalidSpec):
        tltm_phi_plus(3, 4, 0.1, 0.1)


def test_system_matches_erg_closed_form():
    system = MeanFieldSystem(regular_statistics(6), ErgKernel(1.0, 2.0))
    law = [0.5, 0.3, 0.2]
    phi, _ = system.evaluate(_single(law))
    assert phi[:, 0, 0] == pytest.approx(erg_pi(6, law), abs=1e-12)


def test_pair_and_root_mixtures_on_regular_graph(erg):
    stats = regular_statistics(6)
    law = [0.5, 0.3, 0.2]
    expected = erg_pi(6, law)
    assert phi_bar(0, 0, _single(law), stats, erg) == pytest.approx(expected, abs=1e-12)
    assert psi_bar(0, _single(law), stats, erg) == pytest.approx(expected, abs=1e-12)


def test_integrate_function_form(erg):
    traj = integrate(_single([1.0, 0.0, 0.0]), [[1.0], [0.0], [0.0]], regular_statistics(3), erg,
                     OdeConfig(h=0.1, horizon=1.0))
    assert len(traj.times) == 11
    # every neighbour in R: best response is P
    assert traj.y[-1, 1, 0] > traj.y[0, 1, 0]


def test_brca_phi1_values():
    assert brca_phi1(3, 0.5) == pytest.approx(0.5)
    assert brca_phi1(2, 0.5) == pytest.approx(0.5)
    assert brca_phi1(4, 1.0) == pytest.approx(1.0)
    assert brca_phi1(4, 0.0) == 0.0


def test_integration_stays_on_simplex(erg):
    system = MeanFieldSystem(regular_statistics(5), erg, OdeConfig(h=0.05, horizon=5.0))
    state = system.initial_state([[0.5, 0.3, 0.2]])
    traj = system.integrate(state)
    assert len(traj.times) == 101
    assert traj.zeta.sum(axis=1) == pytest.approx(np.ones((101, 1, 1)))
    assert np.all(traj.zeta >= 0) and np.all(traj.y >= 0)
    assert traj.renormalized_steps == 0
    assert traj.y_all.shape == (101, 3)
    kinds = {row["kind"] for row in traj.rows(every=50)}
    assert kinds == {"zeta", "y", "zeta_all", "y_all"}


class _UniformBlindKernel(TableKernel):
    label_blind = True


def test_fixed_point_start_stays_put(erg):
    third = np.full(3, 1 / 3)
    cfg = OdeConfig(h=0.1, horizon=3.0)
    traj = MeanFieldSystem(regular_statistics(4), erg, cfg).integrate(
        MeanFieldState(_single(third), third.reshape(3, 1)))
    assert np.abs(traj.zeta - third[:, None, None]).max() <= 1e-10
    assert np.abs(traj.y - third[:, None]).max() <= 1e-10
    _, zs, ys = integrate_label_independent(third, third, regular_statistics(4), erg, cfg)
    assert np.abs(zs - third).max() <= 1e-10
    assert np.abs(ys - third).max() <= 1e-10


def test_step_too_large_when_restore_keeps_firing():
    # constant uniform update law: a step of 10 overshoots the simplex every time
    cfg = OdeConfig(h=10.0, horizon=20.0)
    system = MeanFieldSystem(regular_statistics(2), TableKernel(("a", "b"), {}), cfg)
    with pytest.raises(StepTooLarge):
        system.integrate(MeanFieldState(_single([1.0, 0.0]), np.array([[1.0], [0.0]])))
    with pytest.raises(StepTooLarge):
        integrate_label_independent([1.0, 0.0], [1.0, 0.0], regular_statistics(2),
                                    _UniformBlindKernel(("a", "b"), {}), cfg)


def test_small_step_relaxes_to_uniform_law():
    times, zs, ys = integrate_label_independent([1.0, 0.0], [1.0, 0.0], regular_statistics(2),
                                                _UniformBlindKernel(("a", "b"), {}),
                                                OdeConfig(h=0.1, horizon=2.0))
    assert zs[-1, 0] == pytest.approx(0.5 + 0.5 * np.exp(-2.0), abs=1e-6)
    assert np.all(zs >= 0) and np.all(ys <= 1)


def test_integration_rejects_point_off_simplex(erg):
    system = MeanFieldSystem(regular_statistics(3), erg)
    with pytest.raises(InvalidSpec):
        system.integrate(MeanFieldState(_single([0.5, 0.5, 0.5]), np.array([[1.0], [0.0], [0.0]])))


def test_label_independent_matches_full_system(erg):
    stats = regular_statistics(4)
    cfg = OdeConfig(h=0.05, horizon=2.0)
    law = np.array([0.5, 0.3, 0.2])
    times, zs, ys = integrate_label_independent(law, law, stats, erg, cfg)
    traj = MeanFieldSystem(stats, erg, cfg).integrate(initial_state_from_rule(stats, law[None, :]))
    assert np.allclose(times, traj.times)
    assert zs == pytest.approx(traj.zeta[:, :, 0, 0], abs=1e-9)
    assert ys == pytest.approx(traj.y[:, :, 0], abs=1e-9)


def test_label_independent_needs_label_blind_kernel():
    kernel = TableKernel(("a", "b"), {})
    with pytest.raises(InvalidSpec):
        integrate_label_independent([0.5, 0.5], [0.5, 0.5], regular_statistics(2), kernel)


def test_brca_threshold_constant():
    assert brca_alpha_th(21) == pytest.approx(0.635131, abs=1e-6)


@pytest.mark.parametrize("alpha, roots", [(0.7, 3), (0.6, 1)])
def test_brca_root_count(alpha, roots):
    y = np.linspace(0.0005, 0.9995, 2000)
    f = brca_rhs(21, alpha, y)
    assert int((np.sign(f[1:]) != np.sign(f[:-1])).sum()) == roots


def test_brca_slope_zeros_bracket_half():
    low, high = brca_derivative_zeros(21, 0.7)
    assert low < 0.5 < high
    assert low + high == pytest.approx(1.0)
    assert brca_derivative_zeros(21, 0.4) is None


def test_stationary_points_of_majority_rule(brca):
    report = find_stationary(regular_statistics(3), brca, resolution=10)
    # sorted by the "-1" coordinate: all 1, the tie point, all -1
    assert [round(p.zeta[1, 0, 0], 6) for p in report.points] == [1.0, 0.5, 0.0]
    assert [p.classification for p in report.points] == ["stable", "unstable", "stable"]
    assert all(p.residual <= 1e-8 for p in report.points)
    rows = list(report.rows())
    assert {r["kind"] for r in rows} == {"zeta", "y"}
    assert len(report.stable()) == 2


def test_erg_has_one_interior_fixed_point(erg):
    report = find_stationary(regular_statistics(6), erg, resolution=6)
    interior = [p for p in report.points if p.zeta[:, 0, 0].min() > 1e-6]
    assert len(interior) == 1
    assert interior[0].zeta[:, 0, 0] == pytest.approx([1 / 3] * 3, abs=1e-8)


def test_stationary_search_reaches_points_with_different_label_laws(brca):
    # two communities that only watch themselves: 3 x 3 product of fixed points
    stats = NodeStatistics(["u", "v"], [[3, 0], [0, 3]], [[3, 0], [0, 3]], [0, 1], [0.5, 0.5])
    report = find_stationary(stats, brca, resolution=4)
    assert len(report.points) == 9
    split = [p for p in report.points if p.zeta[1, 0, 0] > 0.99 and p.zeta[1, 1, 1] < 0.01]
    assert len(split) == 1
    assert split[0].classification == "stable"
    assert len(report.stable()) == 4


def test_failed_seeds_are_reported(brca):
    report = find_stationary(regular_statistics(3), brca, resolution=4, max_iter=0, newton_iter=0)
    # seeds at 0.25 and 0.75 are not fixed points and no iteration is allowed
    assert report.failures == len(report.errors) == 2
    assert all(isinstance(err, NoConvergence) for err in report.errors)
    assert all(err.residual > 1e-8 for err in report.errors)
    assert len(report.points) == 3


def test_basin_map_on_segment(brca):
    cfg = OdeConfig(h=0.05)
    system = MeanFieldSystem(regular_statistics(3), brca, cfg)
    report = find_stationary(system, resolution=10)
    basins = map_basins(system, None, report, resolution=11, horizon=30.0)
    labels = basins.labels.tolist()
    # x is the share of state "1"; point 0 is all 1, point 2 all -1
    assert labels[0] == "2"
    assert labels[3] == "2"
    assert labels[5] == "undecided"
    assert labels[7] == "0"
    assert labels[10] == "0"
    assert len(list(basins.rows())) == 11


@pytest.mark.slow
def test_tltm_boundary_stationary_points():
    report = find_stationary(regular_statistics(10), TltmKernel(2, 2), resolution=10)
    x_star = brentq(lambda x: tltm_phi_plus(10, 2, x, 0.0) - x, 1e-3, 0.5)
    expected = {
        (0.0, 0.0): "stable",
        (x_star, 0.0): "unstable",
        (1.0, 0.0): "stable",
        (0.0, x_star): "unstable",
        (0.0, 1.0): "stable",
    }
    for (x, z), cls in expected.items():
        hits = [p for p in report.points
                if abs(p.zeta[2, 0, 0] - x) < 1e-5 and abs(p.zeta[0, 0, 0] - z) < 1e-5]
        assert len(hits) == 1, (x, z)
        assert hits[0].classification == cls


@pytest.mark.slow
@pytest.mark.parametrize("alpha, count", [(0.7, 3), (0.6, 1)])
def test_brca_mixed_population_stationary_points(alpha, count):
    stats = labeled_regular_statistics(21, [alpha, 1 - alpha], labels=["coord", "anti"])
    system = MeanFieldSystem(stats, BrcaKernel([True, False]))
    report = find_stationary(system, resolution=4)
    assert len(report.points) == count
    shares = sorted(float(system.aggregate_y(p.y)[1]) for p in report.points)
    f = lambda y: brca_rhs(21, alpha, y)  # noqa: E731
    for share in shares:
        assert abs(f(share)) < 1e-6
    middle = min(report.points, key=lambda p: abs(float(system.aggregate_y(p.y)[1]) - 0.5))
    assert middle.classification == ("unstable" if alpha > brca_alpha_th(21) else "stable")
