import numpy as np
import pytest

from asdkit.dynamics import (BRCA_STATES, ERG_STATES, TLTM_STATES, BrcaKernel, ErgKernel, StateSet, TableKernel,
                             TltmKernel, brca_kernel, erg_kernel, evaluate, make_kernel, tltm_kernel)
from asdkit.errors import InvalidPayoff, InvalidSpec, MalformedRow, StateMismatch
from asdkit.utils import compositions


def test_tltm_thresholds(tltm2):
    # states (-1, 0, 1); S = xi_1 - xi_-1
    assert evaluate(tltm2, 0, [[1, 0, 3]]).tolist() == [0, 0, 1]
    assert evaluate(tltm2, 0, [[3, 1, 1]]).tolist() == [1, 0, 0]
    assert evaluate(tltm2, 0, [[1, 5, 2]]).tolist() == [0, 1, 0]


def test_tltm_rejects_zero_threshold():
    with pytest.raises(InvalidSpec):
        TltmKernel(0, 1)


def test_brca_majority_and_tie(brca):
    assert evaluate(brca, 0, [[1, 3]]).tolist() == [0, 1]
    assert evaluate(brca, 0, [[2, 2]]).tolist() == [0.5, 0.5]
    anti = BrcaKernel(False)
    assert evaluate(anti, 0, [[1, 3]]).tolist() == [1, 0]


def test_brca_per_label_flag():
    kernel = BrcaKernel([True, False])
    xi = np.array([[0, 0], [1, 4]])
    assert kernel(0, xi).tolist() == [0, 1]
    assert kernel(1, xi).tolist() == [1, 0]


def test_erg_best_response(erg):
    # all neighbours in R: paper beats rock
    assert evaluate(erg, 0, [[5, 0, 0]]).tolist() == [0, 1, 0]
    assert evaluate(erg, 0, [[0, 5, 0]]).tolist() == [0, 0, 1]
    assert evaluate(erg, 0, [[0, 0, 0]]) == pytest.approx([1 / 3] * 3)


def test_erg_payoff_order():
    with pytest.raises(InvalidPayoff):
        ErgKernel(2.0, 1.0)


@pytest.mark.parametrize("kernel", [TltmKernel(1, 2), BrcaKernel(True), ErgKernel(1.0, 3.0)])
def test_kernels_are_stochastic(kernel):
    X = len(kernel.states)
    xis = compositions(6, X)[:, None, :]
    out = kernel.batch(0, xis)
    assert out.shape == (len(xis), X)
    assert np.all(out >= 0)
    assert out.sum(axis=1) == pytest.approx(np.ones(len(xis)))


def test_state_set_checks():
    with pytest.raises(InvalidSpec):
        StateSet(("a",))
    with pytest.raises(StateMismatch):
        BRCA_STATES.index("0")
    assert ErgKernel().check_states(["R", "P", "S"]) == ERG_STATES
    with pytest.raises(StateMismatch):
        TltmKernel(1, 1).check_states(ERG_STATES)


def test_brca_needs_binary_states(brca):
    with pytest.raises(StateMismatch):
        brca.probabilities(0, [[1, 1, 1]])


def test_table_kernel_lookup_and_fallback():
    kernel = TableKernel(("a", "b"), {0: {(1, 0): [0.2, 0.8]}})
    assert kernel(0, [[1, 0]]) == pytest.approx([0.2, 0.8])
    assert kernel(0, [[0, 1]]) == pytest.approx([0.5, 0.5])
    assert not kernel.label_blind


def test_table_kernel_rejects_bad_row():
    with pytest.raises(MalformedRow):
        TableKernel(("a", "b"), {0: {(1, 0): [0.7, 0.7]}})


def test_table_kernel_from_json():
    doc = {"states": ["off", "on"], "rows": {"x": {"0,2": [0.0, 1.0]}}}
    kernel = TableKernel.from_json(doc, ("x",))
    assert kernel(0, [[0, 2]]).tolist() == [0.0, 1.0]
    with pytest.raises(MalformedRow):
        TableKernel.from_json({"rows": {}}, ("x",))


def test_make_kernel_per_label_params():
    kernel = make_kernel("tltm", {"a_plus": {"u": 1, "v": 3}, "a_minus": 2}, ("u", "v"))
    xi = np.array([[0, 0, 2], [0, 0, 0]])
    assert kernel(0, xi).tolist() == [0, 0, 1]
    assert kernel(1, xi).tolist() == [0, 1, 0]
    assert kernel.states == TLTM_STATES
    with pytest.raises(InvalidSpec):
        make_kernel("tltm", {"a_plus": {"u": 1}}, ("u", "v"))
    with pytest.raises(InvalidSpec):
        make_kernel("voter", {}, ("u",))


def test_factory_functions():
    assert isinstance(tltm_kernel(1, 2), TltmKernel)
    assert brca_kernel(False).coordinating is False
    kernel = erg_kernel(0.5, 3.0)
    assert (kernel.b, kernel.c) == (0.5, 3.0)
    with pytest.raises(InvalidPayoff):
        erg_kernel(3.0, 0.5)
