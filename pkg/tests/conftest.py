import numpy as np
import pytest

from asdkit.dynamics import BrcaKernel, ErgKernel, TltmKernel
from asdkit.graph import SINGLE_LABEL, LabeledGraph, NodeStatistics, regular_statistics, sample_regular


def directed_cycle(n):
    nodes = np.arange(n)
    return LabeledGraph(SINGLE_LABEL, np.zeros(n, dtype=np.int64), nodes, (nodes + 1) % n)


def write_text(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def cycle60():
    return directed_cycle(60)


@pytest.fixture
def regular3():
    return sample_regular(3, 200, seed=7)


@pytest.fixture
def triangle():
    """0 -> 1 -> 2 -> 0 plus 0 -> 2."""
    return LabeledGraph(SINGLE_LABEL, [0, 0, 0], [0, 1, 2, 0], [1, 2, 0, 2])


@pytest.fixture
def stats_k3():
    return regular_statistics(3)


@pytest.fixture
def tltm2():
    return TltmKernel(2, 2)


@pytest.fixture
def brca():
    return BrcaKernel(True)


@pytest.fixture
def erg():
    return ErgKernel(1.0, 2.0)


@pytest.fixture
def mixed_degree_stats():
    """Single label, d = k = j for j = 1..10 with p_j proportional to 1/j^2."""
    j = np.arange(1, 11)
    p = 1.0 / j ** 2
    return NodeStatistics(SINGLE_LABEL, j.reshape(-1, 1), j.reshape(-1, 1), np.zeros(10, dtype=np.int64),
                          p / p.sum())
