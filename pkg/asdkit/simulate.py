"""
Event-driven simulation of asynchronous semi-anonymous dynamics.

run_asd() is an exact Gillespie realisation of the chain: events arrive at
aggregate rate gamma*n, the updating node is uniform, and it redraws its
state from the kernel applied to its current neighbour counts.
"""

import functools
import heapq
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.stats import poisson
from tqdm import tqdm

from .errors import InvalidSpec, StateSpaceTooLarge
from .graph import GraphRecipe, LabeledGraph
from .utils import make_rng

logger = logging.getLogger(__name__)

# Nodes with at least this many out-edges keep their neighbour counts up to
# date incrementally instead of recounting on every update.
HEAVY_DEGREE = 64

# Distinct (label, neighbour counts) kernel rows kept per run.
KERNEL_CACHE_SIZE = 65536

# Random draws per refill of the event buffers.
_DRAW_BATCH = 4096

GRANULARITIES = ("global", "per-class", "per-class-and-state")

MAX_EXACT_STATES = 2 ** 20


@dataclass
class SimConfig:
    horizon: float
    dt: float = 0.01
    runs: int = 1
    seed: int = 0
    gamma: float = 1.0
    granularity: str = "per-class"
    fresh_graph: bool = False
    fresh_seeds: bool = True

    def validate(self):
        if not self.horizon > 0:
            raise InvalidSpec(f"horizon must be positive, got {self.horizon}")
        if not self.dt > 0:
            raise InvalidSpec(f"sample interval must be positive, got {self.dt}")
        if self.runs < 1:
            raise InvalidSpec(f"run count must be at least 1, got {self.runs}")
        if not self.gamma > 0:
            raise InvalidSpec(f"clock rate must be positive, got {self.gamma}")
        if self.granularity not in GRANULARITIES:
            raise InvalidSpec(f"granularity must be one of {GRANULARITIES}")
        return self

    def grid(self):
        steps = int(np.floor(self.horizon / self.dt + 1e-9))
        return np.arange(steps + 1) * self.dt


@dataclass
class SimState:
    states: np.ndarray
    time: float = 0.0
    updates: int = 0


@dataclass
class TrajectorySample:
    """
    State fractions on the sampling grid.

    fractions[j, c, x] is the fraction of class-c nodes in state x at
    times[j]; zeta[j, c, x] is the in-degree weighted fraction (NaN for a
    class without in-edges).
    """
    times: np.ndarray
    classes: tuple
    states: tuple
    fractions: np.ndarray
    zeta: np.ndarray
    run_id: int = 0
    updates: int = 0

    def rows(self):
        for j, t in enumerate(self.times):
            for c, cls in enumerate(self.classes):
                for x, state in enumerate(self.states):
                    yield {
                        "run_id": self.run_id,
                        "t": round(float(t), 10),
                        "class": cls,
                        "state": state,
                        "fraction": float(self.fractions[j, c, x]),
                        "zeta_fraction": float(self.zeta[j, c, x]),
                    }


@dataclass
class RunEnsembleSummary:
    times: np.ndarray
    classes: tuple
    states: tuple
    mean: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    runs: int
    updates: list = field(default_factory=list)

    def band(self, time, cls=0, state=0):
        """max - min at the grid point nearest to `time`."""
        j = int(np.argmin(np.abs(self.times - time)))
        return float(self.maximum[j, cls, state] - self.minimum[j, cls, state])

    def rows(self):
        for j, t in enumerate(self.times):
            for c, cls in enumerate(self.classes):
                for x, state in enumerate(self.states):
                    yield {
                        "t": round(float(t), 10),
                        "class": cls,
                        "state": state,
                        "mean": float(self.mean[j, c, x]),
                        "min": float(self.minimum[j, c, x]),
                        "max": float(self.maximum[j, c, x]),
                    }


class EnsembleAccumulator:
    """Running sum/min/max over trajectories; merge() is associative."""

    def __init__(self):
        self.total = None
        self.minimum = None
        self.maximum = None
        self.count = 0
        self.updates = []
        self.template = None

    def add(self, sample):
        f = sample.fractions
        if self.total is None:
            self.template = sample
            self.total = f.copy()
            self.minimum = f.copy()
            self.maximum = f.copy()
        else:
            self.total += f
            np.minimum(self.minimum, f, out=self.minimum)
            np.maximum(self.maximum, f, out=self.maximum)
        self.count += 1
        self.updates.append(sample.updates)
        return self

    def merge(self, other):
        if other.total is None:
            return self
        if self.total is None:
            self.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v)
                                  for k, v in other.__dict__.items()})
            self.updates = list(other.updates)
            return self
        self.total += other.total
        np.minimum(self.minimum, other.minimum, out=self.minimum)
        np.maximum(self.maximum, other.maximum, out=self.maximum)
        self.count += other.count
        self.updates.extend(other.updates)
        return self

    def summary(self):
        mean = self.total / self.count
        # Keep min <= mean <= max exact despite rounding in the sum.
        mean = np.clip(mean, self.minimum, self.maximum)
        t = self.template
        return RunEnsembleSummary(t.times, t.classes, t.states, mean, self.minimum.copy(),
                                  self.maximum.copy(), self.count, list(self.updates))


def _class_axis(g, granularity):
    if granularity == "global":
        return ("all",)
    names = tuple(g.labels)
    if granularity == "per-class-and-state":
        return names + ("all",)
    return names


def _snapshot(counts, zcounts, sizes, in_totals, granularity):
    """Fractions per class (rows as chosen by the granularity)."""
    if granularity == "global":
        counts = counts.sum(axis=0, keepdims=True)
        zcounts = zcounts.sum(axis=0, keepdims=True)
        sizes = sizes.sum(keepdims=True)
        in_totals = in_totals.sum(keepdims=True)
    elif granularity == "per-class-and-state":
        counts = np.vstack([counts, counts.sum(axis=0)])
        zcounts = np.vstack([zcounts, zcounts.sum(axis=0)])
        sizes = np.append(sizes, sizes.sum())
        in_totals = np.append(in_totals, in_totals.sum())
    frac = np.zeros(counts.shape)
    np.divide(counts, sizes[:, None], out=frac, where=sizes[:, None] > 0)
    zeta = np.full(zcounts.shape, np.nan)
    np.divide(zcounts, in_totals[:, None], out=zeta, where=in_totals[:, None] > 0)
    return frac, zeta


def _heavy_watchers(g, heavy):
    """CSR: for each node u, the heavy nodes with an edge into u (with multiplicity)."""
    tails = g.in_tails
    heads = np.repeat(np.arange(g.n), np.diff(g.in_ptr))
    mask = heavy[tails]
    ptr = np.zeros(g.n + 1, dtype=np.int64)
    np.cumsum(np.bincount(heads[mask], minlength=g.n), out=ptr[1:])
    return ptr, tails[mask]


def run_asd(g, kernel, initial_states, cfg, run_index=0, rng=None):
    """
    One exact realisation on [0, cfg.horizon].

    The grid value at time tau is the configuration just before any event at
    tau (left-continuous sampling).
    """
    cfg.validate()
    X = len(kernel.states)
    A = len(g.labels)
    n = g.n
    states = np.array(initial_states, dtype=np.int64)
    if states.shape != (n,):
        raise InvalidSpec(f"expected {n} initial states, got {states.shape}")
    if n and (states.min() < 0 or states.max() >= X):
        raise InvalidSpec("initial state index out of range")
    if rng is None:
        rng = make_rng(cfg.seed, "run", run_index)

    grid = cfg.grid()
    label_of = np.asarray(g.label_of)
    in_total = np.asarray(g.in_degree_vecs).sum(axis=1)
    counts = np.zeros((A, X))
    zcounts = np.zeros((A, X))
    np.add.at(counts, (label_of, states), 1)
    np.add.at(zcounts, (label_of, states), in_total)
    sizes = counts.sum(axis=1)
    in_totals = zcounts.sum(axis=1)

    C = len(_class_axis(g, cfg.granularity))
    fractions = np.empty((len(grid), C, X))
    zeta = np.empty((len(grid), C, X))

    out_ptr = g.out_ptr
    out_heads = g.out_heads
    out_deg = np.diff(out_ptr)
    heavy = out_deg >= HEAVY_DEGREE
    heavy_xi = {}
    for v in np.flatnonzero(heavy).tolist():
        heads = out_heads[out_ptr[v]:out_ptr[v + 1]]
        heavy_xi[v] = np.bincount(label_of[heads] * X + states[heads], minlength=A * X)
    watch_ptr, watch_nodes = _heavy_watchers(g, heavy)
    @functools.lru_cache(maxsize=KERNEL_CACHE_SIZE)
    def cumulative(a, xi_bytes):
        xi = np.frombuffer(xi_bytes, dtype=np.intp).reshape(A, X)
        return np.cumsum(kernel.probabilities(a, xi))


    horizon = cfg.horizon
    rate = cfg.gamma * n
    t = 0.0
    j = 0
    updates = 0
    buf_i = _DRAW_BATCH
    while True:
        if rate > 0:
            if buf_i == _DRAW_BATCH:
                waits = rng.exponential(1.0 / rate, size=_DRAW_BATCH)
                picks = rng.integers(n, size=_DRAW_BATCH)
                uniforms = rng.random(_DRAW_BATCH)
                buf_i = 0
            t_next = t + waits[buf_i]
        else:
            t_next = np.inf
        while j < len(grid) and grid[j] <= t_next:
            fractions[j], zeta[j] = _snapshot(counts, zcounts, sizes, in_totals, cfg.granularity)
            j += 1
        if t_next > horizon:
            break
        t = t_next
        v = int(picks[buf_i])
        u = uniforms[buf_i]
        buf_i += 1
        updates += 1

        if heavy[v]:
            xi = heavy_xi[v]
        else:
            heads = out_heads[out_ptr[v]:out_ptr[v + 1]]
            xi = np.bincount(label_of[heads] * X + states[heads], minlength=A * X)
        a = int(label_of[v])
        cum = cumulative(a, xi.astype(np.intp, copy=False).tobytes())
        new = min(int(np.searchsorted(cum, u, side="right")), X - 1)
        old = int(states[v])
        if new == old:
            continue
        states[v] = new
        counts[a, old] -= 1
        counts[a, new] += 1
        zcounts[a, old] -= in_total[v]
        zcounts[a, new] += in_total[v]
        for w in watch_nodes[watch_ptr[v]:watch_ptr[v + 1]].tolist():
            cell = heavy_xi[w]
            cell[a * X + old] -= 1
            cell[a * X + new] += 1

    return TrajectorySample(grid, _class_axis(g, cfg.granularity), tuple(kernel.states),
                            fractions, zeta, run_id=run_index, updates=updates)


def _substream_index(cfg, run_index):
    return run_index if cfg.fresh_seeds else 0


def graph_seed(seed, index=0):
    """Seed of the index-th graph drawn for an experiment seed."""
    return int(make_rng(seed, "graph", index).integers(2 ** 62))


def _graph_seed(cfg, run_index):
    return graph_seed(cfg.seed, run_index if cfg.fresh_graph else 0)


def _ensemble_run(job):
    source, kernel, rule, cfg, run_index = job
    g = source if isinstance(source, LabeledGraph) else source.build(_graph_seed(cfg, run_index))
    idx = _substream_index(cfg, run_index)
    initial = rule.draw(g, make_rng(cfg.seed, "init", idx))
    sample = run_asd(g, kernel, initial, cfg, run_index=run_index, rng=make_rng(cfg.seed, "run", idx))
    return sample


def run_ensemble(source, kernel, rule, cfg, workers=1, progress=False, keep_samples=False):
    """
    cfg.runs independent realisations, reduced to mean/min/max per grid point.

    `source` is a fixed LabeledGraph or a GraphRecipe (fresh graph per run
    when cfg.fresh_graph is set). Run i is reproducible from (cfg.seed, i).
    Returns (summary, samples) where samples is empty unless keep_samples.
    """
    cfg.validate()
    if not isinstance(source, (LabeledGraph, GraphRecipe)):
        raise InvalidSpec("ensemble source must be a LabeledGraph or a GraphRecipe")
    if isinstance(source, GraphRecipe) and not cfg.fresh_graph:
        source = source.build(_graph_seed(cfg, 0))
    jobs = [(source, kernel, rule, cfg, i) for i in range(cfg.runs)]
    acc = EnsembleAccumulator()
    samples = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_ensemble_run, jobs)
            for sample in tqdm(results, total=cfg.runs, desc="runs", disable=not progress):
                acc.add(sample)
                if keep_samples:
                    samples.append(sample)
    else:
        for job in tqdm(jobs, desc="runs", disable=not progress):
            sample = _ensemble_run(job)
            acc.add(sample)
            if keep_samples:
                samples.append(sample)
    logger.info("Finished %d runs, mean updates %.1f", acc.count, float(np.mean(acc.updates)))
    return acc.summary(), samples


# ---------------------------------------------------------------------------
# exact oracle

@dataclass
class ExactTransientResult:
    time: float
    marginals: np.ndarray
    expected_fractions: np.ndarray
    class_fractions: np.ndarray
    truncation_error: float
    state_space: int


def _initial_distribution(initial, n, X):
    initial = np.asarray(initial)
    if initial.ndim == 1:
        if initial.shape != (n,):
            raise InvalidSpec(f"expected {n} initial states")
        dist = np.zeros((n, X))
        dist[np.arange(n), initial.astype(np.int64)] = 1.0
        return dist
    if initial.shape != (n, X):
        raise InvalidSpec(f"expected an ({n}, {X}) array of per-node distributions")
    return initial.astype(float)


def generator_matrix(g, kernel, gamma=1.0):
    """
    Sparse generator of the chain on |X|^n configurations; configuration
    index c encodes node v's state as digit v in base |X|.
    """
    X = len(kernel.states)
    A = len(g.labels)
    n = g.n
    S = X ** n
    if S > MAX_EXACT_STATES:
        raise StateSpaceTooLarge(f"{X}^{n} = {S} configurations exceeds {MAX_EXACT_STATES}")
    index = np.arange(S, dtype=np.int64)
    place = X ** np.arange(n, dtype=np.int64)
    digits = (index[:, None] // place[None, :]) % X
    rows, cols, vals = [], [], []
    for v in range(n):
        xi = np.zeros((S, A, X), dtype=np.int64)
        for h in g.out_neighbors(v).tolist():
            xi[index, g.label_of[h], digits[:, h]] += 1
        uniq, inv = np.unique(xi.reshape(S, A * X), axis=0, return_inverse=True)
        probs = kernel.batch(int(g.label_of[v]), uniq.reshape(-1, A, X))[inv.reshape(-1)]
        for x in range(X):
            move = (digits[:, v] != x) & (probs[:, x] > 0)
            src = index[move]
            rows.append(src)
            cols.append(src + (x - digits[move, v]) * place[v])
            vals.append(gamma * probs[move, x])
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    off = sparse.csr_matrix((vals, (rows, cols)), shape=(S, S))
    diag = -np.asarray(off.sum(axis=1)).reshape(-1)
    return off + sparse.diags(diag), digits


def exact_transient(g, kernel, initial, t, tol=1e-10, gamma=1.0):
    """
    Law of the configuration at time t by uniformization.

    `initial` is either one state index per node or an (n, |X|) array of
    independent per-node distributions.
    """
    X = len(kernel.states)
    n = g.n
    if X ** n > MAX_EXACT_STATES:
        raise StateSpaceTooLarge(f"{X}^{n} configurations exceeds {MAX_EXACT_STATES}")
    dist = _initial_distribution(initial, n, X)
    Q, digits = generator_matrix(g, kernel, gamma)
    pi = np.ones(X ** n)
    for v in range(n):
        pi *= dist[v][digits[:, v]]

    lam = gamma * n
    error = 0.0
    if t > 0 and lam > 0 and Q.nnz:
        P = (sparse.identity(Q.shape[0], format="csr") + Q / lam).T.tocsr()
        mu = lam * t
        last = int(poisson.isf(tol, mu)) + 1
        weights = poisson.pmf(np.arange(last + 1), mu)
        error = float(poisson.sf(last, mu))
        term = pi
        acc = weights[0] * term
        for w in weights[1:]:
            term = P @ term
            acc += w * term
        pi = acc / acc.sum() if acc.sum() > 0 else acc

    marginals = np.stack([np.bincount(digits[:, v], weights=pi, minlength=X) for v in range(n)]) \
        if n else np.zeros((0, X))
    A = len(g.labels)
    class_fractions = np.zeros((A, X))
    for a in range(A):
        nodes = g.nodes_with_label(a)
        if len(nodes):
            class_fractions[a] = marginals[nodes].mean(axis=0)
    expected = marginals.mean(axis=0) if n else np.zeros(X)
    return ExactTransientResult(t, marginals, expected, class_fractions, error, X ** n)


# ---------------------------------------------------------------------------
# relevant neighbourhood

@dataclass
class ExplorationRecord:
    """
    Relevant neighbourhood N_t of a root: every node activated by time t,
    the explored ones (timer expired by t), and the out-edges of explored
    nodes.
    """
    root: int
    t: float
    nodes: np.ndarray
    activation_times: np.ndarray
    explored: np.ndarray
    edges: np.ndarray
    edge_class_counts: np.ndarray

    @property
    def node_count(self):
        return len(self.nodes)


def explore_relevant_neighborhood(g, v, t, seed=0, root_timer=None, rng=None):
    """
    Forward exploration from v: each activated node runs an Exp(1) timer;
    when it expires (before t) its neutral out-neighbours become active.
    """
    if not 0 <= v < g.n:
        raise InvalidSpec(f"node {v} not in graph")
    if rng is None:
        rng = make_rng(seed, "explore", v)
    first = float(root_timer) if root_timer is not None else rng.exponential()
    activated = {v: 0.0}
    order = [v]
    explored = []
    edges = []
    heap = [(first, v)]
    while heap:
        expiry, u = heapq.heappop(heap)
        if expiry > t:
            break
        explored.append(u)
        for h in g.out_neighbors(u).tolist():
            edges.append((u, h))
            if h not in activated:
                activated[h] = expiry
                order.append(h)
                heapq.heappush(heap, (expiry + rng.exponential(), h))
    A = len(g.labels)
    edge_arr = np.array(edges, dtype=np.int64).reshape(-1, 2)
    counts = np.zeros((A, A), dtype=np.int64)
    if len(edge_arr):
        np.add.at(counts, (g.label_of[edge_arr[:, 0]], g.label_of[edge_arr[:, 1]]), 1)
    return ExplorationRecord(
        root=v, t=t,
        nodes=np.array(order, dtype=np.int64),
        activation_times=np.array([activated[x] for x in order]),
        explored=np.array(explored, dtype=np.int64),
        edges=edge_arr,
        edge_class_counts=counts,
    )


def estimate_neighborhood_moments(g, t, powers=(1, 2, 3), trials=1000, seed=0,
                                  weighting="uniform", progress=False):
    """
    Monte Carlo E[V_t^s] over roots chosen uniformly or proportionally to
    in-degree. Returns {s: (mean, standard error)}.
    """
    if weighting == "uniform":
        weights = None
    elif weighting == "in-degree":
        d = np.asarray(g.in_degree_vecs).sum(axis=1).astype(float)
        if d.sum() == 0:
            raise InvalidSpec("in-degree weighting on a graph without edges")
        weights = d / d.sum()
    else:
        raise InvalidSpec(f"unknown root weighting {weighting!r}")
    pick = make_rng(seed, "moment-roots")
    roots = pick.choice(g.n, size=trials, p=weights)
    sizes = np.empty(trials)
    for i in tqdm(range(trials), desc="explore", disable=not progress):
        rec = explore_relevant_neighborhood(g, int(roots[i]), t, rng=make_rng(seed, "moment", i))
        sizes[i] = rec.node_count
    out = {}
    for s in powers:
        vals = sizes ** s
        se = float(vals.std(ddof=1) / np.sqrt(trials)) if trials > 1 else float("nan")
        out[s] = (float(vals.mean()), se)
    return out


def initial_bias(g, kernel, states, target, label=None):
    """
    Expected fraction of (label-`label`) nodes that would adopt `target` if
    they updated against the configuration `states`.
    """
    X = len(kernel.states)
    A = len(g.labels)
    nodes = np.arange(g.n) if label is None else g.nodes_with_label(label)
    if len(nodes) == 0:
        return 0.0
    states = np.asarray(states, dtype=np.int64)
    total = 0.0
    for v in nodes.tolist():
        heads = g.out_neighbors(v)
        xi = np.bincount(g.label_of[heads] * X + states[heads], minlength=A * X).reshape(A, X)
        total += kernel.probabilities(int(g.label_of[v]), xi)[target]
    return total / len(nodes)
