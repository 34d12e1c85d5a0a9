"""
Truncated branching trees, the coupled graph/tree exploration and numeric
evaluation of the approximation bounds.

Conventions: W[b, a] counts tree edges from label-b to label-a nodes and
l[b, a] = n * density[b, a] is the number of b -> a edges in the graph.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, poisson
from tqdm import tqdm

from .errors import InvalidSpec, InvalidStep, TreeBudgetExceeded
from .graph import LabeledGraph, extract_statistics, sample_configuration_model
from .meanfield import MeanFieldSystem
from .utils import check_probability_vector, make_rng, total_variation

logger = logging.getLogger(__name__)

TREE_BUDGET = 10 ** 7
MAX_GW_DEPTH = 12
ROOT_WEIGHTINGS = ("uniform", "in-degree")


# ---------------------------------------------------------------------------
# truncated branching tree

@dataclass
class TruncatedTree:
    """
    Rooted labeled tree grown up to time t.

    parent[0] == -1 is the root; activation is NaN for unexplored nodes.
    """
    labels: tuple
    t: float
    parent: np.ndarray
    label: np.ndarray
    activation: np.ndarray
    edge_counts: np.ndarray

    @property
    def node_count(self):
        return len(self.parent)

    @property
    def edge_count(self):
        return int(self.edge_counts.sum())

    def explored(self):
        return np.flatnonzero(~np.isnan(self.activation))

    def depth(self):
        depth = np.zeros(self.node_count, dtype=np.int64)
        # parents always precede children
        for v in range(1, self.node_count):
            depth[v] = depth[self.parent[v]] + 1
        return depth

    def lines(self):
        yield f"# t: {self.t} nodes: {self.node_count} edges: {self.edge_count}"
        for v in range(self.node_count):
            act = "unexplored" if np.isnan(self.activation[v]) else repr(float(self.activation[v]))
            yield f"{v} {int(self.parent[v])} {self.labels[self.label[v]]} {act}"


def write_tree(tree, path):
    """Parent-array dump: `node parent label activation` per line."""
    with open(path, "w") as f:
        for line in tree.lines():
            f.write(line + "\n")


class _TreeSampler:
    """Per-statistics lookup tables for drawing root and child cells."""

    def __init__(self, stats, root="uniform"):
        if root not in ROOT_WEIGHTINGS:
            raise InvalidSpec(f"unknown root weighting {root!r}")
        self.stats = stats
        self.A = stats.n_labels
        weights = stats.p if root == "uniform" else stats.p * stats.d.sum(axis=1)
        if weights.sum() <= 0:
            raise InvalidSpec("statistics give no root with positive weight")
        self.root_cum = np.cumsum(weights)
        self.child = {}
        for a in range(self.A):
            for b in range(self.A):
                idx, probs = stats.child_cells(a, b)
                if len(idx):
                    self.child[(a, b)] = (idx, np.cumsum(probs))

    @staticmethod
    def _pick(cum, u):
        return np.minimum(np.searchsorted(cum, u * cum[-1], side="right"), len(cum) - 1)

    def sample(self, t, rng, root_timer=None, budget=TREE_BUDGET):
        stats = self.stats
        root_cell = int(self._pick(self.root_cum, rng.random()))
        parent = [-1]
        label = [int(stats.a[root_cell])]
        cell = [root_cell]
        activation = [math.nan]
        W = np.zeros((self.A, self.A), dtype=np.int64)
        unexplored = [0]
        clock = float(root_timer) if root_timer is not None else rng.exponential()

        def partial():
            return TruncatedTree(tuple(stats.labels), t, np.array(parent), np.array(label),
                                 np.array(activation), W.copy())

        while unexplored and clock <= t:
            i = int(rng.integers(len(unexplored))) if len(unexplored) > 1 else 0
            u = unexplored[i]
            unexplored[i] = unexplored[-1]
            unexplored.pop()
            activation[u] = clock
            b = label[u]
            k = stats.k[cell[u]]
            for a in range(self.A):
                count = int(k[a])
                if count == 0:
                    continue
                if len(parent) + count > budget:
                    raise TreeBudgetExceeded(
                        f"tree passed {budget} nodes before t={t}", partial=partial())
                table = self.child.get((a, b))
                if table is None:
                    raise InvalidSpec(
                        f"label {stats.labels[b]} has out-edges to {stats.labels[a]} but no such in-edges")
                idx, cum = table
                drawn = idx[self._pick(cum, rng.random(count))]
                first = len(parent)
                parent.extend([u] * count)
                label.extend([a] * count)
                cell.extend(drawn.tolist())
                activation.extend([math.nan] * count)
                unexplored.extend(range(first, first + count))
                W[b, a] += count
            if not unexplored:
                break
            clock += rng.exponential(1.0 / len(unexplored))
        return partial()


def sample_truncated_tree(stats, t, seed=0, root_timer=None, root="uniform", budget=TREE_BUDGET, rng=None):
    """
    Grow the labeled branching tree up to time t.

    The root's cell comes from p_{d,k,a} (or its in-degree weighted version),
    every other node's from q^{parent}_{d,k|label}. Explorations happen at the
    jumps of a clock with rate equal to the number of unexplored nodes, each
    time at a uniformly chosen unexplored node.
    """
    if t < 0:
        raise InvalidSpec(f"t must be non-negative, got {t}")
    if rng is None:
        rng = make_rng(seed, "tree")
    return _TreeSampler(stats, root).sample(t, rng, root_timer, budget)


def wilson_interval(successes, trials, confidence=0.95):
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return 0.0, 1.0
    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class TreeTailSample:
    """Monte Carlo samples of per-pair edge counts and node counts of T_t."""
    labels: tuple
    t: float
    edge_counts: np.ndarray
    node_counts: np.ndarray
    root: str = "uniform"

    @property
    def trials(self):
        return len(self.node_counts)

    def tail(self, b, a, x, confidence=0.95):
        """(estimate, low, high) of P(W[b, a] > x)."""
        hits = int((self.edge_counts[:, b, a] > x).sum())
        lo, hi = wilson_interval(hits, self.trials, confidence)
        return hits / self.trials, lo, hi

    def node_tail(self, x, confidence=0.95):
        hits = int((self.node_counts > x).sum())
        lo, hi = wilson_interval(hits, self.trials, confidence)
        return hits / self.trials, lo, hi

    def moment(self, s):
        """(mean, standard error) of node_count ** s."""
        vals = self.node_counts.astype(float) ** s
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.nan
        return float(vals.mean()), se


def estimate_tree_tails(stats, t, trials=10000, seed=0, root="uniform", progress=False):
    sampler = _TreeSampler(stats, root)
    A = stats.n_labels
    W = np.zeros((trials, A, A), dtype=np.int64)
    nodes = np.zeros(trials, dtype=np.int64)
    for i in tqdm(range(trials), desc="trees", disable=not progress):
        tree = sampler.sample(t, make_rng(seed, "tree", i))
        W[i] = tree.edge_counts
        nodes[i] = tree.node_count
    return TreeTailSample(tuple(stats.labels), t, W, nodes, root)


# ---------------------------------------------------------------------------
# coupled exploration of the graph neighbourhood and the tree

class _PairStubs:
    """
    Lazily drawn stub sequences of one label pair: L uniform with
    replacement, M without replacement, M_h = L_h unless L_h was already
    taken by M, in which case M_h is uniform over the stubs still free.
    """

    def __init__(self, owners, rng):
        self.owners = owners
        self.size = len(owners)
        self.rng = rng
        self.L = []
        self.M = []
        self._used = set()

    def l(self, h):
        while len(self.L) <= h:
            self.L.append(int(self.rng.integers(self.size)))
        return self.L[h]

    def m(self, h):
        while len(self.M) <= h:
            i = len(self.M)
            if i >= self.size:
                raise IndexError(f"stub {i} requested from a pair with {self.size} stubs")
            stub = self.l(i)
            if stub in self._used:
                stub = self._redraw()
            self._used.add(stub)
            self.M.append(stub)
        return self.M[h]

    def _redraw(self):
        if 2 * len(self._used) < self.size:
            while True:
                stub = int(self.rng.integers(self.size))
                if stub not in self._used:
                    return stub
        free = np.setdiff1d(np.arange(self.size), np.fromiter(self._used, dtype=np.int64))
        return int(free[self.rng.integers(len(free))])

    def sequences_agree(self, count):
        if count > self.size:
            return False
        return all(self.l(h) == self.m(h) for h in range(count))


@dataclass
class CouplingTrace:
    """
    One coupled generation of the relevant neighbourhood N_t (graph side) and
    the tree T_t. `replica[u]` is the graph node tree node u copies;
    `records` holds (iteration, graph time, graph node, tree time, replica).
    """
    root: int
    t: float
    graph_nodes: int
    tree_nodes: int
    graph_edges: np.ndarray
    tree_edges: np.ndarray
    replica: np.ndarray
    tree_edge_counts: np.ndarray
    b1: bool
    b2: bool
    equal: bool
    diverged_at: int = None
    records: list = field(default_factory=list)


def run_coupling(g, t, seed=0, rng=None, root=None, budget=TREE_BUDGET):
    """
    Generate N_t and T_t together from a configuration-model graph.

    Only the graph's degree vectors are used: the b -> a in-stubs are the
    in-degree slots d_w[b] of label-a nodes w, and each out-stub is matched
    lazily (the graph side follows M, the tree side L). Both sides share the
    exploration clock and choice of node while their structures agree.
    """
    if rng is None:
        rng = make_rng(seed, "couple")
    A = len(g.labels)
    K = np.asarray(g.out_degree_vecs)
    D = np.asarray(g.in_degree_vecs)
    lab = np.asarray(g.label_of)
    stubs = {}
    for b in range(A):
        for a in range(A):
            members = g.nodes_with_label(a)
            owners = np.repeat(members, D[members, b])
            if len(owners):
                stubs[(b, a)] = _PairStubs(owners, rng)

    v0 = int(rng.integers(g.n)) if root is None else int(root)
    in_graph = {v0}
    g_unexp = [v0]
    g_edges = []
    g_h = np.zeros((A, A), dtype=np.int64)
    replica = [v0]
    t_unexp = [0]
    t_edges = []
    t_h = np.zeros((A, A), dtype=np.int64)

    clock = rng.exponential()
    t_clock = clock
    synced = True
    diverged_at = None
    records = []
    g_live = t_live = True
    i = 0
    while True:
        g_live = g_live and bool(g_unexp) and clock <= t
        t_live = t_live and bool(t_unexp) and t_clock <= t
        if not (g_live or t_live):
            break
        if synced:
            gi = ti = int(rng.integers(len(g_unexp)))
        else:
            gi = int(rng.integers(len(g_unexp))) if g_live else None
            ti = int(rng.integers(len(t_unexp))) if t_live else None

        g_new = []
        v = None
        if g_live:
            v = g_unexp[gi]
            g_unexp[gi] = g_unexp[-1]
            g_unexp.pop()
            b = lab[v]
            for a in range(A):
                for j in range(int(K[v, a])):
                    w = int(stubs[(b, a)].owners[stubs[(b, a)].m(int(g_h[b, a]) + j)])
                    g_edges.append((v, w))
                    fresh = w not in in_graph
                    if fresh:
                        in_graph.add(w)
                        g_unexp.append(w)
                    g_new.append(w if fresh else None)
                g_h[b, a] += K[v, a]

        t_new = []
        u = None
        if t_live:
            u = t_unexp[ti]
            t_unexp[ti] = t_unexp[-1]
            t_unexp.pop()
            wv = replica[u]
            b = lab[wv]
            for a in range(A):
                for j in range(int(K[wv, a])):
                    w = int(stubs[(b, a)].owners[stubs[(b, a)].l(int(t_h[b, a]) + j)])
                    node = len(replica)
                    if node >= budget:
                        raise TreeBudgetExceeded(f"coupled tree passed {budget} nodes")
                    replica.append(w)
                    t_unexp.append(node)
                    t_edges.append((u, node))
                    t_new.append(w)
                t_h[b, a] += K[wv, a]

        records.append((i, float(clock) if g_live else None, v,
                        float(t_clock) if t_live else None, None if u is None else replica[u]))
        if synced and g_new != t_new:
            synced = False
            diverged_at = i

        n_g = len(g_unexp)
        n_t = len(t_unexp)
        step = rng.exponential(1.0 / n_g) if (g_live and n_g) else math.inf
        clock += step
        if t_live and n_t:
            t_clock += step if (n_t == n_g and g_live) else rng.exponential(1.0 / n_t)
        else:
            t_clock = math.inf
        i += 1

    b1 = all(stubs[pair].sequences_agree(int(t_h[pair])) for pair in stubs if t_h[pair] > 0)
    b2 = True
    for a in range(A):
        targets = []
        for b in range(A):
            count = int(t_h[b, a])
            if count:
                seq = stubs[(b, a)]
                targets.extend(int(seq.owners[seq.l(h)]) for h in range(count))
        if len(set(targets)) != len(targets) or v0 in targets:
            b2 = False
            break

    return CouplingTrace(
        root=v0, t=t,
        graph_nodes=len(in_graph), tree_nodes=len(replica),
        graph_edges=np.array(g_edges, dtype=np.int64).reshape(-1, 2),
        tree_edges=np.array(t_edges, dtype=np.int64).reshape(-1, 2),
        replica=np.array(replica, dtype=np.int64),
        tree_edge_counts=t_h,
        b1=b1, b2=b2, equal=synced, diverged_at=diverged_at, records=records,
    )


# ---------------------------------------------------------------------------
# bound reports

@dataclass
class BoundTerm:
    term: str
    value: float
    detail: str = ""


@dataclass
class BoundReport:
    name: str
    value: float
    terms: list
    cuts: dict = None
    ci: tuple = None
    notes: dict = field(default_factory=dict)

    @property
    def dominant(self):
        return max(self.terms, key=lambda term: term.value).term if self.terms else None

    @property
    def vacuous(self):
        return self.value > 1

    def rows(self):
        yield {"term": self.name, "value": self.value, "detail": "total"}
        for term in self.terms:
            yield {"term": term.term, "value": term.value, "detail": term.detail}


def _degree_moments(stats):
    """E[d_b] under q^{b'}_{.|a}, indexed [b, b', a]."""
    A = stats.n_labels
    out = np.zeros((A, A, A))
    for a in range(A):
        for bp in range(A):
            idx, probs = stats.child_cells(a, bp)
            if len(idx):
                out[:, bp, a] = (stats.d[idx] * probs[:, None]).sum(axis=0)
    return out


def _cut_grid(l):
    top = max(1.0, float(np.max(l)) if np.size(l) else 1.0)
    return [float(2 ** j) for j in range(int(math.ceil(math.log2(top))) + 2)]


def topological_bound(stats, n, t, cuts="optimize", tails=None, trials=10000, seed=0,
                      form="general", conservative=True, confidence=0.95, max_sweeps=50):
    """
    Upper bound on P(N_t != T_t) from tree tails and stub-collision terms.

    For every (b, a) with b -> a edges and cut x = x[b, a]:

        F_{W[b,a]}(x) + x (x + 1) / 2 * E_{q^b|a}[d_b] / l[b, a]
                      + sum_{b' != b} x x[b', a] E_{q^b'|a}[d_b] / l[b, a]

    form="classic" (single label) uses the node-count tail and
    E_q[d] x (x + 1) / (2 l). With cuts="optimize" every cut runs over
    {1, 2, 4, ...} by coordinate descent. Tail terms use the upper Wilson
    limit when `conservative`.
    """
    if form not in ("general", "classic"):
        raise InvalidSpec(f"unknown bound form {form!r}")
    A = stats.n_labels
    if form == "classic" and A != 1:
        raise InvalidSpec("the classic form needs a single label")
    if tails is None:
        tails = estimate_tree_tails(stats, t, trials, seed)
    l = stats.edge_counts(n)
    moments = _degree_moments(stats)
    pairs = [(b, a) for b in range(A) for a in range(A) if l[b, a] > 0]
    labels = stats.labels
    if not pairs:
        return BoundReport("topological", 0.0, [], {}, (0.0, 0.0), {"form": form})

    def tail(b, a, x):
        if form == "classic":
            return tails.node_tail(x, confidence)
        return tails.tail(b, a, x, confidence)

    def evaluate(x):
        terms = []
        low = high = point = 0.0
        for b, a in pairs:
            name = f"{labels[b]}->{labels[a]}"
            est, lo, hi = tail(b, a, x[(b, a)])
            f_val = hi if conservative else est
            pairing = x[(b, a)] * (x[(b, a)] + 1) / 2.0 * moments[b, b, a] / l[b, a]
            cross = sum(x[(b, a)] * x[(bp, a)] * moments[b, bp, a] / l[b, a]
                        for bp in range(A) if bp != b and (bp, a) in x)
            terms.append(BoundTerm(f"tail {name}", f_val, f"x={x[(b, a)]:g} estimate={est:.6g}"))
            terms.append(BoundTerm(f"pairing {name}", pairing, f"l={l[b, a]:.6g}"))
            if A > 1:
                terms.append(BoundTerm(f"cross {name}", cross, ""))
            point += est + pairing + cross
            low += lo + pairing + cross
            high += hi + pairing + cross
        return (high if conservative else point), terms, (low, high)

    if cuts == "optimize":
        grid = _cut_grid(l)
        best_x, best_val = None, math.inf
        for xv in grid:
            x = {pair: xv for pair in pairs}
            val = evaluate(x)[0]
            if val < best_val:
                best_x, best_val = x, val
        for _ in range(max_sweeps):
            improved = False
            for pair in pairs:
                for xv in grid:
                    if xv == best_x[pair]:
                        continue
                    trial = dict(best_x)
                    trial[pair] = xv
                    val = evaluate(trial)[0]
                    if val < best_val - 1e-15:
                        best_x, best_val, improved = trial, val, True
            if not improved:
                break
        x = best_x
    elif isinstance(cuts, dict):
        x = {}
        for pair in pairs:
            key = (labels[pair[0]], labels[pair[1]])
            if pair in cuts:
                x[pair] = float(cuts[pair])
            elif key in cuts:
                x[pair] = float(cuts[key])
            else:
                raise InvalidSpec(f"no cut point for pair {key}")
    else:
        x = {pair: float(cuts) for pair in pairs}
    value, terms, ci = evaluate(x)
    if value > 1:
        logger.warning("Topological bound is vacuous at n=%d, t=%g: %.4g", n, t, value)
    cut_labels = {(labels[b], labels[a]): v for (b, a), v in x.items()}
    return BoundReport("topological", value, terms, cut_labels, ci,
                       {"form": form, "trials": tails.trials, "conservative": conservative})


@dataclass
class BoundInputs:
    """Parameters of the concentration bound; x defaults to n^(4/9)."""
    n: int
    t: float
    eta: float
    epsilon: float = 1.0
    s: float = 3.0
    x: float = None
    mean_degree: float = 1.0

    def validate(self):
        if self.n < 1:
            raise InvalidSpec("n must be positive")
        if self.t < 0:
            raise InvalidSpec("t must be non-negative")
        if not (self.eta > 0 and self.epsilon > 0):
            raise InvalidSpec("eta and epsilon must be positive")
        if self.s < 1:
            raise InvalidSpec("s must be at least 1")
        if self.x is None:
            self.x = float(self.n) ** (4.0 / 9.0)
        if not self.x > 0:
            raise InvalidSpec("x must be positive")
        if not self.mean_degree > 0:
            raise InvalidSpec("mean degree must be positive")
        return self


def concentration_bound(params, moment):
    """
    Upper bound on P(|b(t) - E b(t)| > eta n) as six separately reported terms.

    `moment` is E_v[V_t^s] for a root chosen proportionally to in-degree; the
    sum over nodes of in-degree times E[V^s] equals l times that moment.
    """
    p = params.validate()
    n, t, eta, eps, s, x, dbar = p.n, p.t, p.eta, p.epsilon, p.s, p.x, p.mean_degree
    l = n * dbar
    scale = 2.0 ** s / x ** s
    t1 = 0.0 if t == 0 else 4.0 * math.exp(-eta ** 2 * n / (1152.0 * (1 + eps) * t * x ** 2))
    t2 = (1 + 12.0 / eta) * (1 + eps) * t * n * scale * moment
    t3 = 2.0 * math.exp(-n * t * eps ** 2 / (2.0 * (1 + eps)))
    t4 = 2.0 * math.exp(-eta ** 2 * n / (288.0 * (t + eta / 12.0)))
    t5 = (1 + 4.0 / eta) * scale * l * moment
    t6 = 2.0 * math.exp(-eta ** 2 * n / (128.0 * dbar * x ** 2))
    terms = [
        BoundTerm("update-count", t1, f"x={x:.6g}"),
        BoundTerm("large-neighbourhood", t2, f"E[V^{s:g}]={moment:.6g}"),
        BoundTerm("clock-deviation", t3, f"epsilon={eps:g}"),
        BoundTerm("initial-state", t4, f"eta={eta:g}"),
        BoundTerm("in-degree-moment", t5, f"l={l:.6g}"),
        BoundTerm("graph-deviation", t6, f"mean_degree={dbar:.6g}"),
    ]
    value = sum(term.value for term in terms)
    report = BoundReport("concentration", value, terms, notes={"n": n, "t": t, "x": x, "s": s})
    if value > 1:
        logger.warning("Concentration bound is vacuous at n=%d, t=%g: %.4g (dominant: %s)",
                       n, t, value, report.dominant)
    return report


# ---------------------------------------------------------------------------
# ODE distance

@dataclass
class LipschitzEstimate:
    L: float
    M: float
    samples: int
    method: str = "sampled finite differences"


def estimate_lipschitz(system, samples=200, seed=0):
    """
    Sup-norm Lipschitz constants of phi(z) - z (L) and psi(z) (M), estimated
    as the largest difference quotient over random pairs of points of the
    product simplex at distances from 1e-3 to 1. This is a lower estimate.
    """
    rng = make_rng(seed, "lipschitz")
    X, A = system.X, system.A
    mask = system.defined
    if not mask.any():
        return LipschitzEstimate(0.0, 0.0, samples)
    z1 = np.transpose(rng.dirichlet(np.ones(X), size=(samples, A, A)), (0, 3, 1, 2))
    z3 = np.transpose(rng.dirichlet(np.ones(X), size=(samples, A, A)), (0, 3, 1, 2))
    lam = 10.0 ** rng.uniform(-3.0, 0.0, size=samples)
    z2 = (1 - lam)[:, None, None, None] * z1 + lam[:, None, None, None] * z3
    z2[:, :, ~mask] = z1[:, :, ~mask]
    y0 = np.zeros((samples, X, A))
    phi1, psi1 = system.evaluate(z1, y0)
    phi2, psi2 = system.evaluate(z2, y0)
    dist = np.abs(z1 - z2)[:, :, mask].reshape(samples, -1).max(axis=1)
    f_gap = np.abs((phi1 - z1) - (phi2 - z2))[:, :, mask].reshape(samples, -1).max(axis=1)
    psi_gap = np.abs(psi1 - psi2).reshape(samples, -1).max(axis=1)
    ok = dist > 0
    L = float((f_gap[ok] / dist[ok]).max()) if ok.any() else 0.0
    M = float((psi_gap[ok] / dist[ok]).max()) if ok.any() else 0.0
    return LipschitzEstimate(L, M, samples)


def _law(rows, probs):
    return {tuple(r): float(p) for r, p in zip(rows.tolist(), probs)}


def degree_law_distances(stats_n, stats_limit):
    """(max TV between q laws over label pairs, max TV between p_{k|a} over labels)."""
    if tuple(stats_n.labels) != tuple(stats_limit.labels):
        raise InvalidSpec("statistics use different label sets")
    A = stats_n.n_labels
    tv_q = 0.0
    tv_p = 0.0
    for a in range(A):
        tv_p = max(tv_p, total_variation(_law(*stats_n.root_distribution(a)),
                                         _law(*stats_limit.root_distribution(a))))
        for b in range(A):
            q_n = _law(*stats_n.child_distribution(a, b))
            q_l = _law(*stats_limit.child_distribution(a, b))
            if q_n or q_l:
                tv_q = max(tv_q, total_variation(q_n, q_l))
    return tv_q, tv_p


@dataclass
class OdeDistanceBound:
    zeta_bound: float
    y_bound: float
    tv_q: float
    tv_p: float
    L: float
    M: float
    delta: float
    m: int
    lipschitz_method: str

    @property
    def horizon(self):
        return self.delta * self.m

    def rows(self):
        yield {"term": "zeta", "value": self.zeta_bound, "detail": f"sup over [0, {self.horizon:g}]"}
        yield {"term": "y", "value": self.y_bound, "detail": f"sup over [0, {self.horizon:g}]"}
        yield {"term": "tv_q", "value": self.tv_q, "detail": ""}
        yield {"term": "tv_p", "value": self.tv_p, "detail": ""}
        yield {"term": "L", "value": self.L, "detail": self.lipschitz_method}
        yield {"term": "M", "value": self.M, "detail": self.lipschitz_method}


def ode_distance_bound(stats_n, stats_limit, zeta_gap, y_gap=0.0, L=None, M=None, delta=0.01, m=100,
                       kernel=None, samples=200, seed=0):
    """
    Sup-norm distance between the ODE solutions for two sets of statistics
    on [0, m * delta], from the initial gaps, the TV distances between
    degree laws and the Lipschitz constants L (phi - z) and M (psi).
    Missing constants are estimated on the limit system.
    """
    method = "given"
    if L is None or M is None:
        if kernel is None:
            raise InvalidSpec("a kernel is needed to estimate Lipschitz constants")
        est = estimate_lipschitz(MeanFieldSystem(stats_limit, kernel), samples, seed)
        method = est.method
        L = est.L if L is None else L
        M = est.M if M is None else M
    if delta <= 0 or m < 0:
        raise InvalidStep("step must be positive and the step count non-negative")
    if delta * L >= 1:
        raise InvalidStep(f"step {delta} is not below 1/L = {1.0 / L:.6g}")
    if delta >= 1:
        raise InvalidStep(f"step {delta} must be below 1")
    tv_q, tv_p = degree_law_distances(stats_n, stats_limit)
    grow = (1 - delta * L) ** (-m)
    forcing = (grow - 1) / L if L > 0 else m * delta
    zeta_bound = zeta_gap * grow + forcing * tv_q
    grow_y = (1 - delta) ** (-m)
    y_bound = y_gap * grow_y + (grow_y - 1) * (M * zeta_bound + tv_p)
    return OdeDistanceBound(zeta_bound, y_bound, tv_q, tv_p, L, M, delta, m, method)


# ---------------------------------------------------------------------------
# Galton-Watson moments and depth

def poisson_offspring(mean, tail=1e-12):
    """Poisson(mean) offspring law cut where the upper tail drops below `tail`."""
    top = int(poisson.isf(tail, mean)) + 1
    pmf = poisson.pmf(np.arange(top + 1), mean)
    return pmf / pmf.sum()


def _offspring_pmf(offspring):
    if isinstance(offspring, dict):
        top = max(int(k) for k in offspring)
        pmf = np.zeros(top + 1)
        for k, p in offspring.items():
            pmf[int(k)] = p
    else:
        pmf = np.asarray(offspring, dtype=float)
    return check_probability_vector(pmf, "offspring law", tol=1e-9)


@dataclass
class GwMomentRow:
    depth: int
    mean: float
    ci_low: float
    ci_high: float
    envelope: float
    ratio: float


@dataclass
class GwMomentProbe:
    s: int
    mu1: float
    mu_s: float
    trials: int
    rows: list

    def csv_rows(self):
        for r in self.rows:
            yield {"depth": r.depth, "mean": r.mean, "ci_low": r.ci_low, "ci_high": r.ci_high,
                   "envelope": r.envelope, "ratio": r.ratio}


def gw_moment_probe(offspring, h, s=1, trials=10000, seed=0, confidence=0.95):
    """
    Monte Carlo E[N_j^s] for j = 0..h, N_j the total size of a Galton-Watson
    tree up to generation j, next to the envelope mu_s * mu_1^(s (j - 1)).
    """
    if s not in (1, 2, 3):
        raise InvalidSpec(f"moment order must be 1, 2 or 3, got {s}")
    if not 0 <= h <= MAX_GW_DEPTH:
        raise InvalidSpec(f"depth must be in [0, {MAX_GW_DEPTH}], got {h}")
    pmf = _offspring_pmf(offspring)
    support = np.arange(len(pmf))
    mu1 = float((support * pmf).sum())
    mu_s = float((support.astype(float) ** s * pmf).sum())
    z = float(norm.ppf(0.5 + confidence / 2.0))
    rng = make_rng(seed, "gw")
    generation = np.ones(trials, dtype=np.int64)
    total = np.ones(trials, dtype=np.int64)
    rows = []
    for depth in range(h + 1):
        if depth > 0:
            generation = rng.multinomial(generation, pmf) @ support
            total += generation
        vals = total.astype(float) ** s
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
        envelope = mu_s * mu1 ** (s * (depth - 1)) if mu1 > 0 else 0.0
        ratio = mean / envelope if envelope > 0 else math.nan
        rows.append(GwMomentRow(depth, mean, mean - z * se, mean + z * se, envelope, ratio))
    return GwMomentProbe(s, mu1, mu_s, trials, rows)


def depth_tail(t, h):
    """
    (P(Poisson(t) >= h), (e t / h)^h capped at 1): the chance that a fixed
    root path of T_t reaches depth h, exactly and by the Stirling bound.
    """
    if h <= 0:
        return 1.0, 1.0
    exact = float(poisson.sf(h - 1, t))
    bound = min(1.0, (math.e * t / h) ** h)
    return exact, bound


# ---------------------------------------------------------------------------
# empirical coupling failure rate

def coupling_rate(source, n_values, t, traces=1000, seed=0, with_bound=True, tails=None,
                  tail_trials=10000, confidence=0.95, progress=False):
    """
    Empirical P(N_t != T_t) with a Wilson interval for each n, next to the
    topological bound. `source` is NodeStatistics (one configuration-model
    degree sequence per n, fresh root and matching per trace) or a fixed
    LabeledGraph (its own n).
    """
    if isinstance(source, LabeledGraph):
        stats = extract_statistics(source)
        graphs = [(source.n, source)]
    else:
        stats = source
        graphs = [(int(n), None) for n in n_values]
    if with_bound and tails is None:
        tails = estimate_tree_tails(stats, t, tail_trials, seed)
    rows = []
    for n, g in graphs:
        if g is None:
            g = sample_configuration_model(stats, n, seed)
        unequal = violations = 0
        for i in tqdm(range(traces), desc=f"couple n={n}", disable=not progress):
            trace = run_coupling(g, t, rng=make_rng(seed, "couple", n, i))
            if not trace.equal:
                unequal += 1
                if trace.b1 and trace.b2:
                    violations += 1
        lo, hi = wilson_interval(unequal, traces, confidence)
        bound = topological_bound(stats, n, t, "optimize", tails=tails).value if with_bound else math.nan
        if violations:
            logger.warning("n=%d: %d traces with B1 and B2 but unequal structures", n, violations)
        rows.append({"n": n, "traces": traces, "unequal": unequal, "rate": unequal / traces,
                     "ci_low": lo, "ci_high": hi, "b1b2_violations": violations, "bound": bound})
    return rows
