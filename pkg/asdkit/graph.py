"""
Labeled directed multigraphs, their ensemble statistics and generators.

Conventions: for a node v, the out-degree vector k_v[a] counts out-neighbours
with label a and the in-degree vector d_v[a] counts in-neighbours (edge tails)
with label a. l[a, a'] is the number of edges from class a to class a'.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import multinomial

from .errors import InvalidDistribution, InvalidSpec, ParseError, UnbalancedStatistics
from .utils import check_probability_vector, compositions, largest_remainder, make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelSet:
    labels: tuple

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if not labels:
            raise InvalidSpec("label set must not be empty")
        if len(set(labels)) != len(labels):
            raise InvalidSpec(f"duplicate labels in {labels}")
        object.__setattr__(self, "labels", labels)

    def index(self, label):
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise InvalidSpec(f"unknown label {label!r}; known: {list(self.labels)}") from None

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __getitem__(self, i):
        return self.labels[i]


SINGLE_LABEL = LabelSet(("0",))


def _frozen(arr):
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


def _csr(keys, values, n):
    order = np.argsort(keys, kind="stable")
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n), out=ptr[1:])
    return ptr, values[order]


class LabeledGraph:
    """
    Immutable directed multigraph with node labels.

    Adjacency is stored as CSR by tail (out-edges) plus a reverse CSR by head.
    Self-loops and parallel edges are kept.
    """

    def __init__(self, labels, label_of, tails, heads, node_ids=None):
        self.labels = labels if isinstance(labels, LabelSet) else LabelSet(tuple(labels))
        label_of = np.asarray(label_of, dtype=np.int64)
        tails = np.asarray(tails, dtype=np.int64)
        heads = np.asarray(heads, dtype=np.int64)
        n = len(label_of)
        if tails.shape != heads.shape:
            raise ValueError("tails and heads differ in length")
        if len(tails) and (tails.min() < 0 or heads.min() < 0 or max(tails.max(), heads.max()) >= n):
            raise ValueError("edge endpoint out of range")
        if n and (label_of.min() < 0 or label_of.max() >= len(self.labels)):
            raise ValueError("label index out of range")

        self.n = n
        self.label_of = _frozen(label_of)
        out_ptr, out_heads = _csr(tails, heads, n)
        in_ptr, in_tails = _csr(heads, tails, n)
        self.out_ptr = _frozen(out_ptr)
        self.out_heads = _frozen(out_heads)
        self.in_ptr = _frozen(in_ptr)
        self.in_tails = _frozen(in_tails)

        A = len(self.labels)
        out_deg = np.zeros((n, A), dtype=np.int64)
        in_deg = np.zeros((n, A), dtype=np.int64)
        np.add.at(out_deg, (tails, label_of[heads]), 1)
        np.add.at(in_deg, (heads, label_of[tails]), 1)
        self.out_degree_vecs = _frozen(out_deg)
        self.in_degree_vecs = _frozen(in_deg)
        self.node_ids = _frozen(np.arange(n) if node_ids is None else np.asarray(node_ids))

    @property
    def edge_count(self):
        return len(self.out_heads)

    def out_neighbors(self, v):
        return self.out_heads[self.out_ptr[v]:self.out_ptr[v + 1]]

    def in_neighbors(self, v):
        return self.in_tails[self.in_ptr[v]:self.in_ptr[v + 1]]

    def out_degree_vec(self, v):
        return self.out_degree_vecs[v]

    def in_degree_vec(self, v):
        return self.in_degree_vecs[v]

    def edges(self):
        """(tails, heads) arrays in out-CSR order."""
        tails = np.repeat(np.arange(self.n), np.diff(self.out_ptr))
        return tails, self.out_heads

    def edge_class_counts(self):
        """|A| x |A| matrix l[a, a'] of edges from class a to class a'."""
        A = len(self.labels)
        tails, heads = self.edges()
        counts = np.zeros((A, A), dtype=np.int64)
        np.add.at(counts, (self.label_of[tails], self.label_of[heads]), 1)
        return counts

    def nodes_with_label(self, a):
        return np.flatnonzero(self.label_of == a)

    def __repr__(self):
        return f"LabeledGraph(n={self.n}, edges={self.edge_count}, labels={list(self.labels)})"


class NodeStatistics:
    """
    Joint law p_{d,k,a} of (in-degree vector, out-degree vector, label) of a
    uniformly chosen node, plus the initial-state conditionals p_{s|a}.

    Cells are stored as parallel arrays: d (C x A), k (C x A), a (C,), p (C,).
    """

    def __init__(self, labels, d, k, a, p, states=(), p_s_given_a=None, check=True):
        self.labels = labels if isinstance(labels, LabelSet) else LabelSet(tuple(labels))
        A = len(self.labels)
        self.d = np.asarray(d, dtype=np.int64).reshape(-1, A)
        self.k = np.asarray(k, dtype=np.int64).reshape(-1, A)
        self.a = np.asarray(a, dtype=np.int64).reshape(-1)
        self.p = np.asarray(p, dtype=float).reshape(-1)
        self.states = tuple(str(s) for s in states)
        if p_s_given_a is None:
            self.p_s_given_a = None
        else:
            self.p_s_given_a = np.asarray(p_s_given_a, dtype=float).reshape(A, len(self.states))
        if check:
            self.validate()

    def validate(self):
        C = len(self.p)
        if not (len(self.d) == len(self.k) == len(self.a) == C):
            raise InvalidDistribution("cell arrays differ in length")
        if np.any(self.d < 0) or np.any(self.k < 0):
            raise InvalidDistribution("negative degree in statistics")
        if C and (self.a.min() < 0 or self.a.max() >= len(self.labels)):
            raise InvalidDistribution("cell label out of range")
        check_probability_vector(self.p, "p_{d,k,a}")
        if self.p_s_given_a is not None:
            for i, label in enumerate(self.labels):
                check_probability_vector(self.p_s_given_a[i], f"p_(s|{label})")

    @property
    def n_labels(self):
        return len(self.labels)

    def p_a(self):
        return np.bincount(self.a, weights=self.p, minlength=self.n_labels)

    def density(self):
        """
        Per-node edge density m[a, a'] = l[a, a'] / n, counted from in-degrees.
        """
        A = self.n_labels
        m = np.zeros((A, A))
        for a2 in range(A):
            sel = self.a == a2
            m[:, a2] = (self.d[sel] * self.p[sel, None]).sum(axis=0)
        return m

    def density_from_out(self):
        A = self.n_labels
        m = np.zeros((A, A))
        for a in range(A):
            sel = self.a == a
            m[a, :] = (self.k[sel] * self.p[sel, None]).sum(axis=0)
        return m

    def edge_counts(self, n):
        return n * self.density()

    def is_balanced(self, tol=1e-9):
        return bool(np.allclose(self.density(), self.density_from_out(), rtol=0, atol=tol))

    def mean_degree(self):
        return float(self.density().sum())

    def _collapse(self, rows, weights):
        if len(rows) == 0:
            return np.zeros((0, self.n_labels), dtype=np.int64), np.zeros(0)
        uniq, inv = np.unique(rows, axis=0, return_inverse=True)
        probs = np.bincount(inv.reshape(-1), weights=weights, minlength=len(uniq))
        return uniq, probs

    def root_distribution(self, a):
        """(k rows, probs) of p_{k|a}, aggregated over d."""
        sel = self.a == a
        mass = self.p[sel].sum()
        if mass <= 0:
            return self._collapse(np.zeros((0, self.n_labels), dtype=np.int64), np.zeros(0))
        return self._collapse(self.k[sel], self.p[sel] / mass)

    def root_joint(self):
        """(k rows, labels, probs) of p_{k,a}."""
        rows = np.column_stack([self.k, self.a])
        uniq, probs = self._collapse(rows, self.p)
        return uniq[:, :-1], uniq[:, -1], probs

    def has_edges(self, parent, child):
        return self.density()[parent, child] > 0

    def child_cells(self, child, parent):
        """
        Cell indices and probabilities of q^{parent}_{d,k|child}, the law of a
        label-`child` node reached along an edge from a label-`parent` node.
        """
        idx = np.flatnonzero(self.a == child)
        w = self.d[idx, parent] * self.p[idx]
        total = w.sum()
        if total <= 0:
            return idx[:0], np.zeros(0)
        keep = w > 0
        return idx[keep], w[keep] / total

    def child_distribution(self, child, parent):
        """(k rows, probs) of q^{parent}_{k|child}, aggregated over d."""
        idx, probs = self.child_cells(child, parent)
        return self._collapse(self.k[idx], probs)

    def truncated(self, mass=1 - 1e-8):
        """
        Cap every p_{.|a} at cumulative mass `mass` (cells ordered by total
        degree) and renormalise within each label.

        Returns (statistics, discarded mass per label).
        """
        keep = np.zeros(len(self.p), dtype=bool)
        discarded = {}
        new_p = self.p.copy()
        for a, label in enumerate(self.labels):
            idx = np.flatnonzero(self.a == a)
            pa = self.p[idx].sum()
            if pa <= 0:
                discarded[label] = 0.0
                continue
            size = self.k[idx].sum(axis=1) + self.d[idx].sum(axis=1)
            order = idx[np.lexsort((self.d[idx].sum(axis=1), size))]
            cum = np.cumsum(self.p[order]) / pa
            cut = int(np.searchsorted(cum, mass - 1e-15)) + 1
            chosen = order[:cut]
            kept_mass = self.p[chosen].sum() / pa
            discarded[label] = float(max(0.0, 1.0 - kept_mass))
            keep[chosen] = True
            new_p[chosen] = self.p[chosen] / kept_mass
        stats = NodeStatistics(
            self.labels, self.d[keep], self.k[keep], self.a[keep], new_p[keep] / new_p[keep].sum(),
            self.states, self.p_s_given_a, check=False)
        return stats, discarded

    def with_states(self, states, p_s_given_a):
        return NodeStatistics(self.labels, self.d, self.k, self.a, self.p, states, p_s_given_a)

    def to_json(self):
        doc = {
            "labels": list(self.labels),
            "states": list(self.states),
            "cells": [
                {"d": self.d[i].tolist(), "k": self.k[i].tolist(),
                 "a": self.labels[self.a[i]], "p": float(self.p[i])}
                for i in range(len(self.p))
            ],
            "p_s_given_a": {},
        }
        if self.p_s_given_a is not None:
            doc["p_s_given_a"] = {
                label: dict(zip(self.states, self.p_s_given_a[i].tolist()))
                for i, label in enumerate(self.labels)
            }
        return doc

    @classmethod
    def from_json(cls, doc):
        try:
            labels = LabelSet(tuple(doc["labels"]))
            states = tuple(doc.get("states", ()))
            cells = doc["cells"]
            A = len(labels)
            d = np.array([c["d"] for c in cells], dtype=np.int64).reshape(-1, A)
            k = np.array([c["k"] for c in cells], dtype=np.int64).reshape(-1, A)
            a = np.array([labels.index(c["a"]) for c in cells], dtype=np.int64)
            p = np.array([c["p"] for c in cells], dtype=float)
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidDistribution(f"malformed statistics document: {e}") from e
        cond = doc.get("p_s_given_a") or {}
        p_s = None
        if cond:
            p_s = np.array([[cond[label].get(s, 0.0) for s in states] for label in labels])
        return cls(labels, d, k, a, p, states, p_s)


def write_statistics(stats, path):
    with open(path, "w") as f:
        json.dump(stats.to_json(), f, indent=2)


def read_statistics(path):
    with open(path, "r") as f:
        return NodeStatistics.from_json(json.load(f))


# ---------------------------------------------------------------------------
# initial states

@dataclass
class InitialStateRule:
    """
    How initial states are assigned.

    kind "fraction-per-class": each label-a node draws from p_{s|a}
    (exactly rounded counts when `exact` is set). kind "per-node": explicit
    state index per node.
    """
    states: tuple
    kind: str = "fraction-per-class"
    fractions: np.ndarray = None
    per_node: np.ndarray = None
    exact: bool = False

    @classmethod
    def fraction_per_class(cls, states, fractions, labels=None, exact=False):
        states = tuple(str(s) for s in states)
        if isinstance(fractions, dict):
            if labels is None:
                raise InvalidSpec("label set needed to resolve per-label fractions")
            first = next(iter(fractions.values()), None)
            if isinstance(first, dict):
                rows = [[float(fractions[str(lab)].get(s, 0.0)) for s in states] for lab in labels]
            else:
                rows = [[float(fractions.get(s, 0.0)) for s in states]] * len(labels)
            fractions = np.array(rows)
        fractions = np.atleast_2d(np.asarray(fractions, dtype=float))
        for row in fractions:
            check_probability_vector(row, "initial fractions", tol=1e-9)
        return cls(states, "fraction-per-class", fractions=fractions, exact=exact)

    @classmethod
    def per_node_states(cls, states, node_states):
        states = tuple(str(s) for s in states)
        node_states = np.asarray(node_states, dtype=np.int64)
        if len(node_states) and (node_states.min() < 0 or node_states.max() >= len(states)):
            raise InvalidSpec("per-node state index out of range")
        return cls(states, "per-node", per_node=node_states)

    @classmethod
    def from_file(cls, states, path, g):
        """Two-column "node state" file; node ids are the graph's original ids."""
        states = tuple(str(s) for s in states)
        dense = {int(orig): i for i, orig in enumerate(g.node_ids)}
        assigned = np.full(g.n, -1, dtype=np.int64)
        with open(path, "r") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise ParseError("expected 'node state'", lineno, path)
                try:
                    v = dense[int(parts[0])]
                except (ValueError, KeyError):
                    raise ParseError(f"unknown node {parts[0]!r}", lineno, path) from None
                if parts[1] not in states:
                    raise ParseError(f"unknown state {parts[1]!r}", lineno, path)
                assigned[v] = states.index(parts[1])
        if np.any(assigned < 0):
            raise InvalidSpec(f"{int((assigned < 0).sum())} nodes have no initial state in {path}")
        return cls.per_node_states(states, assigned)

    def p_s_given_a(self, g):
        A = len(g.labels)
        X = len(self.states)
        if self.kind == "per-node":
            counts = np.zeros((A, X))
            np.add.at(counts, (g.label_of, self.per_node), 1)
            totals = counts.sum(axis=1, keepdims=True)
            out = np.full((A, X), 1.0 / X)
            np.divide(counts, totals, out=out, where=totals > 0)
            return out
        if len(self.fractions) == 1 and A > 1:
            return np.repeat(self.fractions, A, axis=0)
        if len(self.fractions) != A:
            raise InvalidSpec(f"fractions given for {len(self.fractions)} labels, graph has {A}")
        return self.fractions

    def draw(self, g, rng):
        if self.kind == "per-node":
            if len(self.per_node) != g.n:
                raise InvalidSpec("per-node states do not match graph size")
            return self.per_node.copy()
        fractions = self.p_s_given_a(g)
        X = len(self.states)
        out = np.empty(g.n, dtype=np.int64)
        for a in range(len(g.labels)):
            nodes = g.nodes_with_label(a)
            if self.exact:
                counts = largest_remainder(fractions[a], len(nodes))
                out[nodes] = rng.permutation(np.repeat(np.arange(X), counts))
            else:
                out[nodes] = rng.choice(X, size=len(nodes), p=fractions[a])
        return out


# ---------------------------------------------------------------------------
# generators

def _match_stubs(labels, label_of, d, k, seed, node_ids=None):
    """
    Uniform perfect matching of out-stubs to in-stubs within every ordered
    label pair. d and k must already be balanced per pair.
    """
    A = len(labels)
    tails_all = []
    heads_all = []
    members = [np.flatnonzero(label_of == a) for a in range(A)]
    for a in range(A):
        for a2 in range(A):
            src = members[a]
            dst = members[a2]
            tails = np.repeat(src, k[src, a2])
            heads = np.repeat(dst, d[dst, a])
            if len(tails) != len(heads):
                raise UnbalancedStatistics(
                    f"pair ({labels[a]},{labels[a2]}): {len(tails)} out-stubs vs {len(heads)} in-stubs")
            rng = make_rng(seed, "match", a, a2)
            tails_all.append(tails)
            heads_all.append(rng.permutation(heads))
    tails = np.concatenate(tails_all) if tails_all else np.zeros(0, dtype=np.int64)
    heads = np.concatenate(heads_all) if heads_all else np.zeros(0, dtype=np.int64)
    return LabeledGraph(labels, label_of, tails, heads, node_ids=node_ids)


def sample_configuration_model(stats, n, seed=0):
    """
    Labeled configuration model on n nodes.

    Cell counts n*p_{d,k,a} are rounded by largest remainder; a residual
    per-pair stub imbalance up to sqrt(n) is repaired by adding stubs to
    uniformly chosen nodes of the short side.
    """
    if n < 1:
        raise InvalidSpec("n must be positive")
    check_probability_vector(stats.p, "p_{d,k,a}")
    counts = largest_remainder(stats.p, n)
    cell_of = np.repeat(np.arange(len(stats.p)), counts)
    d = stats.d[cell_of].copy()
    k = stats.k[cell_of].copy()
    label_of = stats.a[cell_of].copy()

    A = stats.n_labels
    budget = math.sqrt(n)
    rng = make_rng(seed, "repair")
    for a in range(A):
        for a2 in range(A):
            out_stubs = int(k[label_of == a, a2].sum())
            in_stubs = int(d[label_of == a2, a].sum())
            diff = out_stubs - in_stubs
            if diff == 0:
                continue
            if abs(diff) > budget:
                raise UnbalancedStatistics(
                    f"pair ({stats.labels[a]},{stats.labels[a2]}): {out_stubs} out-stubs vs "
                    f"{in_stubs} in-stubs exceeds repair budget {budget:.1f}")
            if diff > 0:
                pool = np.flatnonzero(label_of == a2)
                column = a
                target = d
            else:
                pool = np.flatnonzero(label_of == a)
                column = a2
                target = k
            if len(pool) == 0:
                raise UnbalancedStatistics(
                    f"pair ({stats.labels[a]},{stats.labels[a2]}): no nodes to absorb {abs(diff)} stubs")
            picks = rng.choice(pool, size=abs(diff))
            np.add.at(target, (picks, column), 1)
            logger.warning("Repaired %d stubs for pair (%s,%s)", abs(diff),
                           stats.labels[a], stats.labels[a2])
    return _match_stubs(stats.labels, label_of, d, k, seed)


def sample_cbm(community_sizes, edge_mean_matrix, n=None, seed=0, labels=None):
    """
    Configuration block model.

    A node of community i gets Binomial(N_ij, m_ij / N_ij) out-stubs toward
    community j (N_ij = size_j, minus one when i == j); the heads of those
    stubs are spread uniformly over community j, then stubs are matched.
    """
    sizes = np.asarray(community_sizes, dtype=np.int64)
    means = np.asarray(edge_mean_matrix, dtype=float)
    K = len(sizes)
    if means.shape != (K, K):
        raise InvalidSpec(f"edge mean matrix must be {K}x{K}")
    if np.any(sizes < 0) or np.any(means < 0):
        raise InvalidSpec("community sizes and means must be non-negative")
    total = int(sizes.sum())
    if n is not None and int(n) != total:
        raise InvalidSpec(f"community sizes sum to {total}, not n={n}")
    labels = LabelSet(tuple(labels) if labels is not None else tuple(str(i) for i in range(K)))
    if len(labels) != K:
        raise InvalidSpec("one label per community required")

    label_of = np.repeat(np.arange(K), sizes)
    members = [np.flatnonzero(label_of == i) for i in range(K)]
    d = np.zeros((total, K), dtype=np.int64)
    k = np.zeros((total, K), dtype=np.int64)
    for i in range(K):
        for j in range(K):
            trials = int(sizes[j] - (1 if i == j else 0))
            mean = means[i, j]
            if mean == 0 or len(members[i]) == 0:
                continue
            if trials <= 0 or mean > trials:
                raise InvalidSpec(f"mean {mean} from community {i} to {j} exceeds {trials} candidates")
            rng = make_rng(seed, "cbm-out", i, j)
            k[members[i], j] = rng.binomial(trials, mean / trials, size=len(members[i]))
            stubs = int(k[members[i], j].sum())
            rng = make_rng(seed, "cbm-in", i, j)
            d[members[j], i] = rng.multinomial(stubs, np.full(len(members[j]), 1.0 / len(members[j])))
    return _match_stubs(labels, label_of, d, k, seed)


def sample_regular(k, n, seed=0):
    """Every node has out-degree k and in-degree k."""
    if k < 0 or n < 1:
        raise InvalidSpec("need k >= 0 and n >= 1")
    label_of = np.zeros(n, dtype=np.int64)
    deg = np.full((n, 1), int(k), dtype=np.int64)
    return _match_stubs(SINGLE_LABEL, label_of, deg, deg.copy(), seed)


def sample_labeled_regular(k, n, label_probs, seed=0, labels=None):
    """k-regular graph whose node labels are drawn in exact proportions label_probs."""
    label_probs = check_probability_vector(label_probs, "label law", tol=1e-9)
    A = len(label_probs)
    labels = LabelSet(tuple(labels) if labels is not None else tuple(str(i) for i in range(A)))
    if len(labels) != A:
        raise InvalidSpec("one label per label probability required")
    g = sample_regular(k, n, seed)
    counts = largest_remainder(label_probs, n)
    label_of = make_rng(seed, "labels").permutation(np.repeat(np.arange(A), counts))
    tails, heads = g.edges()
    return LabeledGraph(labels, label_of, tails, heads)


@dataclass(frozen=True)
class PowerLawSpec:
    """Truncated power law q_k proportional to k^-beta on 1..k_max."""
    beta: float
    k_max: int
    delta: float = None
    zeta: float = None

    def validate(self):
        if not self.beta > 2:
            raise InvalidSpec(f"power-law exponent must exceed 2, got {self.beta}")
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise InvalidSpec(f"k_max must be a positive integer, got {self.k_max}")

    def support(self):
        return np.arange(1, int(self.k_max) + 1)

    def pmf(self):
        self.validate()
        w = self.support().astype(float) ** -self.beta
        return w / w.sum()

    def moment(self, s):
        return float((self.support().astype(float) ** s * self.pmf()).sum())

    def truncated_mean(self):
        return self.moment(1)

    def regime_report(self, s=3):
        """
        Where these parameters sit relative to the scaling regime
        zeta < min((1 - delta)/2, 1/(beta - 1)).
        """
        report = {"beta": self.beta, "k_max": self.k_max, "delta": self.delta, "zeta": self.zeta}
        if self.delta is None or self.zeta is None:
            report["checked"] = False
            return report
        limit = min((1 - self.delta) / 2, 1 / (self.beta - 1))
        report.update(checked=True, limit=limit, satisfied=self.zeta < limit,
                      moment_growth_exponent=max(0.0, self.zeta * (s + 1 - self.beta)))
        if not report["satisfied"]:
            logger.warning("Power-law regime violated: zeta=%g >= %g", self.zeta, limit)
        return report


@dataclass
class DegreeSequence:
    out_degrees: np.ndarray
    in_degrees: np.ndarray

    def __len__(self):
        return len(self.out_degrees)


def sample_powerlaw_sequence(spec, n, seed=0):
    """
    n i.i.d. out-degrees and in-degrees from the truncated power law.

    The in-sequence is then repaired so both sums agree: the difference is
    spread uniformly over the units of room each node has left inside
    [1, k_max], so every degree stays in the support.
    """
    spec.validate()
    if n < 1:
        raise InvalidSpec("n must be positive")
    pmf = spec.pmf()
    support = spec.support()
    out = make_rng(seed, "powerlaw-out").choice(support, size=n, p=pmf).astype(np.int64)
    inn = make_rng(seed, "powerlaw-in").choice(support, size=n, p=pmf).astype(np.int64)
    diff = int(out.sum() - inn.sum())
    if diff:
        room = int(spec.k_max) - inn if diff > 0 else inn - 1
        if abs(diff) > room.sum():
            raise UnbalancedStatistics(f"cannot move {abs(diff)} in-degree units inside [1, {spec.k_max}]")
        step = make_rng(seed, "powerlaw-repair").multivariate_hypergeometric(room, abs(diff))
        inn = inn + np.sign(diff) * step
    return DegreeSequence(out, inn.astype(np.int64))


def powerlaw_statistics(spec):
    """Single-label statistics with independent power-law in- and out-degrees."""
    pmf = spec.pmf()
    support = spec.support()
    dd, kk = np.meshgrid(support, support, indexing="ij")
    p = np.outer(pmf, pmf).reshape(-1)
    return NodeStatistics(SINGLE_LABEL, dd.reshape(-1, 1), kk.reshape(-1, 1),
                          np.zeros(len(p), dtype=np.int64), p / p.sum())


def graph_from_degree_sequence(seq, seed=0):
    """Single-label configuration-model graph from an explicit sequence."""
    out = np.asarray(seq.out_degrees, dtype=np.int64).reshape(-1, 1)
    inn = np.asarray(seq.in_degrees, dtype=np.int64).reshape(-1, 1)
    if out.sum() != inn.sum():
        raise UnbalancedStatistics(f"out-degree sum {out.sum()} != in-degree sum {inn.sum()}")
    return _match_stubs(SINGLE_LABEL, np.zeros(len(out), dtype=np.int64), inn, out, seed)


def rewire(g, seed=0):
    """Re-match the stubs of g: same per-node (d, k, a), fresh uniform matching."""
    return _match_stubs(g.labels, np.asarray(g.label_of), np.asarray(g.in_degree_vecs),
                        np.asarray(g.out_degree_vecs), seed, node_ids=g.node_ids)


# ---------------------------------------------------------------------------
# edge-list files

def read_label_map(path):
    """Two-column "node label" text file -> {node id: label}."""
    mapping = {}
    with open(path, "r") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError("expected 'node label'", lineno, path)
            try:
                mapping[int(parts[0])] = parts[1]
            except ValueError:
                raise ParseError(f"node id {parts[0]!r} is not an integer", lineno, path) from None
    return mapping


def load_edge_list(path, label_map=None):
    """
    Load a SNAP-style edge list ("tail head" per line, '#' comments).

    Node ids are remapped densely in order of first appearance; ids that
    appear only in the label map become isolated nodes.
    """
    ids = {}
    tails = []
    heads = []

    def dense(x):
        i = ids.get(x)
        if i is None:
            i = ids[x] = len(ids)
        return i

    with open(path, "r") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected two node ids, got {len(parts)} fields", lineno, path)
            try:
                t, h = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"non-integer node id in {line!r}", lineno, path) from None
            tails.append(dense(t))
            heads.append(dense(h))

    if isinstance(label_map, (str, Path)):
        label_map = read_label_map(label_map)
    if label_map:
        for node in label_map:
            dense(node)
        names = sorted(set(str(x) for x in label_map.values()))
        labels = LabelSet(tuple(names))
        label_of = np.empty(len(ids), dtype=np.int64)
        for orig, i in ids.items():
            if orig not in label_map:
                raise InvalidSpec(f"node {orig} has no label in the label map")
            label_of[i] = labels.index(label_map[orig])
    else:
        labels = SINGLE_LABEL
        label_of = np.zeros(len(ids), dtype=np.int64)

    node_ids = np.empty(len(ids), dtype=np.int64)
    for orig, i in ids.items():
        node_ids[i] = orig
    g = LabeledGraph(labels, label_of, tails, heads, node_ids=node_ids)
    logger.info("Loaded %s from %s", g, path)
    return g


def write_edge_list(g, path):
    tails, heads = g.edges()
    with open(path, "w") as f:
        for t, h in zip(tails.tolist(), heads.tolist()):
            f.write(f"{t} {h}\n")
    return len(tails)


def write_label_map(g, path):
    with open(path, "w") as f:
        for v in range(g.n):
            f.write(f"{v} {g.labels[g.label_of[v]]}\n")
    return g.n


def write_id_mapping(g, path):
    with open(path, "w") as f:
        f.write("# original_id dense_id\n")
        for v, orig in enumerate(g.node_ids.tolist()):
            f.write(f"{orig} {v}\n")
    return g.n


# ---------------------------------------------------------------------------
# statistics

def extract_statistics(g, initial_state_rule=None):
    """Exact empirical p_{d,k,a} (and p_{s|a} when a rule is given)."""
    A = len(g.labels)
    if g.n == 0:
        raise InvalidSpec("cannot take statistics of an empty node set")
    rows = np.column_stack([g.in_degree_vecs, g.out_degree_vecs, g.label_of])
    uniq, counts = np.unique(rows, axis=0, return_counts=True)
    states = ()
    p_s = None
    if initial_state_rule is not None:
        states = initial_state_rule.states
        p_s = initial_state_rule.p_s_given_a(g)
    return NodeStatistics(g.labels, uniq[:, :A], uniq[:, A:2 * A], uniq[:, 2 * A],
                          counts / g.n, states, p_s)


@dataclass
class GraphRecipe:
    """
    Picklable description of a graph source, built per seed.

    generator: regular | labeled_regular | cbm | configuration | powerlaw | edge_list
    """
    generator: str
    params: dict = field(default_factory=dict)

    def build(self, seed=0):
        p = self.params
        gen = self.generator
        if gen == "regular":
            return sample_regular(int(p["k"]), int(p["n"]), seed)
        if gen == "cbm":
            return sample_cbm(p["community_sizes"], p["edge_means"], p.get("n"), seed, p.get("labels"))
        if gen == "configuration":
            stats = p["statistics"]
            if not isinstance(stats, NodeStatistics):
                stats = read_statistics(stats)
            return sample_configuration_model(stats, int(p["n"]), seed)
        if gen == "powerlaw":
            spec = PowerLawSpec(float(p["beta"]), int(p["k_max"]), p.get("delta"), p.get("zeta"))
            spec.regime_report()
            return graph_from_degree_sequence(sample_powerlaw_sequence(spec, int(p["n"]), seed), seed)
        if gen == "labeled_regular":
            return sample_labeled_regular(int(p["k"]), int(p["n"]), p["label_probs"], seed, p.get("labels"))
        if gen == "edge_list":
            g = load_edge_list(p["path"], p.get("label_map"))
            return rewire(g, seed) if p.get("rewire") else g
        raise InvalidSpec(f"unknown graph generator {gen!r}")

    def limit_statistics(self):
        """Statistics known in closed form for the recipe, or None."""
        p = self.params
        if self.generator == "regular":
            return regular_statistics(int(p["k"]))
        if self.generator == "labeled_regular":
            return labeled_regular_statistics(int(p["k"]), p["label_probs"], p.get("labels"))
        if self.generator == "powerlaw":
            return powerlaw_statistics(PowerLawSpec(float(p["beta"]), int(p["k_max"]), p.get("delta"), p.get("zeta")))
        if self.generator == "configuration":
            stats = p["statistics"]
            return stats if isinstance(stats, NodeStatistics) else read_statistics(stats)
        return None


def labeled_regular_statistics(k, label_probs, labels=None):
    """
    Statistics of a k-regular graph whose labels are i.i.d. with law
    label_probs: the in- and out-degree vectors of a node are independent
    multinomial splits of k.
    """
    label_probs = check_probability_vector(label_probs, "label law", tol=1e-9)
    A = len(label_probs)
    labels = LabelSet(tuple(labels) if labels is not None else tuple(str(i) for i in range(A)))
    splits = compositions(int(k), A)
    weights = multinomial.pmf(splits, int(k), label_probs) if k > 0 else np.ones(1)
    d_rows, k_rows, a_rows, p_rows = [], [], [], []
    for a in range(A):
        for i, dv in enumerate(splits):
            for j, kv in enumerate(splits):
                w = label_probs[a] * weights[i] * weights[j]
                if w > 0:
                    d_rows.append(dv)
                    k_rows.append(kv)
                    a_rows.append(a)
                    p_rows.append(w)
    p = np.array(p_rows)
    return NodeStatistics(labels, np.array(d_rows), np.array(k_rows), np.array(a_rows), p / p.sum())


def regular_statistics(k):
    """Single-label statistics with every node at d = k = k."""
    return NodeStatistics(SINGLE_LABEL, [[k]], [[k]], [0], [1.0])
