"""
Semi-anonymous update kernels.

A kernel maps (label of the updating node, neighbour count matrix xi) to a
probability vector over states. xi has shape (|A|, |X|): xi[a, x] is the
number of out-neighbours with label a in state x. The built-in kernels only
look at the label-summed counts xi.sum(axis=0).
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidPayoff, InvalidSpec, MalformedRow, StateMismatch


@dataclass(frozen=True)
class StateSet:
    states: tuple

    def __post_init__(self):
        states = tuple(str(s) for s in self.states)
        if len(states) < 2:
            raise InvalidSpec("a state set needs at least two states")
        if len(set(states)) != len(states):
            raise InvalidSpec(f"duplicate states in {states}")
        object.__setattr__(self, "states", states)

    def index(self, state):
        try:
            return self.states.index(str(state))
        except ValueError:
            raise StateMismatch(f"unknown state {state!r}; known: {list(self.states)}") from None

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __getitem__(self, i):
        return self.states[i]


TLTM_STATES = StateSet(("-1", "0", "1"))
BRCA_STATES = StateSet(("-1", "1"))
ERG_STATES = StateSet(("R", "P", "S"))


def _per_label(value, label, what):
    """Scalar -> same for every label; sequence -> indexed by label index."""
    if np.ndim(value) == 0:
        return value
    if label >= len(value):
        raise InvalidSpec(f"no {what} for label index {label}")
    return value[label]


class UpdateKernel:
    """Base class; subclasses implement batch()."""

    name = "kernel"
    states = None
    deterministic = False
    # Output depends on xi only through xi.sum(axis=0).
    label_blind = True

    def batch(self, label, xis):
        """Probability vectors for a stack of count matrices, shape (N, |X|)."""
        raise NotImplementedError

    def probabilities(self, label, xi):
        xi = np.asarray(xi, dtype=np.int64)
        return self.batch(label, xi[None, :, :])[0]

    def __call__(self, label, xi):
        return self.probabilities(label, xi)

    def check_states(self, states):
        states = states if isinstance(states, StateSet) else StateSet(tuple(states))
        if states != self.states:
            raise StateMismatch(
                f"{self.name} kernel works on states {list(self.states)}, got {list(states)}")
        return states

    def describe(self):
        return {"kernel": self.name, "states": list(self.states)}


class TltmKernel(UpdateKernel):
    """
    Ternary linear threshold model on states (-1, 0, 1).

    With S = xi_1 - xi_-1: state 1 when S >= a_plus, -1 when S <= -a_minus,
    0 otherwise.
    """

    name = "tltm"
    states = TLTM_STATES
    deterministic = True

    def __init__(self, a_plus, a_minus):
        for t in list(np.ravel(a_plus)) + list(np.ravel(a_minus)):
            if t < 1:
                raise InvalidSpec(f"TLTM thresholds must be >= 1, got {t}")
        self.a_plus = a_plus
        self.a_minus = a_minus

    def batch(self, label, xis):
        if xis.shape[-1] != 3:
            raise StateMismatch("TLTM needs the ternary state set (-1, 0, 1)")
        s = xis.sum(axis=1)
        signed = s[:, 2] - s[:, 0]
        up = signed >= _per_label(self.a_plus, label, "a_plus")
        down = signed <= -_per_label(self.a_minus, label, "a_minus")
        out = np.zeros((len(xis), 3))
        out[:, 2] = up
        out[:, 0] = down & ~up
        out[:, 1] = ~(up | down)
        return out

    def describe(self):
        return {**super().describe(), "a_plus": self.a_plus, "a_minus": self.a_minus}


class BrcaKernel(UpdateKernel):
    """
    Binary response with coordinating and anti-coordinating agents on (-1, 1).

    Coordinating nodes follow the majority of their out-neighbours,
    anti-coordinating nodes the minority; ties split (1/2, 1/2).
    """

    name = "brca"
    states = BRCA_STATES

    def __init__(self, coordinating=True):
        self.coordinating = coordinating

    def batch(self, label, xis):
        if xis.shape[-1] != 2:
            raise StateMismatch("BRCA needs the binary state set (-1, 1)")
        s = xis.sum(axis=1)
        tie = 0.5 * (s[:, 1] == s[:, 0])
        if _per_label(self.coordinating, label, "coordinating flag"):
            p1 = (s[:, 1] > s[:, 0]) + tie
        else:
            p1 = (s[:, 1] < s[:, 0]) + tie
        return np.column_stack([1.0 - p1, p1])

    def describe(self):
        return {**super().describe(), "coordinating": self.coordinating}


class ErgKernel(UpdateKernel):
    """
    Rock-paper-scissors best response on (R, P, S).

    Payoffs R: b xi_R + c xi_S, P: c xi_R + b xi_P, S: c xi_P + b xi_S; the
    node picks uniformly among the maximisers.
    """

    name = "erg"
    states = ERG_STATES

    def __init__(self, b=1.0, c=2.0):
        if not (c > b >= 0):
            raise InvalidPayoff(f"ERG needs c > b >= 0, got b={b}, c={c}")
        self.b = float(b)
        self.c = float(c)

    def batch(self, label, xis):
        if xis.shape[-1] != 3:
            raise StateMismatch("ERG needs the ternary state set (R, P, S)")
        s = xis.sum(axis=1).astype(float)
        r, p, sc = s[:, 0], s[:, 1], s[:, 2]
        b, c = self.b, self.c
        pay = np.column_stack([b * r + c * sc, c * r + b * p, c * p + b * sc])
        best = pay.max(axis=1, keepdims=True)
        win = np.isclose(pay, best, rtol=1e-12, atol=1e-12)
        return win / win.sum(axis=1, keepdims=True)

    def describe(self):
        return {**super().describe(), "b": self.b, "c": self.c}


class TableKernel(UpdateKernel):
    """
    Explicit lookup table per label; unlisted count matrices fall back to the
    uniform vector.
    """

    name = "table"
    label_blind = False

    def __init__(self, states, table, fallback="uniform"):
        self.states = states if isinstance(states, StateSet) else StateSet(tuple(states))
        if fallback != "uniform":
            raise InvalidSpec(f"unsupported table fallback {fallback!r}")
        X = len(self.states)
        self.table = {}
        for label, rows in table.items():
            clean = {}
            for key, row in rows.items():
                row = np.asarray(row, dtype=float)
                if row.shape != (X,) or np.any(row < 0) or abs(row.sum() - 1.0) > 1e-12:
                    raise MalformedRow(f"label {label}, xi {key}: {row.tolist()} is not a distribution")
                clean[tuple(int(x) for x in key)] = row
            self.table[int(label)] = clean
        self.fallback = fallback

    def batch(self, label, xis):
        X = len(self.states)
        rows = self.table.get(int(label), {})
        out = np.full((len(xis), X), 1.0 / X)
        for i, xi in enumerate(xis):
            hit = rows.get(tuple(xi.reshape(-1).tolist()))
            if hit is not None:
                out[i] = hit
        return out

    @classmethod
    def from_json(cls, doc, labels):
        """
        {"states": [...], "rows": {label: {"c0,c1,...": [p...]}}}; the key is
        the row-major flattening of xi.
        """
        try:
            states = StateSet(tuple(doc["states"]))
            table = {}
            for label, rows in doc.get("rows", {}).items():
                a = labels.index(label)
                table[a] = {tuple(int(x) for x in key.split(",") if x != ""): row
                            for key, row in rows.items()}
        except (KeyError, ValueError, AttributeError) as e:
            raise MalformedRow(f"malformed kernel table: {e}") from e
        return cls(states, table, doc.get("fallback", "uniform"))

    @classmethod
    def load(cls, path, labels):
        with open(path, "r") as f:
            return cls.from_json(json.load(f), labels)


def tltm_kernel(a_plus, a_minus):
    return TltmKernel(a_plus, a_minus)


def brca_kernel(coordinating=True):
    return BrcaKernel(coordinating)


def erg_kernel(b=1.0, c=2.0):
    return ErgKernel(b, c)


def table_kernel(states, table, fallback="uniform"):
    return TableKernel(states, table, fallback)


def evaluate(kernel, label, xi):
    """Probability vector Theta^(label)(xi)."""
    return kernel.probabilities(label, xi)


def make_kernel(name, params, labels):
    """Build a kernel from a config section; per-label values may be dicts keyed by label."""

    def resolve(value):
        if isinstance(value, dict):
            value = {str(k): v for k, v in value.items()}
            missing = [lab for lab in labels if lab not in value]
            if missing:
                raise InvalidSpec(f"no {name} parameter for labels {missing}")
            return [value[lab] for lab in labels]
        return value

    if name == "tltm":
        return TltmKernel(resolve(params.get("a_plus", 1)), resolve(params.get("a_minus", 1)))
    if name == "brca":
        return BrcaKernel(resolve(params.get("coordinating", True)))
    if name == "erg":
        return ErgKernel(params.get("b", 1.0), params.get("c", 2.0))
    if name == "table":
        if not params.get("table"):
            raise InvalidSpec("table kernel needs a 'table' path")
        return TableKernel.load(params["table"], labels)
    raise InvalidSpec(f"unknown kernel {name!r}")
