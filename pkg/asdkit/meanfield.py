"""
Mean-field approximation of asynchronous semi-anonymous dynamics.

State: zeta[w, a, b] is the probability that a label-a node reached from a
label-b parent is in state w; y[w, a] the probability that a label-a root is
in state w. The ODE is

    dzeta/dt = gamma * (phi(zeta) - zeta),   dy/dt = gamma * (psi(zeta) - y).

phi and psi are mixtures over the degree law of per-degree terms
varphi^(k,a)(zeta), which are polynomials in zeta evaluated either by exact
enumeration of neighbour count matrices or by Monte Carlo.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import BudgetExceeded, InvalidSpec, NoConvergence, StateMismatch, StepTooLarge
from .utils import (check_probability_vector, composition_count, compositions, log_multinomial, make_rng,
                    simplex_lattice)

logger = logging.getLogger(__name__)

PHI_MODES = ("exact", "monte-carlo", "auto")

# Drift from the simplex tolerated before a step is clamped and renormalised.
SIMPLEX_DRIFT = 1e-12


@dataclass
class OdeConfig:
    h: float = 0.01
    horizon: float = 10.0
    method: str = "rk4"
    phi_mode: str = "auto"
    mc_samples: int = 100000
    budget: int = 200000
    degree_threshold: int = None
    seed: int = 0
    gamma: float = 1.0
    truncation: float = 1 - 1e-8

    def validate(self):
        if not self.h > 0:
            raise InvalidSpec(f"step must be positive, got {self.h}")
        if not self.horizon >= 0:
            raise InvalidSpec(f"horizon must be non-negative, got {self.horizon}")
        if self.method != "rk4":
            raise InvalidSpec(f"only fixed-step rk4 is supported, got {self.method!r}")
        if self.phi_mode not in PHI_MODES:
            raise InvalidSpec(f"phi mode must be one of {PHI_MODES}")
        if self.mc_samples < 1 or self.budget < 1:
            raise InvalidSpec("sample count and budget must be positive")
        if not 0 < self.truncation <= 1:
            raise InvalidSpec("truncation mass must be in (0, 1]")
        return self


@dataclass
class MeanFieldState:
    zeta: np.ndarray
    y: np.ndarray

    def copy(self):
        return MeanFieldState(self.zeta.copy(), self.y.copy())

    def distance(self, other):
        return max(float(np.abs(self.zeta - other.zeta).max()), float(np.abs(self.y - other.y).max()))


@dataclass
class PhiResult:
    probs: np.ndarray
    mode: str
    std_error: np.ndarray = None


class _PhiTable:
    """
    varphi^(k,a) for one degree vector k and node label a.

    Exact mode keeps every count matrix xi with row sums k, its multinomial
    weight and the kernel output; evaluation is then a batched polynomial.
    """

    def __init__(self, kernel, a, k, X, cfg):
        self.a = a
        self.k = tuple(int(x) for x in k)
        self.X = X
        self.kernel = kernel
        self.cfg = cfg
        size = 1
        for kc in self.k:
            size *= composition_count(kc, X)
        self.size = size
        total = sum(self.k)
        over_threshold = cfg.degree_threshold is not None and total > cfg.degree_threshold
        if cfg.phi_mode == "exact":
            if size > cfg.budget:
                raise BudgetExceeded(f"k={self.k}: {size} count matrices exceeds budget {cfg.budget}")
            self.mode = "exact"
        elif cfg.phi_mode == "monte-carlo" or size > cfg.budget or over_threshold:
            self.mode = "monte-carlo"
        else:
            self.mode = "exact"
        self.std_error = None
        if self.mode == "exact":
            self._build()

    def _build(self):
        A = len(self.k)
        comps = [compositions(kc, self.X) for kc in self.k]
        logc = [log_multinomial(c) for c in comps]
        sizes = [len(c) for c in comps]
        idx = np.indices(sizes).reshape(A, -1).T
        self.xis = np.stack([comps[c][idx[:, c]] for c in range(A)], axis=1)
        logcoef = np.zeros(len(idx))
        for c in range(A):
            logcoef += logc[c][idx[:, c]]
        self.coef = np.exp(logcoef)
        self.theta = self.kernel.batch(self.a, self.xis)

    def evaluate(self, Z):
        """Z[B, c, g]: state law of a label-c child of this node. Returns (B, X)."""
        if self.mode == "exact":
            B = Z.shape[0]
            w = np.broadcast_to(self.coef, (B, len(self.coef))).copy()
            for c, kc in enumerate(self.k):
                if kc == 0:
                    continue
                powers = Z[:, c, :, None] ** np.arange(kc + 1)
                for g in range(self.X):
                    w *= powers[:, g, self.xis[:, c, g]]
            return w @ self.theta
        return self._monte_carlo(Z)

    def _monte_carlo(self, Z):
        M = self.cfg.mc_samples
        out = np.empty((Z.shape[0], self.X))
        err = np.empty((Z.shape[0], self.X))
        for i in range(Z.shape[0]):
            rng = make_rng(self.cfg.seed, "phi", self.a, *self.k)
            rows = []
            for c, kc in enumerate(self.k):
                p = np.clip(Z[i, c], 0.0, None)
                s = p.sum()
                p = p / s if s > 0 else np.full(self.X, 1.0 / self.X)
                rows.append(rng.multinomial(kc, p, size=M))
            theta = self.kernel.batch(self.a, np.stack(rows, axis=1))
            out[i] = theta.mean(axis=0)
            err[i] = theta.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.nan
        self.std_error = err
        return out


@dataclass
class MeanFieldTrajectory:
    times: np.ndarray
    zeta: np.ndarray
    y: np.ndarray
    states: tuple
    labels: tuple
    defined: np.ndarray
    renormalized_steps: int = 0
    phi_modes: tuple = ()
    zeta_all: np.ndarray = None
    y_all: np.ndarray = None

    def final(self):
        return MeanFieldState(self.zeta[-1].copy(), self.y[-1].copy())

    def rows(self, every=1):
        for j in range(0, len(self.times), every):
            t = round(float(self.times[j]), 10)
            for w, state in enumerate(self.states):
                for a, la in enumerate(self.labels):
                    for b, lb in enumerate(self.labels):
                        if self.defined[a, b]:
                            yield {"t": t, "kind": "zeta", "state": state, "class": la,
                                   "parent": lb, "value": float(self.zeta[j, w, a, b])}
                    yield {"t": t, "kind": "y", "state": state, "class": la, "parent": "",
                           "value": float(self.y[j, w, a])}
                yield {"t": t, "kind": "zeta_all", "state": state, "class": "all", "parent": "",
                       "value": float(self.zeta_all[j, w])}
                yield {"t": t, "kind": "y_all", "state": state, "class": "all", "parent": "",
                       "value": float(self.y_all[j, w])}


class MeanFieldSystem:
    """
    The mean-field ODE for given statistics and kernel.

    Degree laws are truncated at cfg.truncation cumulative mass first; the
    discarded mass per label is kept in `discarded`. Components zeta[., a, b]
    with no b -> a edges are frozen.
    """

    def __init__(self, stats, kernel, cfg=None):
        self.cfg = (cfg or OdeConfig()).validate()
        self.kernel = kernel
        self.states = tuple(kernel.states)
        if stats.states and tuple(stats.states) != self.states:
            raise StateMismatch(f"statistics use states {list(stats.states)}, kernel {list(self.states)}")
        if self.cfg.truncation < 1:
            stats, self.discarded = stats.truncated(self.cfg.truncation)
        else:
            self.discarded = {label: 0.0 for label in stats.labels}
        for label, mass in self.discarded.items():
            if mass > 0:
                logger.debug("Truncated degree law of label %s, discarded mass %.3g", label, mass)
        self.stats = stats
        self.labels = tuple(stats.labels)
        self.X = len(self.states)
        self.A = len(self.labels)
        dens = stats.density()
        self.defined = dens.T > 0
        total = dens.sum()
        self.edge_weights = dens.T / total if total > 0 else np.zeros((self.A, self.A))
        self.p_a = stats.p_a()

        self._mix = []
        for a in range(self.A):
            kr, pr = stats.root_distribution(a)
            child = []
            for b in range(self.A):
                if self.defined[a, b]:
                    child.append((b,) + stats.child_distribution(a, b))
            ks = sorted({tuple(r) for r in kr.tolist()} | {tuple(r) for _, kc, _ in child for r in kc.tolist()})
            pos = {k: i for i, k in enumerate(ks)}
            root_w = np.zeros(len(ks))
            for r, p in zip(kr.tolist(), pr):
                root_w[pos[tuple(r)]] += p
            child_w = np.zeros((self.A, len(ks)))
            for b, kc, pc in child:
                for r, p in zip(kc.tolist(), pc):
                    child_w[b, pos[tuple(r)]] += p
            self._mix.append((ks, root_w, child_w))
        self._tables = {}
        self._pairs = [(a, b) for a in range(self.A) for b in range(self.A) if self.defined[a, b]]

    # -- per-degree terms ---------------------------------------------------

    def table(self, a, k):
        key = (a, tuple(int(x) for x in k))
        tab = self._tables.get(key)
        if tab is None:
            tab = _PhiTable(self.kernel, a, key[1], self.X, self.cfg)
            if tab.mode == "monte-carlo":
                logger.warning("Monte Carlo evaluation for k=%s, label %s (%d count matrices)",
                               key[1], self.labels[a], tab.size)
            self._tables[key] = tab
        return tab

    @property
    def phi_modes(self):
        return tuple(sorted({t.mode for t in self._tables.values()}))

    def varphi(self, a, k, zeta):
        """varphi^(k,a) at one or a batch of zeta arrays."""
        zeta = np.asarray(zeta, dtype=float)
        single = zeta.ndim == 3
        Z = self._child_laws(zeta[None] if single else zeta, a)
        out = self.table(a, k).evaluate(Z)
        return out[0] if single else out

    @staticmethod
    def _child_laws(zeta, a):
        # zeta[B, g, c, a] -> Z[B, c, g]
        return np.transpose(zeta[:, :, :, a], (0, 2, 1))

    def evaluate(self, zeta, y=None):
        """
        (phi, psi) for a batch zeta[B, X, A, A] (or a single array).
        phi keeps frozen components equal to zeta; psi is None when y is None.
        """
        zeta = np.asarray(zeta, dtype=float)
        single = zeta.ndim == 3
        if single:
            zeta = zeta[None]
            y = None if y is None else np.asarray(y, dtype=float)[None]
        phi = zeta.copy()
        psi = None if y is None else y.copy()
        for a in range(self.A):
            ks, root_w, child_w = self._mix[a]
            if not ks:
                continue
            Z = self._child_laws(zeta, a)
            terms = np.stack([self.table(a, k).evaluate(Z) for k in ks], axis=1)
            for b in range(self.A):
                if self.defined[a, b]:
                    phi[:, :, a, b] = np.einsum("k,bkx->bx", child_w[b], terms)
            if psi is not None and root_w.sum() > 0:
                psi[:, :, a] = np.einsum("k,bkx->bx", root_w, terms)
        if single:
            return phi[0], (None if psi is None else psi[0])
        return phi, psi

    def phi_bar(self, a, b, zeta):
        return self.evaluate(zeta)[0][:, a, b]

    def psi_bar(self, a, zeta):
        zeta = np.asarray(zeta, dtype=float)
        _, psi = self.evaluate(zeta, np.zeros((self.X, self.A)))
        return psi[:, a]

    # -- integration --------------------------------------------------------

    def rhs(self, zeta, y):
        phi, psi = self.evaluate(zeta, y)
        g = self.cfg.gamma
        return g * (phi - zeta), g * (psi - y)

    def rk4_step(self, zeta, y, h):
        return _rk4_step(self.rhs, zeta, y, h)

    def initial_state(self, p_s_given_a):
        """zeta(0), y(0) when initial states are drawn from p_{s|a} regardless of degree."""
        p = np.asarray(p_s_given_a, dtype=float).reshape(self.A, self.X)
        return initial_state_from_rule(self.stats, p)

    def aggregate_zeta(self, zeta):
        """Edge-weighted state law, weights l[b, a] / l."""
        return np.einsum("...xab,ab->...x", zeta, self.edge_weights)

    def aggregate_y(self, y):
        return np.einsum("...xa,a->...x", y, self.p_a)

    def integrate(self, state0, horizon=None):
        cfg = self.cfg
        horizon = cfg.horizon if horizon is None else horizon
        zeta = np.array(state0.zeta, dtype=float)
        y = np.array(state0.y, dtype=float)
        _check_simplex(zeta, y, self.defined)
        steps = int(round(horizon / cfg.h))
        times = np.arange(steps + 1) * cfg.h
        zs, ys, renormalized = _run_rk4(self.rhs, zeta, y, cfg.h, steps)
        return MeanFieldTrajectory(
            times, zs, ys, self.states, self.labels, self.defined, renormalized, self.phi_modes,
            zeta_all=self.aggregate_zeta(zs), y_all=self.aggregate_y(ys))

    # -- stationary points --------------------------------------------------

    def reduce(self, zeta):
        """Free coordinates: the first X-1 entries of every defined pair."""
        zeta = np.asarray(zeta)
        return np.concatenate([zeta[..., :self.X - 1, a, b] for a, b in self._pairs], axis=-1) \
            if self._pairs else np.zeros(zeta.shape[:-3] + (0,))

    def expand(self, u, base):
        u = np.asarray(u, dtype=float)
        batch = u.shape[:-1]
        zeta = np.broadcast_to(base, batch + base.shape).copy()
        m = self.X - 1
        for i, (a, b) in enumerate(self._pairs):
            part = u[..., i * m:(i + 1) * m]
            zeta[..., :m, a, b] = part
            zeta[..., m, a, b] = 1.0 - part.sum(axis=-1)
        return zeta

    def residual_map(self, u, base):
        """F(u) = reduce(phi(expand(u))) - u, batched over leading axes."""
        u = np.asarray(u, dtype=float)
        flat = u.reshape(-1, u.shape[-1])
        phi, _ = self.evaluate(self.expand(flat, base))
        return (self.reduce(phi) - flat).reshape(u.shape)

    def jacobian(self, zeta, h=1e-6):
        """Central-difference Jacobian of the reduced ODE right-hand side."""
        base = np.asarray(zeta, dtype=float)
        u0 = self.reduce(base)
        dim = len(u0)
        probes = np.concatenate([u0 + h * np.eye(dim), u0 - h * np.eye(dim)])
        vals = self.residual_map(probes, base)
        J = (vals[:dim] - vals[dim:]).T / (2 * h)
        return self.cfg.gamma * J


@dataclass
class StationaryPoint:
    zeta: np.ndarray
    y: np.ndarray
    residual: float
    max_real_eig: float
    classification: str
    eigenvalues: np.ndarray = None


@dataclass
class StationaryReport:
    points: list
    seeds: int
    failures: int
    tol: float
    eig_tol: float
    newton: bool = True
    notes: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    labels: tuple = ()
    states: tuple = ()
    defined: np.ndarray = None

    def stable(self):
        return [p for p in self.points if p.classification == "stable"]

    def rows(self):
        for pid, p in enumerate(self.points):
            head = {"point_id": pid, "residual": p.residual, "max_real_eig": p.max_real_eig,
                    "classification": p.classification}
            for w, state in enumerate(self.states):
                for a, la in enumerate(self.labels):
                    for b, lb in enumerate(self.labels):
                        if self.defined[a, b]:
                            yield {**head, "kind": "zeta", "state": state, "class": la, "parent": lb,
                                   "value": float(p.zeta[w, a, b])}
                    yield {**head, "kind": "y", "state": state, "class": la, "parent": "",
                           "value": float(p.y[w, a])}


def _as_system(stats, kernel, cfg):
    if isinstance(stats, MeanFieldSystem):
        return stats
    if kernel is None:
        raise InvalidSpec("a kernel is needed to build the mean-field system")
    return MeanFieldSystem(stats, kernel, cfg)


def _check_simplex(zeta, y, defined, tol=1e-9):
    for arr, what in ((zeta, "zeta"), (y, "y")):
        if np.any(arr < -tol) or np.any(arr > 1 + tol):
            raise InvalidSpec(f"{what} has entries outside [0, 1]")
    sums = zeta.sum(axis=0)
    if np.any(np.abs(sums[defined] - 1) > tol) or np.any(np.abs(y.sum(axis=0) - 1) > tol):
        raise InvalidSpec("initial state is not on the product simplex")


def _restore_simplex(zeta, y, axis=-3):
    fixed = False
    out = []
    for arr, ax in ((zeta, axis), (y, axis + 1)):
        sums = np.asarray(arr.sum(axis=ax))
        # all-zero columns belong to frozen pairs
        live = sums > SIMPLEX_DRIFT
        drift = max(float(-arr.min()), float(arr.max() - 1),
                    float(np.abs(sums[live] - 1).max()) if live.any() else 0.0)
        if drift > SIMPLEX_DRIFT:
            fixed = True
            arr = np.clip(arr, 0.0, 1.0)
            s = arr.sum(axis=ax, keepdims=True)
            arr = arr / np.where(s > 0, s, 1.0)
        out.append(arr)
    return out[0], out[1], fixed


def _rk4_step(rhs, zeta, y, h):
    k1z, k1y = rhs(zeta, y)
    k2z, k2y = rhs(zeta + 0.5 * h * k1z, y + 0.5 * h * k1y)
    k3z, k3y = rhs(zeta + 0.5 * h * k2z, y + 0.5 * h * k2y)
    k4z, k4y = rhs(zeta + h * k3z, y + h * k3y)
    zeta = zeta + h / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z)
    y = y + h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
    return zeta, y


def _run_rk4(rhs, zeta, y, h, steps, axis=-3):
    """
    Fixed-step RK4 with the simplex restored after every step.

    Returns (zs, ys, renormalized). Raises StepTooLarge when the restore
    fired on more than 0.1% of the steps.
    """
    zs = np.empty((steps + 1,) + zeta.shape)
    ys = np.empty((steps + 1,) + y.shape)
    zs[0], ys[0] = zeta, y
    renormalized = 0
    for i in range(1, steps + 1):
        zeta, y = _rk4_step(rhs, zeta, y, h)
        zeta, y, fixed = _restore_simplex(zeta, y, axis)
        if fixed:
            renormalized += 1
            logger.debug("Renormalised step %d (t=%.4f)", i, i * h)
        zs[i], ys[i] = zeta, y
    if steps and renormalized > 0.001 * steps:
        raise StepTooLarge(f"renormalisation fired on {renormalized} of {steps} steps; reduce h={h}")
    if renormalized:
        logger.warning("Renormalised %d of %d steps", renormalized, steps)
    return zs, ys, renormalized


def _project(u, X):
    """Clip reduced coordinates back onto the product simplex."""
    m = X - 1
    u = np.clip(u, 0.0, 1.0).reshape(-1, m)
    s = u.sum(axis=1, keepdims=True)
    u = np.where(s > 1, u / np.where(s > 0, s, 1), u)
    return u.reshape(-1)


def _newton(system, u, base, tol, iters):
    for _ in range(iters):
        F = system.residual_map(u, base)
        if np.abs(F).max() <= tol:
            return u, float(np.abs(F).max())
        J = system.jacobian(system.expand(u, base)) / system.cfg.gamma
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        u = _project(u + step, system.X)
    F = system.residual_map(u, base)
    return u, float(np.abs(F).max())


def _damped(system, u, base, tol, alpha, iters):
    for _ in range(iters):
        F = system.residual_map(u, base)
        if np.abs(F).max() <= tol:
            break
        u = _project(u + alpha * F, system.X)
    return u


def _seed_states(lattice, A, max_seeds, seed):
    """
    Seed state laws per child label: every combination of lattice points
    across labels, or the shared-law diagonal plus a random sample of
    combinations when there are more than max_seeds.
    """
    L = len(lattice)
    if A == 1 or L ** A <= max_seeds:
        combos = np.array(list(itertools.product(range(L), repeat=A)), dtype=np.int64)
    else:
        diagonal = np.repeat(np.arange(L)[:, None], A, axis=1)
        extra = make_rng(seed, "stationary-seeds").integers(L, size=(max(max_seeds - L, 0), A))
        combos = np.concatenate([diagonal, extra])
    return lattice[combos]


def find_stationary(stats, kernel=None, resolution=20, tol=1e-8, cfg=None, alpha=0.5, max_iter=500,
                    newton_iter=50, dedup=1e-6, eig_tol=1e-8, fd_step=1e-6, max_seeds=2000):
    """
    Fixed points of zeta = phi(zeta) from a lattice of seeds.

    A seed assigns one lattice law to every child label, so fixed points
    with different laws per label are reached too. From each seed: Newton
    directly, and damped iteration
    zeta <- (1 - alpha) zeta + alpha phi(zeta) followed by Newton polish.
    Points are de-duplicated within `dedup` and classified by the
    eigenvalues of the finite-difference Jacobian. Seeds that converge
    nowhere are reported as NoConvergence records in `report.errors`.
    """
    system = _as_system(stats, kernel, cfg)
    if resolution < 2:
        raise InvalidSpec("grid resolution must be at least 2")
    X = system.X
    base = np.zeros((X, system.A, system.A))
    base[0] = 1.0
    seeds = _seed_states(simplex_lattice(X, resolution), system.A, max_seeds, system.cfg.seed)
    # builds every per-degree table so the evaluation modes are known
    system.evaluate(base, np.zeros((X, system.A)))
    newton = all(t.mode == "exact" for t in system._tables.values()) and system.cfg.phi_mode != "monte-carlo"
    found = []
    errors = []
    for seed in seeds:
        u0 = np.concatenate([seed[a, :X - 1] for a, _ in system._pairs]) if system._pairs else np.zeros(0)
        candidates = []
        if newton:
            candidates.append(_newton(system, u0.copy(), base, tol, newton_iter))
        u = _damped(system, u0.copy(), base, tol, alpha, max_iter)
        if newton:
            candidates.append(_newton(system, u, base, tol, newton_iter))
        else:
            candidates.append((u, float(np.abs(system.residual_map(u, base)).max())))
        ok = False
        for u, res in candidates:
            if res > tol:
                continue
            ok = True
            if not any(np.abs(u - v).max() <= dedup for v, _ in found):
                found.append((u, res))
        if not ok:
            err = NoConvergence(seed.round(6).tolist(), min(res for _, res in candidates))
            errors.append(err)
            logger.debug("%s", err)
    if errors:
        logger.warning("%d of %d seeds did not converge", len(errors), len(seeds))

    points = []
    for u, res in found:
        zeta = system.expand(u, base)
        if system._pairs:
            J = system.jacobian(zeta, fd_step)
            eig = np.linalg.eigvals(J)
            top = float(eig.real.max())
        else:
            eig = np.zeros(0)
            top = -system.cfg.gamma
        if top < -eig_tol:
            cls = "stable"
        elif top > eig_tol:
            cls = "unstable"
        else:
            cls = "marginal"
        _, psi = system.evaluate(zeta, np.zeros((X, system.A)))
        points.append(StationaryPoint(zeta, psi, res, top, cls, eig))
    points.sort(key=lambda p: tuple(system.reduce(p.zeta).round(9)))
    return StationaryReport(points, len(seeds), len(errors), tol, eig_tol, newton, errors=errors,
                            labels=system.labels, states=system.states, defined=system.defined)


# ---------------------------------------------------------------------------
# basins

@dataclass
class BasinMap:
    x: np.ndarray
    y: np.ndarray
    labels: np.ndarray
    face: tuple
    points: list

    def rows(self):
        for x, y, label in zip(self.x.tolist(), self.y.tolist(), self.labels.tolist()):
            yield {"x": round(x, 10), "y": round(y, 10), "label": label}


def map_basins(stats, kernel, report, resolution=101, horizon=50.0, face=(0, 1), tol=1e-4, cfg=None):
    """
    Label every grid point of a simplex face by the stable point its
    trajectory reaches within `tol`, or "undecided" after `horizon`.

    For |X| = 2 the grid is the segment zeta = (1 - x, x); for |X| = 3 it is
    the triangle with coordinates x = zeta[face[0]], y = zeta[face[1]].
    Cells outside the simplex are labelled "outside".
    """
    system = _as_system(stats, kernel, cfg)
    X = system.X
    if X not in (2, 3):
        raise InvalidSpec("basin maps need two or three states")
    stable = [(i, p) for i, p in enumerate(report.points) if p.classification == "stable"]
    axis = np.linspace(0.0, 1.0, resolution)
    if X == 2:
        gx = axis
        gy = np.zeros_like(axis)
    else:
        gx, gy = (m.reshape(-1) for m in np.meshgrid(axis, axis, indexing="ij"))
    inside = gx + gy <= 1 + 1e-12
    labels = np.full(len(gx), "outside", dtype=object)
    labels[inside] = "undecided"
    idx = np.flatnonzero(inside)

    laws = np.zeros((len(idx), X))
    if X == 2:
        laws[:, 1] = gx[idx]
        laws[:, 0] = 1 - gx[idx]
    else:
        i, j = face
        if i == j:
            raise InvalidSpec("face needs two distinct states")
        rest = [s for s in range(3) if s not in face][0]
        laws[:, i] = gx[idx]
        laws[:, j] = gy[idx]
        laws[:, rest] = np.clip(1 - gx[idx] - gy[idx], 0.0, 1.0)
    zeta = np.repeat(laws[:, :, None, None], system.A, axis=2).repeat(system.A, axis=3)
    y = np.repeat(laws[:, :, None], system.A, axis=2)
    targets = [system.reduce(p.zeta) for _, p in stable]
    open_ = np.ones(len(idx), dtype=bool)
    steps = int(round(horizon / system.cfg.h))
    for step in range(steps + 1):
        u = system.reduce(zeta[open_])
        for (pid, _), target in zip(stable, targets):
            hit = np.abs(u - target).max(axis=1) <= tol
            if hit.any():
                rows = np.flatnonzero(open_)[hit]
                labels[idx[rows]] = str(pid)
                open_[rows] = False
                u = u[~hit]
        if not open_.any() or step == steps:
            break
        z, yy = system.rk4_step(zeta[open_], y[open_], system.cfg.h)
        z, yy, _ = _restore_simplex(z, yy)
        zeta[open_] = z
        y[open_] = yy
    undecided = int((labels == "undecided").sum())
    if undecided:
        logger.info("%d grid cells undecided after t=%g", undecided, horizon)
    return BasinMap(gx, gy, labels.astype(str), tuple(face), report.points)


# ---------------------------------------------------------------------------
# label-independent form

def integrate_label_independent(zeta0, y0, stats, kernel, cfg=None):
    """
    Scalar system for kernels that only see label-summed counts: a single
    neighbour law zeta[w] and root law y[w], with the degree laws collapsed
    to total degree and mixed with weights p_a p_b (undefined pairs dropped).
    """
    cfg = (cfg or OdeConfig()).validate()
    if not kernel.label_blind:
        raise InvalidSpec("label-independent system needs a kernel that ignores neighbour labels")
    X = len(kernel.states)
    if cfg.truncation < 1:
        stats, _ = stats.truncated(cfg.truncation)
    A = stats.n_labels
    p_a = stats.p_a()
    dens = stats.density()
    child_mix = {}
    root_mix = {}
    pair_w = 0.0
    for a in range(A):
        kr, pr = stats.root_distribution(a)
        for k, p in zip(kr.sum(axis=1).tolist(), pr):
            root_mix[(a, k)] = root_mix.get((a, k), 0.0) + p * p_a[a]
        for b in range(A):
            if dens[b, a] <= 0:
                continue
            kc, pc = stats.child_distribution(a, b)
            w = p_a[a] * p_a[b]
            pair_w += w
            for k, p in zip(kc.sum(axis=1).tolist(), pc):
                child_mix[(a, k)] = child_mix.get((a, k), 0.0) + p * w
    if pair_w > 0:
        child_mix = {key: v / pair_w for key, v in child_mix.items()}
    tables = {key: _PhiTable(kernel, key[0], (key[1],), X, cfg) for key in set(child_mix) | set(root_mix)}

    def rhs(z, yy):
        Z = z[None, None, :]
        terms = {key: tab.evaluate(Z)[0] for key, tab in tables.items()}
        phi = sum((w * terms[key] for key, w in child_mix.items()), np.zeros(X)) if child_mix else z
        psi = sum((w * terms[key] for key, w in root_mix.items()), np.zeros(X))
        return cfg.gamma * (phi - z), cfg.gamma * (psi - yy)

    z = check_probability_vector(np.array(zeta0, dtype=float), "initial neighbour law", tol=1e-9)
    yy = check_probability_vector(np.array(y0, dtype=float), "initial root law", tol=1e-9)
    steps = int(round(cfg.horizon / cfg.h))
    times = np.arange(steps + 1) * cfg.h
    zs, ys, _ = _run_rk4(rhs, z, yy, cfg.h, steps, axis=-1)
    return times, zs, ys


# ---------------------------------------------------------------------------
# module-level entry points

def phi_varphi(k, a, zeta, kernel, cfg=None):
    """
    varphi^(k,a)(zeta) for a single degree vector; zeta[w, c, b] as in the
    system state (only zeta[., ., a] is read).
    """
    cfg = (cfg or OdeConfig()).validate()
    zeta = np.asarray(zeta, dtype=float)
    tab = _PhiTable(kernel, a, k, len(kernel.states), cfg)
    probs = tab.evaluate(MeanFieldSystem._child_laws(zeta[None], a))[0]
    err = None if tab.std_error is None else tab.std_error[0]
    return PhiResult(probs, tab.mode, err)


def phi_bar(a, b, zeta, stats, kernel, cfg=None):
    return MeanFieldSystem(stats, kernel, cfg).phi_bar(a, b, zeta)


def psi_bar(a, zeta, stats, kernel, cfg=None):
    return MeanFieldSystem(stats, kernel, cfg).psi_bar(a, zeta)


def initial_state_from_rule(stats, p_s_given_a):
    """zeta(0), y(0) for states drawn from p_{s|a} independently of degree."""
    p = np.asarray(p_s_given_a, dtype=float)
    A = stats.n_labels
    if p.shape[0] != A:
        raise InvalidSpec(f"need one state law per label, got {p.shape[0]} for {A} labels")
    zeta = np.repeat(p.T[:, :, None], A, axis=2)
    return MeanFieldState(zeta, p.T.copy())


def integrate(zeta0, y0, stats, kernel, cfg=None):
    system = MeanFieldSystem(stats, kernel, cfg)
    return system.integrate(MeanFieldState(np.asarray(zeta0, dtype=float), np.asarray(y0, dtype=float)))


# ---------------------------------------------------------------------------
# closed forms for regular graphs

def tltm_phi_plus(k, r, x, z):
    """Probability that a degree-k TLTM node with threshold r moves to 1."""
    if not 0 <= r <= k:
        raise InvalidSpec(f"need 0 <= r <= k, got r={r}, k={k}")
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    rest = 1.0 - x - z
    total = np.zeros(np.broadcast(x, z).shape)
    for u in range(r, k + 1):
        for v in range(0, min(k - u, u - r) + 1):
            total = total + math.comb(k, u) * math.comb(k - u, v) * x ** u * z ** v * rest ** (k - u - v)
    return total if total.ndim else float(total)


def tltm_phi_minus(k, r, x, z):
    return tltm_phi_plus(k, r, z, x)


def brca_phi1(k, y1):
    """
    Probability that a coordinating degree-k node picks 1 when each
    neighbour is in 1 with probability y1 (a tie at even k counts one half).
    """
    y1 = np.asarray(y1, dtype=float)
    total = np.zeros(y1.shape)
    for k1 in range(math.ceil(k / 2), k + 1):
        weight = 0.5 if 2 * k1 == k else 1.0
        total = total + weight * math.comb(k, k1) * y1 ** k1 * (1 - y1) ** (k - k1)
    return total if total.ndim else float(total)


def brca_rhs(k, alpha, y):
    """dy/dt for a fraction alpha of coordinating nodes on a k-regular graph."""
    phi1 = brca_phi1(k, y)
    return alpha * phi1 + (1 - alpha) * (1 - phi1) - np.asarray(y, dtype=float)


def brca_alpha_th(k):
    """Coordinating fraction above which y = 1/2 loses stability (odd k)."""
    half = k // 2
    value = Fraction(1, 2) * (1 + Fraction(2 ** (k - 1), k * math.comb(k - 1, half)))
    return float(value)


def brca_derivative_zeros(k, alpha):
    """
    Roots of y (1 - y) = ((2 alpha - 1) k C(k-1, k//2))^(-1/(k//2)), the
    points where the BRCA right-hand side has zero slope; None when the
    quadratic has no real roots.
    """
    half = k // 2
    scale = (2 * alpha - 1) * k * math.comb(k - 1, half)
    if scale <= 0 or half == 0:
        return None
    c = scale ** (-1.0 / half)
    disc = 0.25 - c
    if disc < 0:
        return None
    root = math.sqrt(disc)
    return 0.5 - root, 0.5 + root


def erg_pi(k, y):
    """
    (pi_R, pi_P, pi_S): best-response probabilities of a degree-k ERG node
    with payoffs b = c/2, neighbours i.i.d. with law y = (y_R, y_P, y_S).
    """
    y = np.asarray(y, dtype=float)
    comps = compositions(int(k), 3)
    probs = np.exp(log_multinomial(comps)) * np.prod(y[None, :] ** comps, axis=1)
    third = k / 3.0
    r, p, s = comps[:, 0], comps[:, 1], comps[:, 2]

    def pi(win, low):
        gt = win > third + 1e-12
        eq_w = np.abs(win - third) <= 1e-12
        lt = low < third - 1e-12
        eq_l = np.abs(low - third) <= 1e-12
        w = 1.0 * (gt & lt) + 0.5 * (eq_w & lt) + 0.5 * (gt & eq_l) + (1.0 / 3.0) * (eq_w & eq_l)
        return float((w * probs).sum())

    return pi(s, p), pi(r, s), pi(p, r)
