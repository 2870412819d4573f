"""Numerical omega/alpha-limit sets, basin labelling, and C1/C2 probes.

All classifiers look at the tail of a long trajectory. Nothing here is a
certificate: a limit set found here is evidence, not a proof.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import isotonic_regression, root
from scipy.spatial import cKDTree

from .dynamics import DEFAULT_DT, SystemDef, Trajectory, as_batch, propagate, rk4_step, _sign
from .io import SCHEMA_VERSION, csv_text, json_text, write_atomic

UNRESOLVED = -1
DIVERGED = -2


@dataclass(frozen=True)
class LimitParams:
    tol_eq: float = 1e-8
    merge_tol: float = 1e-2
    tol_orbit: float = 1e-3
    tol_stationary: float = 1e-3
    tol_resolution: float = 1e-8
    settle: float = 50.0
    observe: float = 20.0
    dt: float = DEFAULT_DT
    norm_bound: float = 1e6
    growth_tol: float = 0.25
    max_cloud_points: int = 2000


@dataclass(frozen=True)
class LimitSet:
    kind: str  # equilibrium | periodic_orbit | attractor_cloud | empty
    representatives: np.ndarray = field(repr=False)
    period_estimate: Optional[float] = None
    source_state: Optional[np.ndarray] = field(default=None, repr=False)
    direction: str = "forward"

    @property
    def point(self) -> np.ndarray:
        return self.representatives[0]

    def summary(self) -> dict:
        reps = self.representatives
        out = {"kind": self.kind, "direction": self.direction, "n_representatives": len(reps)}
        if len(reps):
            out["centroid"] = reps.mean(axis=0).tolist()
        if self.period_estimate is not None:
            out["period_estimate"] = self.period_estimate
        if self.source_state is not None:
            out["source_state"] = np.asarray(self.source_state).tolist()
        return out


def hausdorff(a, b) -> float:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return math.inf
    return max(directed_distance(a, b), directed_distance(b, a))


def directed_distance(a, b) -> float:
    """max over points of ``a`` of the distance to the nearest point of ``b``."""
    return float(cKDTree(b).query(a)[0].max())


# --------------------------------------------------------------------------
# tails


def _tail_window(system: SystemDef, X, settle, observe, dt, direction, norm_bound, record_every=1):
    """Integrate a batch through ``settle`` then record the ``observe`` window.

    Returns (window[T, k, n], times[T], bad[k]) where bad marks rows that
    diverged, exceeded ``norm_bound`` or left the domain at any point.
    """
    pre = propagate(system, X, settle, dt, direction, norm_bound)
    X = pre.states.copy()
    bad = pre.exited | pre.diverged
    n = max(1, int(math.ceil(observe / dt - 1e-9)))
    h = _sign(direction) * observe / n
    f = system.vector_field
    check_domain = system.domain.kind != "full_space"
    frames = [X.copy()]
    times = [0.0]
    limit = norm_bound / math.sqrt(system.dim)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n + 1):
            Y = rk4_step(f, X, h)
            if not check_domain and np.abs(Y).max() <= limit:
                X = Y
                if i % record_every == 0 or i == n:
                    frames.append(X)
                    times.append(abs(h) * i)
                continue
            finite = np.all(np.isfinite(Y), axis=1)
            safe = np.where(finite[:, None], Y, 0.0)
            newbad = ~finite | (np.linalg.norm(safe, axis=1) > norm_bound)
            if check_domain:
                newbad |= ~system.domain.contains(safe)
            bad |= newbad
            X = np.where(bad[:, None], X, Y)
            if i % record_every == 0 or i == n:
                frames.append(X)
                times.append(abs(h) * i)
    return np.stack(frames), np.array(times), bad


def _step_doubling_error(system: SystemDef, states: np.ndarray, h: float) -> float:
    """Relative RK4 step-doubling discrepancy; large values mean the step no longer resolves the orbit."""
    f = system.vector_field
    one = rk4_step(f, states, h)
    two = rk4_step(f, rk4_step(f, states, 0.5 * h), 0.5 * h)
    scale = np.maximum(1.0, np.linalg.norm(states, axis=1))
    return float(np.max(np.linalg.norm(one - two, axis=1) / scale))


def _polish_equilibrium(system: SystemDef, x0: np.ndarray, tol_eq: float):
    f = system.vector_field
    x0 = np.asarray(x0, dtype=float)
    if np.linalg.norm(f(x0[None])[0]) <= tol_eq:
        return x0
    sol = root(lambda x: f(x[None])[0], x0, method="hybr", tol=1e-15)
    x = np.asarray(sol.x, dtype=float)
    if np.all(np.isfinite(x)) and np.linalg.norm(f(x[None])[0]) <= tol_eq:
        return x
    return None


def _section_crossings(tail: np.ndarray, times: np.ndarray):
    """Upward crossings of the hyperplane through the tail mean, normal to the flow."""
    c = tail.mean(axis=0)
    v = tail[1] - tail[0]
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return np.empty((0, tail.shape[1])), np.empty(0), np.empty(0, dtype=int)
    g = (tail - c) @ (v / nv)
    idx = np.flatnonzero((g[:-1] < 0.0) & (g[1:] >= 0.0))
    s = -g[idx] / (g[idx + 1] - g[idx])
    pts = tail[idx] + s[:, None] * (tail[idx + 1] - tail[idx])
    ts = times[idx] + s * (times[idx + 1] - times[idx])
    return pts, ts, idx


def _arc_subsample(path: np.ndarray, spacing: float) -> np.ndarray:
    keep = [0]
    acc = 0.0
    steps = np.linalg.norm(np.diff(path, axis=0), axis=1)
    for i, d in enumerate(steps, start=1):
        acc += d
        if acc >= spacing:
            keep.append(i)
            acc = 0.0
    return path[keep]


def classify_tail(system: SystemDef, tail: np.ndarray, times: np.ndarray, bad: bool,
                  source, direction: str, params: LimitParams) -> LimitSet:
    direction = "backward" if direction in ("backward", "reversed") else "forward"
    src = None if source is None else np.asarray(source, dtype=float)
    if bad or not np.all(np.isfinite(tail)):
        return LimitSet("empty", np.empty((0, system.dim)), None, src, direction)

    speeds = np.linalg.norm(system.vector_field(tail), axis=1)
    if speeds.max() <= params.tol_stationary:
        x = _polish_equilibrium(system, tail[-1], params.tol_eq)
        if x is not None and np.linalg.norm(x - tail[-1]) <= params.merge_tol:
            return LimitSet("equilibrium", x[None, :], None, src, direction)

    pts, ts, idx = _section_crossings(tail, times)
    if len(pts) >= 2:
        jumps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        periods = np.diff(ts)
        if jumps.max() <= params.tol_orbit and np.ptp(periods) <= params.tol_orbit * periods.mean():
            orbit = tail[idx[-2] + 1: idx[-1] + 1]
            reps = _arc_subsample(orbit, params.merge_tol / 5.0)
            return LimitSet("periodic_orbit", reps, float(periods.mean()), src, direction)

    probe = tail[:: max(1, len(tail) // 50)]
    h = float(times[1] - times[0]) if len(times) > 1 else params.dt
    h = min(h, params.dt) * (-1.0 if direction == "backward" else 1.0)
    if _step_doubling_error(system, probe, h) > params.tol_resolution:
        # the integrator has lost the orbit: treat as escaping to infinity
        return LimitSet("empty", np.empty((0, system.dim)), None, src, direction)

    norms = np.linalg.norm(tail, axis=1)
    half = len(norms) // 2
    if norms[half:].max() > (1.0 + params.growth_tol) * norms[:half].max():
        return LimitSet("empty", np.empty((0, system.dim)), None, src, direction)

    stride = max(1, int(math.ceil(len(tail) / params.max_cloud_points)))
    return LimitSet("attractor_cloud", tail[::stride].copy(), None, src, direction)


def estimate_omega_limit(system: SystemDef, xi, settle: Optional[float] = None,
                         observe: Optional[float] = None, dt: Optional[float] = None,
                         direction: str = "forward",
                         params: Optional[LimitParams] = None) -> LimitSet:
    return _estimate_batch(system, as_batch(xi, system.dim), settle, observe, dt, direction, params)[0]


def estimate_omega_limits(system: SystemDef, seeds, direction: str = "forward",
                          params: Optional[LimitParams] = None) -> list:
    """Batched ``estimate_omega_limit``: one LimitSet per seed, in order."""
    return _estimate_batch(system, as_batch(seeds, system.dim), None, None, None, direction, params)


def _estimate_batch(system, X, settle, observe, dt, direction, params):
    p = params or LimitParams()
    settle = p.settle if settle is None else settle
    observe = p.observe if observe is None else observe
    dt = p.dt if dt is None else dt
    p = LimitParams(**{**p.__dict__, "settle": settle, "observe": observe, "dt": dt})
    for x in X:
        if not system.domain.contains(x):
            raise ValueError(f"seed {x.tolist()} outside the domain of {system.name}")
    window, times, bad = _tail_window(system, X, settle, observe, dt, direction, p.norm_bound)
    return [classify_tail(system, window[:, k], times, bool(bad[k]), X[k], direction, p)
            for k in range(len(X))]


def catalog_limit_sets(system: SystemDef, seed_states, params: Optional[LimitParams] = None,
                       direction: str = "forward") -> list:
    """Distinct nonempty limit sets reached from ``seed_states`` (merged by Hausdorff distance)."""
    X = as_batch(seed_states, system.dim)
    if len(X) == 0:
        raise ValueError("seed_states must be nonempty")
    p = params or LimitParams()
    found: list[LimitSet] = []
    for ls in _estimate_batch(system, X, None, None, None, direction, p):
        if ls.kind == "empty":
            continue
        if any(hausdorff(ls.representatives, g.representatives) < p.merge_tol for g in found):
            continue
        found.append(ls)
    return found


def grid_axes(box, resolution) -> list:
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (len(box),))
    axes = []
    for (lo, hi), n in zip(box, res):
        if n < 1:
            raise ValueError("resolution must be >= 1")
        if n == 1:
            axes.append(np.array([0.5 * (lo + hi)]))
        else:
            axes.append(np.array([lo + (hi - lo) * i / (n - 1) for i in range(n)]))
    return axes


def seed_grid(box, resolution) -> np.ndarray:
    axes = grid_axes(box, resolution)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


# --------------------------------------------------------------------------
# basins


@dataclass(frozen=True)
class BasinMap:
    axes: tuple
    labels: np.ndarray  # int, shape = resolution; UNRESOLVED / DIVERGED sentinels
    limit_sets: tuple
    direction: str = "forward"
    system_name: str = ""

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def fraction(self, label: int) -> float:
        return float(np.mean(self.labels == label))

    def label_name(self, label: int) -> str:
        if label == UNRESOLVED:
            return "UNRESOLVED"
        if label == DIVERGED:
            return "DIVERGED"
        return str(int(label))

    def to_csv(self) -> str:
        n = len(self.axes)
        header = [f"x{i + 1}" for i in range(n)] + ["label"]
        return csv_text(header, ([*p, self.label_name(lab)]
                                 for p, lab in zip(self.points, self.labels.ravel())))

    def write_csv(self, path) -> None:
        write_atomic(path, self.to_csv())

    def to_svg(self, **kw) -> str:
        from .plotting import render_basin_svg

        return render_basin_svg(self, **kw)


def _set_points(ls) -> np.ndarray:
    pts = getattr(ls, "representatives", None)
    if pts is None:
        pts = ls.points
    return np.atleast_2d(np.asarray(pts, dtype=float))


def label_basins(system: SystemDef, box, resolution, limit_sets: Sequence,
                 direction: str = "forward", params: Optional[LimitParams] = None) -> BasinMap:
    """Label every lattice node by the limit set its trajectory tail settles onto.

    A node gets index k when its whole recorded tail lies within ``merge_tol``
    of limit set k (nearest wins), DIVERGED when the trajectory blows up or
    leaves the domain, UNRESOLVED otherwise.
    """
    if len(limit_sets) == 0:
        raise ValueError("limit_sets must be nonempty")
    p = params or LimitParams()
    axes = grid_axes(box, resolution)
    shape = tuple(len(a) for a in axes)
    X = seed_grid(box, resolution)
    inside = system.domain.contains(X)
    record_every = max(1, int(round(max(p.dt, p.observe / 20.0) / p.dt)))
    labels = np.full(len(X), DIVERGED, dtype=int)
    idx = np.flatnonzero(inside)
    if idx.size:
        window, _, bad = _tail_window(system, X[idx], p.settle, p.observe, p.dt, direction,
                                      p.norm_bound, record_every)
        T, k, n = window.shape
        flat = window.transpose(1, 0, 2).reshape(k * T, n)
        dists = np.stack([cKDTree(_set_points(ls)).query(flat)[0].reshape(k, T).max(axis=1)
                          for ls in limit_sets], axis=1)
        best = np.argmin(dists, axis=1)
        ok = dists[np.arange(k), best] <= p.merge_tol
        lab = np.where(ok, best, UNRESOLVED)
        lab[bad] = DIVERGED
        labels[idx] = lab
    return BasinMap(tuple(axes), labels.reshape(shape), tuple(limit_sets),
                    "backward" if direction in ("backward", "reversed") else "forward", system.name)


def closed_basin_score(basin_map: BasinMap) -> dict:
    """Per-label boundary statistic: who owns the interface cells of each basin.

    For each pair of adjacent nodes with different labels, the node that is
    *thin* along that axis (both axis-neighbours carry another label, or it
    sits on the box edge) is taken to carry the boundary. The thick side then
    counts the adjacency as open-like (its boundary belongs to another basin)
    and the thin side as closed-like. Two thick sides meeting means the
    separating set is unobserved at this resolution: open-like for both.
    """
    L = basin_map.labels
    if np.any(L == UNRESOLVED):
        raise ValueError("closed_basin_score needs a fully labelled map")
    counts: dict = {}

    def bump(label, closed):
        c = counts.setdefault(int(label), [0, 0])
        c[0 if closed else 1] += 1

    for ax in range(L.ndim):
        n = L.shape[ax]
        if n < 2:
            continue
        lab = np.moveaxis(L, ax, 0)
        prev_diff = np.ones_like(lab, dtype=bool)
        next_diff = np.ones_like(lab, dtype=bool)
        prev_diff[1:] = lab[1:] != lab[:-1]
        next_diff[:-1] = lab[:-1] != lab[1:]
        thin = prev_diff & next_diff
        a, b = lab[:-1], lab[1:]
        ta, tb = thin[:-1], thin[1:]
        for i in zip(*np.nonzero(a != b)):
            la, lb, ta_i, tb_i = a[i], b[i], ta[i], tb[i]
            if ta_i and tb_i:
                bump(la, True), bump(lb, True)
            elif tb_i:
                bump(la, False), bump(lb, True)
            elif ta_i:
                bump(la, True), bump(lb, False)
            else:
                bump(la, False), bump(lb, False)
    out = {}
    for label in np.unique(L):
        c = counts.get(int(label))
        key = basin_map.label_name(int(label))
        if c is None:
            out[key] = {"boundary_adjacencies": 0, "closed_like": None, "open_like": None}
        else:
            tot = c[0] + c[1]
            out[key] = {"boundary_adjacencies": tot, "closed_like": c[0] / tot, "open_like": c[1] / tot}
    return out


# --------------------------------------------------------------------------
# C1 / C2 probes


@dataclass(frozen=True)
class StabilityProbeReport:
    pair_samples: list
    envelope_d: np.ndarray
    fitted_gain: np.ndarray
    max_gain: float
    factor: float
    verdict: str
    horizon: float
    system_name: str = ""

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "system": self.system_name,
            "horizon": self.horizon,
            "verdict": self.verdict,
            "max_gain": self.max_gain,
            "factor": self.factor,
            "envelope": {"initial_distance": self.envelope_d, "alpha": self.fitted_gain},
            "pairs": [{"xi1": list(a), "xi2": list(b), "sup_deviation": s, "initial_distance": d}
                      for a, b, s, d in self.pair_samples],
        }

    def to_json(self) -> str:
        return json_text(self.to_dict())


def incremental_stability_probe(system: SystemDef, region_box, pairs: int, horizon: float,
                                rng_seed: int = 0, dt: float = DEFAULT_DT,
                                factor: float = 10.0) -> StabilityProbeReport:
    """Empirical class-K envelope of sup_t |phi(t,a) - phi(t,b)| against |a - b|.

    The envelope is the isotonic (nondecreasing) fit of sup-deviation on
    initial distance. The verdict flags C2 when the fitted envelope exceeds
    the non-expansive reference alpha(d) = d by more than ``factor`` anywhere.
    """
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    box = np.asarray(region_box, dtype=float).reshape(system.dim, 2)
    rng = np.random.default_rng(rng_seed)
    A = rng.uniform(box[:, 0], box[:, 1], size=(pairs, system.dim))
    B = rng.uniform(box[:, 0], box[:, 1], size=(pairs, system.dim))
    X = np.vstack([A, B])
    d0 = np.linalg.norm(A - B, axis=1)
    sup = d0.copy()
    n = max(1, int(math.ceil(horizon / dt - 1e-9)))
    h = horizon / n
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n):
            X = rk4_step(system.vector_field, X, h)
            dev = np.linalg.norm(X[:pairs] - X[pairs:], axis=1)
            sup = np.fmax(sup, np.where(np.isfinite(dev), dev, np.inf))
    order = np.argsort(d0, kind="stable")
    env = isotonic_regression(sup[order], increasing=True).x
    pos = d0[order] > 0
    gain = float(np.max(env[pos] / d0[order][pos])) if pos.any() else 0.0
    verdict = "violates_C2" if gain > factor else "consistent_with_C2"
    samples = [(A[i].tolist(), B[i].tolist(), float(sup[i]), float(d0[i])) for i in range(pairs)]
    return StabilityProbeReport(samples, d0[order], env, gain, factor, verdict, horizon, system.name)


def precompactness_probe(trajectory: Trajectory, norm_bound: float = 1e6) -> str:
    if trajectory.exited_domain:
        return "diverged"
    if np.max(np.linalg.norm(trajectory.states, axis=1)) > norm_bound:
        return "diverged"
    return "precompact_like"
