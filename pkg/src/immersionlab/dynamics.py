"""Benchmark systems, fixed-step RK4 integration and time reversal.

Vector fields act on batches: ``f(X)`` maps an ``(k, n)`` array of states to
an ``(k, n)`` array of velocities. Closed-form flows take ``(t, X)`` with a
scalar ``t`` (or a length-``k`` array) and return ``(k, n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import IntegrationDiverged, UnsupportedOperation
from .io import csv_text, write_atomic

DEFAULT_DT = 1e-3
EXCLUSION_RADIUS = 1e-12

VectorField = Callable[[np.ndarray], np.ndarray]
Flow = Callable[[np.ndarray, np.ndarray], np.ndarray]


def as_batch(x, dim: Optional[int] = None) -> np.ndarray:
    X = np.asarray(x, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(1, -1) if dim is None or X.size == dim else X.reshape(-1, 1)
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"expected states of dimension {dim}, got shape {X.shape}")
    return X


@dataclass(frozen=True)
class DomainSpec:
    kind: str = "full_space"
    bounds: Optional[tuple] = None  # per-axis (lo, hi), inclusive
    excluded: tuple = ()
    center: Optional[tuple] = None
    shape: Optional[tuple] = None  # (x-c)^T S (x-c) <= 1

    @staticmethod
    def full_space() -> "DomainSpec":
        return DomainSpec("full_space")

    @staticmethod
    def box(bounds: Sequence[Sequence[float]]) -> "DomainSpec":
        return DomainSpec("box", bounds=tuple((float(lo), float(hi)) for lo, hi in bounds))

    @staticmethod
    def box_minus_points(bounds, points) -> "DomainSpec":
        pts = tuple(tuple(float(v) for v in np.atleast_1d(p)) for p in points)
        return DomainSpec("box_minus_point_set",
                          bounds=tuple((float(lo), float(hi)) for lo, hi in bounds), excluded=pts)

    @staticmethod
    def ellipsoid(center, shape) -> "DomainSpec":
        S = np.asarray(shape, dtype=float)
        return DomainSpec("ellipsoid", center=tuple(float(c) for c in center),
                          shape=tuple(tuple(row) for row in S))

    def contains(self, x) -> np.ndarray | bool:
        """Membership for one state (returns bool) or a batch (bool array)."""
        X = np.asarray(x, dtype=float)
        single = X.ndim <= 1
        X = X.reshape(1, -1) if single else X
        if self.kind == "full_space":
            ok = np.all(np.isfinite(X), axis=1)
        elif self.kind in ("box", "box_minus_point_set"):
            lo = np.array([b[0] for b in self.bounds])
            hi = np.array([b[1] for b in self.bounds])
            ok = np.all((X >= lo) & (X <= hi), axis=1)
            for p in self.excluded:
                ok &= np.linalg.norm(X - np.asarray(p), axis=1) > EXCLUSION_RADIUS
        elif self.kind == "ellipsoid":
            d = X - np.asarray(self.center)
            q = np.einsum("ki,ij,kj->k", d, np.asarray(self.shape), d)
            ok = q <= 1.0
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        return bool(ok[0]) if single else ok

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.bounds is not None:
            out["bounds"] = [list(b) for b in self.bounds]
        if self.excluded:
            out["excluded"] = [list(p) for p in self.excluded]
        if self.center is not None:
            out["center"] = list(self.center)
            out["shape"] = [list(r) for r in self.shape]
        return out


@dataclass(frozen=True)
class LimitSetSpec:
    """A known limit set; ``points`` is a representative sample (may be empty)."""

    kind: str  # equilibrium | periodic_orbit | attractor_cloud
    label: str
    points: np.ndarray = field(compare=False, repr=False)


@dataclass(frozen=True)
class SystemDef:
    name: str
    dim: int
    vector_field: VectorField = field(compare=False, repr=False)
    domain: DomainSpec = DomainSpec()
    closed_form_flow: Optional[Flow] = field(default=None, compare=False, repr=False)
    known_limit_sets: tuple = field(default=(), compare=False, repr=False)
    notes: str = ""
    seed_box: Optional[tuple] = None
    origin: str = "benchmark"

    def f(self, x) -> np.ndarray:
        return self.vector_field(as_batch(x, self.dim))

    def flow(self, t, x) -> np.ndarray:
        if self.closed_form_flow is None:
            raise UnsupportedOperation(f"system {self.name!r} has no closed-form flow")
        X = as_batch(x, self.dim)
        t = np.asarray(t, dtype=float)
        if t.ndim == 0 and t == 0.0:
            return X.copy()
        return self.closed_form_flow(t, X)

    def equilibria(self) -> list:
        return [s for s in self.known_limit_sets if s.kind == "equilibrium"]


@dataclass(frozen=True)
class Trajectory:
    system: SystemDef
    t0: float
    dt: float
    states: np.ndarray
    times: np.ndarray
    direction: str = "forward"
    exited_domain: bool = False

    @property
    def last(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self) -> str:
        header = ["t"] + [f"x{i + 1}" for i in range(self.states.shape[1])]
        return csv_text(header, (np.concatenate([[t], s]) for t, s in zip(self.times, self.states)))

    def write_csv(self, path) -> None:
        write_atomic(path, self.to_csv())


def _sign(direction: str) -> float:
    if direction in ("forward",):
        return 1.0
    if direction in ("reversed", "backward"):
        return -1.0
    raise ValueError(f"unknown direction {direction!r}")


def rk4_step(f: VectorField, X: np.ndarray, h: float) -> np.ndarray:
    k1 = f(X)
    k2 = f(X + (0.5 * h) * k1)
    k3 = f(X + (0.5 * h) * k2)
    k4 = f(X + h * k3)
    return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(system: SystemDef, xi, horizon: float, dt: float = DEFAULT_DT,
              direction: str = "forward", t0: float = 0.0) -> Trajectory:
    """Integrate one trajectory with fixed-step RK4.

    Steps of size ``dt`` are taken until the remaining time is shorter than
    ``dt``; a final partial step lands exactly on ``horizon``. If a state
    leaves the domain the trajectory is truncated before it and flagged.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    x = as_batch(xi, system.dim)
    if not system.domain.contains(x[0]):
        raise ValueError(f"initial state {x[0].tolist()} is outside the domain of {system.name}")
    sign = _sign(direction)
    n_full = int(math.floor(horizon / dt + 1e-9))
    steps = [dt] * n_full
    rem = horizon - n_full * dt
    if rem > 1e-12 * max(1.0, horizon):
        steps.append(rem)

    f = system.vector_field
    states = [x[0].copy()]
    times = [t0]
    t = 0.0
    exited = False
    with np.errstate(over="ignore", invalid="ignore"):
        for h in steps:
            x = rk4_step(f, x, sign * h)
            if not np.all(np.isfinite(x)):
                raise IntegrationDiverged(t0 + sign * t)
            if not system.domain.contains(x[0]):
                exited = True
                break
            t += h
            states.append(x[0].copy())
            times.append(t0 + sign * t)
    return Trajectory(system, t0, dt, np.array(states), np.array(times),
                      "forward" if sign > 0 else "reversed", exited)


@dataclass(frozen=True)
class Propagation:
    states: np.ndarray
    exited: np.ndarray
    diverged: np.ndarray


def propagate(system: SystemDef, X, horizon: float, dt: float = DEFAULT_DT,
              direction: str = "forward", norm_bound: Optional[float] = None) -> Propagation:
    """Advance a batch of states by exactly ``horizon`` using equal RK4 substeps <= dt.

    Rows that leave the domain, become non-finite or exceed ``norm_bound``
    are frozen at their last valid state and flagged.
    """
    if dt <= 0 or horizon < 0:
        raise ValueError("need dt > 0 and horizon >= 0")
    X = as_batch(X, system.dim).copy()
    exited = np.zeros(len(X), dtype=bool)
    diverged = np.zeros(len(X), dtype=bool)
    if horizon == 0:
        return Propagation(X, exited, diverged)
    n = max(1, int(math.ceil(horizon / dt - 1e-9)))
    h = _sign(direction) * horizon / n
    f = system.vector_field
    check_domain = system.domain.kind != "full_space"
    active = np.ones(len(X), dtype=bool)
    limit = np.inf if norm_bound is None else norm_bound / math.sqrt(system.dim)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n):
            if not check_domain and active.all():
                Y = rk4_step(f, X, h)
                # cheap whole-batch test; per-row bookkeeping only when it fails
                peak = np.abs(Y).max()
                if peak <= limit and np.isfinite(peak):
                    X = Y
                    continue
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            Y = rk4_step(f, X[idx], h)
            bad = ~np.all(np.isfinite(Y), axis=1)
            if norm_bound is not None:
                bad |= np.linalg.norm(np.where(np.isfinite(Y), Y, 0.0), axis=1) > norm_bound
            out = np.zeros(len(idx), dtype=bool)
            if check_domain:
                out = ~bad & ~system.domain.contains(np.where(np.isfinite(Y), Y, 0.0))
            ok = ~bad & ~out
            X[idx[ok]] = Y[ok]
            diverged[idx[bad]] = True
            exited[idx[out]] = True
            active[idx[~ok]] = False
    return Propagation(X, exited, diverged)


def reverse(system: SystemDef) -> SystemDef:
    """The time-reversed system x' = -f(x) with the same domain."""
    f = system.vector_field
    flow = system.closed_form_flow
    name = system.name[:-9] if system.name.endswith("_reversed") else system.name + "_reversed"
    return replace(
        system,
        name=name,
        vector_field=lambda X: -f(X),
        closed_form_flow=(lambda t, X: flow(-np.asarray(t), X)) if flow is not None else None,
        known_limit_sets=tuple(s for s in system.known_limit_sets if s.kind != "attractor_cloud"),
        notes=f"time reversal of {system.name}",
    )


def closed_form_flow_check(system: SystemDef, samples: int = 10, rng_seed: int = 0,
                           box=None, t_max: float = 5.0, dt: float = DEFAULT_DT) -> float:
    """Max |closed form - RK4| over ``samples`` initial states x ``samples`` times."""
    if system.closed_form_flow is None:
        raise UnsupportedOperation(f"system {system.name!r} has no closed-form flow")
    box = np.asarray(box if box is not None else system.seed_box, dtype=float).reshape(system.dim, 2)
    rng = np.random.default_rng(rng_seed)
    xi = rng.uniform(box[:, 0], box[:, 1], size=(samples, system.dim))
    xi = xi[system.domain.contains(xi)]
    times = np.sort(rng.uniform(0.0, t_max, size=samples))
    worst = 0.0
    X, t_prev = xi, 0.0
    for t in times:
        prop = propagate(system, X, t - t_prev, dt)
        if prop.diverged.any() or prop.exited.any():
            raise IntegrationDiverged(t, "flow check sample left the domain")
        X, t_prev = prop.states, t
        worst = max(worst, float(np.max(np.linalg.norm(system.flow(t, xi) - X, axis=1))))
    return worst


# --------------------------------------------------------------------------
# catalog

LORENZ_SIGMA = 10.0
LORENZ_B = 8.0 / 3.0
LORENZ_R = 28.0


def lorenz_ellipsoid_level(sigma=LORENZ_SIGMA, b=LORENZ_B, r=LORENZ_R) -> float:
    """Max of V = r x^2 + s y^2 + s (z - 2r)^2 over the region where dV/dt >= 0.

    dV/dt = -2 s (r x^2 + y^2 + b z^2 - 2 b r z), so every sublevel set
    {V <= c} with c above this value is forward invariant. Valid for b >= 2.
    """
    return sigma * r * r * (b + 1.0 + 1.0 / (b - 1.0))


# calibrated constant: 5% above the analytic level 33450.67
LORENZ_ELLIPSOID_LEVEL = 1.05 * lorenz_ellipsoid_level()


def _eq(label, *coords) -> LimitSetSpec:
    return LimitSetSpec("equilibrium", label, np.array([coords], dtype=float))


def _circle(n=4000) -> np.ndarray:
    th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([np.cos(th), np.sin(th)])


def _f_quadratic(X):
    return X * X - 1.0


def _flow_quadratic(t, X):
    x = X
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (x + 1.0) / (x - 1.0) * np.exp(-2.0 * np.reshape(t, (-1, 1)))
        out = (z + 1.0) / (z - 1.0)
    return np.where(x == 1.0, 1.0, out)


def _f_sine(X):
    return np.sin(X)


def _flow_sine(t, X):
    return 2.0 * np.arctan(np.tan(X / 2.0) * np.exp(np.reshape(t, (-1, 1))))


def _f_cubic(X):
    return X - X ** 3


def _flow_cubic(t, X):
    t = np.reshape(t, (-1, 1))
    return X * np.exp(t) / np.sqrt(1.0 + X * X * np.expm1(2.0 * t))


def _f_rational(X):
    return X * (1.0 - X * X) / (1.0 + X * X)


def _flow_rational(t, X):
    # x/(1-x^2) grows like e^t; pick the root of C x^2 + x - C = 0 on the same side
    t = np.reshape(t, (-1, 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        C = X / (1.0 - X * X) * np.exp(t)
        s = np.sqrt(1.0 + 4.0 * C * C)
        inner = 2.0 * C / (1.0 + s)
        outer = -(1.0 + s) / (2.0 * C)
    out = np.where(np.abs(X) < 1.0, inner, outer)
    fixed = (X == 0.0) | (np.abs(X) == 1.0)
    return np.where(fixed, X, out)


def rational_flow_unit_interval(t, x0):
    """The printed closed-form solution, valid for x0 in (0, 1)."""
    return (x0 ** 2 - 1 + np.sqrt((x0 ** 2 - 1) ** 2 + 4 * x0 ** 2 * np.exp(2 * t))) / (2 * x0 * np.exp(t))


def _f_limit_cycle(X):
    x1, x2 = X[:, 0], X[:, 1]
    r2 = x1 * x1 + x2 * x2
    out = np.empty_like(X)
    out[:, 0] = x1 - x2 - x1 * r2
    out[:, 1] = x1 + x2 - x2 * r2
    return out


def _flow_limit_cycle(t, X):
    t = np.reshape(t, (-1,)) * np.ones(len(X))
    r2 = np.sum(X * X, axis=1)
    s = np.exp(t) / np.sqrt(1.0 + r2 * np.expm1(2.0 * t))
    c, sn = np.cos(t), np.sin(t)
    return np.column_stack([s * (c * X[:, 0] - sn * X[:, 1]), s * (sn * X[:, 0] + c * X[:, 1])])


def _f_duffing(X):
    x1, x2 = X[:, 0], X[:, 1]
    out = np.empty_like(X)
    out[:, 0] = x2
    out[:, 1] = -0.5 * x2 - x1 * (x1 * x1 - 1.0)
    return out


def _f_vanderpol(X):
    x1, x2 = X[:, 0], X[:, 1]
    out = np.empty_like(X)
    out[:, 0] = x2 - x1 * x1 * x1 + x1
    out[:, 1] = -x1
    return out


def _f_lorenz(X):
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    out = np.empty_like(X)
    out[:, 0] = LORENZ_SIGMA * (y - x)
    out[:, 1] = LORENZ_R * x - y - x * z
    out[:, 2] = x * y - LORENZ_B * z
    return out


@lru_cache(maxsize=1)
def vanderpol_reference_cycle(n: int = 4000) -> np.ndarray:
    """One period of the Van der Pol cycle from a tight adaptive solver (independent of RK4)."""
    from scipy.integrate import solve_ivp

    def rhs(_t, x):
        return [x[1] - x[0] ** 3 + x[0], -x[0]]

    def section(_t, x):
        return x[1]

    section.direction = -1.0
    sol = solve_ivp(rhs, (0.0, 120.0), [2.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-12,
                    events=section, dense_output=True)
    hits = sol.t_events[0]
    hits = hits[hits > 60.0]
    t_a, t_b = hits[-2], hits[-1]
    ts = np.linspace(t_a, t_b, n, endpoint=False)
    return sol.sol(ts).T


def _linear(name, A, seed_box, notes) -> SystemDef:
    A = np.asarray(A, dtype=float)
    n = A.shape[0]

    def f(X):
        return X @ A.T

    def flow(t, X):
        from scipy.linalg import expm

        t = np.reshape(t, (-1,))
        if t.size == 1:
            return X @ expm(A * t[0]).T
        return np.stack([expm(A * ti) @ x for ti, x in zip(t, X)])

    return SystemDef(name, n, f, DomainSpec.full_space(), flow,
                     (_eq("origin", *([0.0] * n)),), notes, seed_box, "auxiliary")


@lru_cache(maxsize=1)
def _build_catalog() -> tuple:
    s72 = math.sqrt(LORENZ_B * (LORENZ_R - 1.0))
    lorenz_shape = np.diag([LORENZ_R, LORENZ_SIGMA, LORENZ_SIGMA]) / LORENZ_ELLIPSOID_LEVEL
    systems = [
        SystemDef("quadratic1d", 1, _f_quadratic, DomainSpec.full_space(), _flow_quadratic,
                  (_eq("-1", -1.0), _eq("+1", 1.0)),
                  "x' = x^2 - 1; stable -1, unstable +1, finite-time blow-up for x > 1",
                  ((-2.0, 2.0),)),
        SystemDef("sine1d", 1, _f_sine, DomainSpec.box([(0.0, math.pi)]), _flow_sine,
                  (_eq("0", 0.0), _eq("pi", math.pi)),
                  "x' = sin(x) on [0, pi]", ((0.0, math.pi),)),
        SystemDef("cubic1d", 1, _f_cubic, DomainSpec.full_space(), _flow_cubic,
                  (_eq("-1", -1.0), _eq("0", 0.0), _eq("+1", 1.0)),
                  "x' = x - x^3", ((-2.0, 2.0),)),
        SystemDef("rational1d", 1, _f_rational, DomainSpec.full_space(), _flow_rational,
                  (_eq("-1", -1.0), _eq("0", 0.0), _eq("+1", 1.0)),
                  "x' = x (1 - x^2) / (1 + x^2); three equilibria", ((-2.0, 2.0),)),
        SystemDef("limitcycle2d", 2, _f_limit_cycle, DomainSpec.full_space(), _flow_limit_cycle,
                  (_eq("origin", 0.0, 0.0), LimitSetSpec("periodic_orbit", "unit circle", _circle())),
                  "planar system with unstable origin and stable unit-circle cycle",
                  ((-2.0, 2.0), (-2.0, 2.0))),
        SystemDef("duffing", 2, _f_duffing, DomainSpec.full_space(), None,
                  (_eq("(1,0)", 1.0, 0.0), _eq("(-1,0)", -1.0, 0.0), _eq("(0,0)", 0.0, 0.0)),
                  "unforced damped Duffing oscillator, damping 0.5",
                  ((-2.0, 2.0), (-2.0, 2.0))),
        SystemDef("vanderpol", 2, _f_vanderpol, DomainSpec.full_space(), None,
                  (_eq("origin", 0.0, 0.0),
                   LimitSetSpec("periodic_orbit", "limit cycle", vanderpol_reference_cycle())),
                  "Van der Pol in Lienard form", ((-3.0, 3.0), (-3.0, 3.0))),
        SystemDef("lorenz", 3, _f_lorenz,
                  DomainSpec.ellipsoid((0.0, 0.0, 2 * LORENZ_R), lorenz_shape), None,
                  (_eq("origin", 0.0, 0.0, 0.0),
                   _eq("C+", s72, s72, LORENZ_R - 1.0), _eq("C-", -s72, -s72, LORENZ_R - 1.0),
                   LimitSetSpec("attractor_cloud", "Lorenz attractor", np.empty((0, 3)))),
                  "sigma=10, b=8/3, r=28 on an invariant ellipsoid centred at (0, 0, 2r)",
                  ((-20.0, 20.0), (-25.0, 25.0), (5.0, 45.0))),
        _linear("decay1d", [[-2.0]], ((-2.0, 2.0),), "x' = -2x"),
        _linear("contract1d", [[-1.0]], ((-1.0, 1.0),), "x' = -x"),
        _linear("contract2d", -np.eye(2), ((-1.0, 1.0), (-1.0, 1.0)), "x' = -x in the plane"),
        _linear("expand1d", [[1.0]], ((-1.0, 1.0),), "x' = x"),
        _linear("rotation2d", [[0.0, -1.0], [1.0, 0.0]], ((-2.0, 2.0), (-2.0, 2.0)),
                "harmonic oscillator x1' = -x2, x2' = x1"),
    ]
    return tuple(systems)


def catalog() -> list:
    return list(_build_catalog())


def get_system(name: str) -> SystemDef:
    for s in _build_catalog():
        if s.name == name:
            return s
    if name.endswith("_reversed"):
        return reverse(get_system(name[: -len("_reversed")]))
    raise KeyError(f"unknown system {name!r}; known: {[s.name for s in _build_catalog()]}")
