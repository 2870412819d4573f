"""Closed-form linear immersions and numerical checks of F(phi(t, x)) = exp(At) F(x)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.spatial import cKDTree

from .dynamics import DEFAULT_DT, DomainSpec, SystemDef, as_batch, get_system, propagate
from .errors import DomainViolation
from .io import SCHEMA_VERSION, csv_text, json_text, write_atomic
from .limits import hausdorff


def propagator(A, t: float) -> np.ndarray:
    """exp(A t) by scaling-and-squaring with a Pade approximant."""
    return expm(np.asarray(A, dtype=float) * float(t))


@dataclass(frozen=True)
class ImmersionCandidate:
    name: str
    source_system: str
    target_dim: int
    map_F: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    generator_A: np.ndarray = field(repr=False, compare=False)
    domain: DomainSpec = DomainSpec()
    continuity: str = "continuous"
    injective_claim: str = "unknown"
    sample_box: Optional[tuple] = None
    notes: str = ""

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.generator_A, dtype=float))
        if A.shape != (self.target_dim, self.target_dim):
            raise ValueError(f"generator_A has shape {A.shape}, expected {self.target_dim}x{self.target_dim}")
        object.__setattr__(self, "generator_A", A)

    @property
    def system(self) -> SystemDef:
        return get_system(self.source_system)

    def __call__(self, x) -> np.ndarray:
        X = as_batch(x, self.system.dim)
        inside = self.domain.contains(X)
        if not np.all(inside):
            raise DomainViolation(X[np.argmin(inside)].tolist(),
                                  f"{self.name}: point {X[np.argmin(inside)].tolist()} is outside the domain")
        with np.errstate(divide="ignore", invalid="ignore"):
            Z = np.asarray(self.map_F(X), dtype=float).reshape(len(X), self.target_dim)
        finite = np.all(np.isfinite(Z), axis=1)
        if not np.all(finite):
            bad = X[np.argmin(finite)].tolist()
            raise DomainViolation(bad, f"{self.name}: F undefined at {bad}")
        return Z


def _F_quadratic(X):
    return (X + 1.0) / (X - 1.0)


def _F_sine(X):
    c = np.cos(X)
    return (c + 1.0) / (c - 1.0)


def _F_cubic(X):
    return X ** -2.0 - 1.0


def _F_limit_cycle(X):
    r = np.linalg.norm(X, axis=1)
    return np.column_stack([X[:, 0] / r, X[:, 1] / r, r ** -2.0 - 1.0])


def _F_rational(X):
    """Discontinuous one-to-one immersion; one horizontal line per interval between equilibria."""
    x = X[:, 0]
    level = np.select([x < -1.0, x < 0.0, x < 1.0], [1.0, 2.0, 3.0], 4.0)
    at_eq = (x == 0.0) | (np.abs(x) == 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = level * np.log(np.abs(3.0 * x / (-2.0 + 2.0 * x * x)))
    return np.column_stack([np.where(at_eq, x, u), np.where(at_eq, 0.0, level)])


def exact_catalog() -> list:
    inf = math.inf
    rot_decay = np.zeros((3, 3))
    rot_decay[0, 1], rot_decay[1, 0], rot_decay[2, 2] = -1.0, 1.0, -2.0
    return [
        ImmersionCandidate("quadratic1d", "quadratic1d", 1, _F_quadratic, [[-2.0]],
                           DomainSpec.box_minus_points([(-inf, 1.0)], [1.0]),
                           "continuous", "yes", ((-3.0, 0.9),),
                           "F = (x+1)/(x-1) into z' = -2z on (-inf, 1)"),
        ImmersionCandidate("sine1d", "sine1d", 1, _F_sine, [[-2.0]],
                           DomainSpec.box_minus_points([(0.0, math.pi)], [0.0]),
                           "continuous", "yes", ((0.05, math.pi),),
                           "F = (cos x + 1)/(cos x - 1) into z' = -2z on (0, pi]"),
        ImmersionCandidate("cubic1d", "cubic1d", 1, _F_cubic, [[-2.0]],
                           DomainSpec.box_minus_points([(-inf, inf)], [0.0]),
                           "continuous", "no", ((-2.5, 2.5),),
                           "F = x^-2 - 1 into y' = -2y on R minus the origin (even, not one-to-one)"),
        ImmersionCandidate("limitcycle2d", "limitcycle2d", 3, _F_limit_cycle, rot_decay,
                           DomainSpec.box_minus_points([(-inf, inf), (-inf, inf)], [(0.0, 0.0)]),
                           "continuous", "yes", ((-2.5, 2.5), (-2.5, 2.5)),
                           "F = (x1/|x|, x2/|x|, |x|^-2 - 1) into rotation plus decay"),
        ImmersionCandidate("rational1d", "rational1d", 2, _F_rational, [[0.0, 1.0], [0.0, 0.0]],
                           DomainSpec.full_space(), "discontinuous", "yes", ((-3.0, 3.0),),
                           "piecewise log map into u' = v, v' = 0"),
    ]


def get_candidate(name: str) -> ImmersionCandidate:
    for c in exact_catalog():
        if c.name == name:
            return c
    raise KeyError(f"unknown immersion candidate {name!r}")


def default_xi_grid(candidate: ImmersionCandidate, n: int = 20) -> np.ndarray:
    """n initial states spread over the candidate's sample box (avoiding excluded points)."""
    box = np.asarray(candidate.sample_box, dtype=float)
    if len(box) == 1:
        lo, hi = box[0]
        return np.array([lo + (hi - lo) * i / (n - 1) for i in range(n)])[:, None]
    radii = np.linspace(0.2, min(box[:, 1]), n)
    ang = np.arange(n) * math.pi * (3.0 - math.sqrt(5.0))
    return np.column_stack([radii * np.cos(ang), radii * np.sin(ang)])


@dataclass(frozen=True)
class ImmersionResidualReport:
    candidate: str
    samples: list  # (xi, t, residual)
    max_residual: float
    grid_spec: dict
    method: str

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "candidate": self.candidate,
            "method": self.method,
            "max_residual": self.max_residual,
            "grid": self.grid_spec,
            "samples": [{"xi": list(xi), "t": t, "residual": r} for xi, t, r in self.samples],
        }

    def to_json(self) -> str:
        return json_text(self.to_dict())

    def to_csv(self) -> str:
        n = len(self.samples[0][0]) if self.samples else 1
        header = [f"xi{i + 1}" for i in range(n)] + ["t", "residual"]
        return csv_text(header, ([*xi, t, r] for xi, t, r in self.samples))

    def write(self, stem) -> list:
        return [write_atomic(f"{stem}.json", self.to_json()), write_atomic(f"{stem}.csv", self.to_csv())]


def verify_immersion(candidate: ImmersionCandidate, xi_grid=None, t_grid=None,
                     dt: float = DEFAULT_DT, use_closed_form: bool = True) -> ImmersionResidualReport:
    """Residual |F(phi(t, xi)) - exp(At) F(xi)| over a (xi, t) grid.

    The flow comes from the closed form when available (and requested),
    otherwise from RK4 with step <= dt.
    """
    system = candidate.system
    X = as_batch(default_xi_grid(candidate) if xi_grid is None else xi_grid, system.dim)
    T = np.linspace(0.0, 5.0, 20) if t_grid is None else np.asarray(t_grid, dtype=float)
    F0 = candidate(X)
    closed = use_closed_form and system.closed_form_flow is not None
    order = np.argsort(T, kind="stable")
    samples = [None] * (len(X) * len(T))
    state, t_prev = X, 0.0
    for j in order:
        t = float(T[j])
        if t == 0.0:
            phi = X
        elif closed:
            phi = system.flow(t, X)
        else:
            prop = propagate(system, state, t - t_prev, dt)
            state, t_prev = prop.states, t
            phi = state
        res = np.linalg.norm(candidate(phi) - F0 @ propagator(candidate.generator_A, t).T, axis=1)
        for i in range(len(X)):
            samples[i * len(T) + j] = (X[i].tolist(), t, float(res[i]))
    worst = max(s[2] for s in samples)
    grid = {"n_xi": len(X), "n_t": len(T), "t_min": float(T.min()), "t_max": float(T.max()),
            "dt": dt if not closed else None}
    return ImmersionResidualReport(candidate.name, samples, worst, grid, "closed_form" if closed else "rk4")


@dataclass(frozen=True)
class InjectivityResult:
    verdict: str  # no_collision_found | collision
    pair: Optional[tuple] = None
    samples_used: int = 0


def injectivity_probe(candidate: ImmersionCandidate, samples: int, rng_seed: int = 0,
                      collision_tol: float = 1e-3, box=None,
                      region: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> InjectivityResult:
    """Look for xi1, xi2 with |F(xi1) - F(xi2)| <= tol while |xi1 - xi2| >= 100 tol."""
    if samples < 2:
        raise ValueError("samples must be >= 2")
    n = candidate.system.dim
    box = np.asarray(box if box is not None else candidate.sample_box, dtype=float).reshape(n, 2)
    rng = np.random.default_rng(rng_seed)
    X = rng.uniform(box[:, 0], box[:, 1], size=(samples, n))
    keep = candidate.domain.contains(X)
    if region is not None:
        keep &= np.asarray(region(X), dtype=bool)
    X = X[keep]
    Z = candidate(X)
    for i, j in sorted(cKDTree(Z).query_pairs(collision_tol)):
        if np.linalg.norm(X[i] - X[j]) >= 100.0 * collision_tol:
            return InjectivityResult("collision", (X[i].copy(), X[j].copy()), len(X))
    return InjectivityResult("no_collision_found", None, len(X))


@dataclass(frozen=True)
class CollapseTable:
    labels: list
    distances: np.ndarray

    @property
    def max_distance(self) -> float:
        return float(self.distances.max()) if self.distances.size else 0.0


def _representatives(ls) -> np.ndarray:
    pts = getattr(ls, "representatives", None)
    return np.atleast_2d(np.asarray(ls.points if pts is None else pts, dtype=float))


def collapse_witness(candidate, limit_sets: Sequence) -> CollapseTable:
    """Pairwise Hausdorff distances between the images F(Omega_i)."""
    images = [np.atleast_2d(candidate(_representatives(ls))) for ls in limit_sets]
    k = len(images)
    D = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            D[i, j] = D[j, i] = hausdorff(images[i], images[j])
    labels = [getattr(ls, "label", None) or getattr(ls, "kind", str(i)) for i, ls in enumerate(limit_sets)]
    return CollapseTable(labels, D)
