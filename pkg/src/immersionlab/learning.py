"""Data-driven approximate linear immersions over a finite dictionary (EDMD).

Pairs (x, phi(tau, x)) are drawn uniformly from a box, a one-step matrix is
fitted over the dictionary, and the m slowest-decaying non-constant
eigenfunctions form the learned map F = W psi(x).  The collapse metric then
measures how far F still separates distinct limit sets.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import eig, logm, lstsq
from scipy.spatial.distance import pdist

from .dynamics import DEFAULT_DT, SystemDef, propagate
from .errors import DegenerateData, EmptyDomain, ImmersionLabError, ResamplingExhausted
from .io import SCHEMA_VERSION, csv_text, json_text, write_atomic
from .limits import hausdorff

CONSTANT_CV_TOL = 1e-8


# ---------------------------------------------------------------- dictionaries

@dataclass(frozen=True)
class Dictionary:
    kind: str  # monomials | gaussian_rbf | custom
    dim: int
    degree: int = 0
    centers: Optional[tuple] = None
    width: float = 1.0
    name: str = ""
    func: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False, compare=False)
    size: int = 0

    @staticmethod
    def monomials(dim: int, degree: int) -> "Dictionary":
        if degree < 1:
            raise ValueError("monomial degree must be >= 1")
        return Dictionary("monomials", dim, degree=degree)

    @staticmethod
    def gaussian_rbf(centers, width: float, with_constant: bool = True) -> "Dictionary":
        C = np.atleast_2d(np.asarray(centers, dtype=float))
        if width <= 0:
            raise ValueError("width must be positive")
        return Dictionary("gaussian_rbf", C.shape[1], degree=int(with_constant),
                          centers=tuple(map(tuple, C)), width=float(width))

    @staticmethod
    def custom(name: str, dim: int, func: Callable[[np.ndarray], np.ndarray], size: int) -> "Dictionary":
        return Dictionary("custom", dim, name=name, func=func, size=size)

    def exponents(self) -> list:
        """Monomial exponent tuples, constant first, then x1..xn, then higher degrees."""
        out = []
        for d in range(self.degree + 1):
            for combo in itertools.combinations_with_replacement(range(self.dim), d):
                e = [0] * self.dim
                for i in combo:
                    e[i] += 1
                out.append(tuple(e))
        return out

    @property
    def basis_count(self) -> int:
        if self.kind == "monomials":
            return math.comb(self.dim + self.degree, self.degree)
        if self.kind == "gaussian_rbf":
            return len(self.centers) + self.degree
        return self.size

    @property
    def constant_index(self) -> Optional[int]:
        if self.kind == "monomials" or (self.kind == "gaussian_rbf" and self.degree):
            return 0
        return None

    def eval(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "monomials":
            cols = [np.prod(X ** np.asarray(e, dtype=float), axis=1) for e in self.exponents()]
            return np.column_stack(cols)
        if self.kind == "gaussian_rbf":
            C = np.asarray(self.centers)
            d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
            G = np.exp(-d2 / (2.0 * self.width ** 2))
            return np.column_stack([np.ones(len(X)), G]) if self.degree else G
        return np.asarray(self.func(X), dtype=float).reshape(len(X), self.size)

    def labels(self) -> list:
        if self.kind == "monomials":
            return ["*".join(f"x{i + 1}^{p}" for i, p in enumerate(e) if p) or "1" for e in self.exponents()]
        if self.kind == "gaussian_rbf":
            return (["1"] if self.degree else []) + [f"rbf{i}" for i in range(len(self.centers))]
        return [f"{self.name}[{i}]" for i in range(self.size)]

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "dim": self.dim, "basis_count": self.basis_count}
        if self.kind == "monomials":
            d["degree"] = self.degree
        elif self.kind == "gaussian_rbf":
            d.update(centers=[list(c) for c in self.centers], width=self.width, constant=bool(self.degree))
        else:
            d["name"] = self.name
        return d


# ---------------------------------------------------------------- sampling

@dataclass(frozen=True)
class SamplePairs:
    tau: float
    X: np.ndarray
    X_plus: np.ndarray
    box: tuple
    rng_seed: int
    system_name: str
    resampled: int = 0

    @property
    def N(self) -> int:
        return len(self.X)

    def prefix(self, n: int) -> "SamplePairs":
        return SamplePairs(self.tau, self.X[:n], self.X_plus[:n], self.box, self.rng_seed,
                           self.system_name, self.resampled)


def sample_pairs(system: SystemDef, box, N: int, tau: float, rng_seed: int = 0,
                 dt: float = DEFAULT_DT) -> SamplePairs:
    """N pairs (x, phi(tau, x)) with x uniform on box intersected with the domain.

    Draws are made in batches of N from one generator, so a smaller N with
    the same seed yields a prefix of a larger one whenever nothing is rejected.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if not tau > 0:
        raise ValueError("tau must be > 0")
    B = np.asarray(box, dtype=float).reshape(system.dim, 2)
    rng = np.random.default_rng(rng_seed)
    cap = 100 * N
    kept_x, kept_y, drawn, accepted, in_domain = [], [], 0, 0, 0
    while accepted < N:
        if drawn >= cap:
            if in_domain == 0:
                raise EmptyDomain(f"no point of box {B.tolist()} lies in the domain of {system.name}")
            raise ResamplingExhausted(f"only {accepted}/{N} valid pairs after {drawn} draws")
        batch = min(N, cap - drawn)
        X = rng.uniform(B[:, 0], B[:, 1], size=(batch, system.dim))
        drawn += batch
        X = X[system.domain.contains(X)]
        in_domain += len(X)
        if not len(X):
            continue
        prop = propagate(system, X, tau, dt)
        ok = ~(prop.exited | prop.diverged)
        kept_x.append(X[ok])
        kept_y.append(prop.states[ok])
        accepted += int(ok.sum())
    Xs = np.vstack(kept_x)[:N]
    Ys = np.vstack(kept_y)[:N]
    return SamplePairs(float(tau), Xs, Ys, tuple(map(tuple, B)), rng_seed, system.name, drawn - N)


# ---------------------------------------------------------------- fitting

def _on_negative_real_axis(lam: np.ndarray) -> bool:
    return bool(np.any((lam.real <= 0.0) & (np.abs(lam.imag) <= 1e-12 * np.maximum(1.0, np.abs(lam)))))


def principal_log_generator(K: np.ndarray, tau: float) -> Optional[np.ndarray]:
    """log(K)/tau via the principal matrix logarithm, or None if it does not exist."""
    K = np.atleast_2d(K)
    if _on_negative_real_axis(np.linalg.eigvals(K)):
        return None
    L = logm(K)
    if np.iscomplexobj(L):
        if np.abs(L.imag).max() > 1e-8 * max(1.0, np.abs(L).max()):
            return None
        L = L.real
    return np.asarray(L) / tau


def _canonical_pair(w: np.ndarray, nonconst: np.ndarray) -> tuple:
    """Real and imaginary rows of a complex eigenvector with a fixed phase and shared scale."""
    s = np.sum(w[nonconst] ** 2)
    w = w * np.exp(-0.5j * np.angle(s)) if abs(s) > 1e-14 else w
    re = w.real
    if re[nonconst][np.argmax(np.abs(re[nonconst]))] < 0:
        w = -w
    scale = math.sqrt(2.0) / np.linalg.norm(w[nonconst])
    return w.real * scale, w.imag * scale


def _canonical_row(v: np.ndarray, nonconst: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v[nonconst])
    return -v if v[nonconst][np.argmax(np.abs(v[nonconst]))] < 0 else v


@dataclass(frozen=True)
class LearnedEmbedding:
    dictionary: Dictionary
    W: np.ndarray
    K: np.ndarray
    A: Optional[np.ndarray]
    fit_residual: float
    tau: float
    N: int
    eigenvalues: np.ndarray
    log_failed: bool = False

    @property
    def target_dim(self) -> int:
        return self.W.shape[0]

    def __call__(self, X) -> np.ndarray:
        return self.dictionary.eval(X) @ self.W.T

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "dictionary": self.dictionary.to_dict(),
            "tau": self.tau,
            "N": self.N,
            "W": self.W,
            "K": self.K,
            "A": self.A,
            "log_failed": self.log_failed,
            "fit_residual": self.fit_residual,
            "eigenvalues_abs": np.abs(self.eigenvalues),
        }

    def to_json(self) -> str:
        return json_text(self.to_dict())


def fit_embedding(samples: SamplePairs, dictionary: Dictionary, m: int) -> LearnedEmbedding:
    """Two-stage EDMD fit reduced to m eigen-directions of the one-step matrix."""
    p = dictionary.basis_count
    if not 1 <= m <= p:
        raise ValueError(f"target dimension m={m} must be in [1, {p}]")
    PX = dictionary.eval(samples.X)
    PY = dictionary.eval(samples.X_plus)
    KT, _, rank, _ = lstsq(PX, PY, lapack_driver="gelsd")
    if rank < p:
        raise DegenerateData(int(rank), p)
    lam, vl = eig(KT.T, left=True, right=False)
    vl = vl.conj()  # scipy returns v with v^H K = lam v^H

    vals = PX @ vl
    spread = vals.std(axis=0)
    cv = spread / (np.abs(vals.mean(axis=0)) + spread + 1e-300)
    order = sorted(range(p), key=lambda i: (-abs(lam[i]), np.angle(lam[i]), i))
    nonconst = np.ones(p, dtype=bool)
    if dictionary.constant_index is not None:
        nonconst[dictionary.constant_index] = False

    rows, chosen = [], []
    for i in order:
        if len(rows) >= m:
            break
        if cv[i] <= CONSTANT_CV_TOL:
            continue
        if abs(lam[i].imag) > 1e-12 * max(1.0, abs(lam[i])):
            if lam[i].imag < 0:
                continue  # the conjugate partner carries the same real span
            re, im = _canonical_pair(vl[:, i], nonconst)
            rows.append(re)
            if len(rows) < m:
                rows.append(im)
        else:
            rows.append(_canonical_row(vl[:, i].real, nonconst))
        chosen.append(lam[i])
    if len(rows) < m:
        raise DegenerateData(len(rows), m)
    W = np.array(rows)

    Z, Zp = PX @ W.T, PY @ W.T
    KrT = lstsq(Z, Zp, lapack_driver="gelsd")[0]
    K = KrT.T
    resid = float(np.sqrt(np.mean(np.sum((Zp - Z @ KrT) ** 2, axis=1))))
    A = principal_log_generator(K, samples.tau)
    return LearnedEmbedding(dictionary, W, K, A, resid, samples.tau, samples.N,
                            np.asarray(chosen), A is None)


# ---------------------------------------------------------------- collapse metric

def box_lattice(box, min_points: int = 1000, domain=None) -> np.ndarray:
    """Tensor lattice (corners included) with at least min_points nodes, optionally domain-filtered."""
    B = np.asarray(box, dtype=float).reshape(-1, 2)
    n = B.shape[0]
    per = max(2, math.ceil(min_points ** (1.0 / n)))
    while per ** n < min_points:
        per += 1
    axes = [np.linspace(lo, hi, per) for lo, hi in B]
    P = np.array(list(itertools.product(*axes)))
    return P[domain.contains(P)] if domain is not None else P


def _reps(ls) -> np.ndarray:
    pts = getattr(ls, "representatives", None)
    return np.atleast_2d(np.asarray(ls.points if pts is None else pts, dtype=float))


@dataclass(frozen=True)
class CollapseValue:
    metric: float
    spread: float
    max_distance: float


def collapse_details(embedding, limit_sets: Sequence, box_sample) -> CollapseValue:
    if len(limit_sets) < 2:
        raise ValueError("collapse metric needs at least two limit sets")
    images = [np.atleast_2d(embedding(_reps(ls))) for ls in limit_sets]
    cloud = np.vstack([np.atleast_2d(embedding(np.asarray(box_sample, dtype=float)))] + images)
    spread = float(pdist(cloud).max()) if len(cloud) > 1 else 0.0
    dmax = max(hausdorff(a, b) for a, b in itertools.combinations(images, 2))
    if spread < 1e-12:
        return CollapseValue(0.0, spread, dmax)
    return CollapseValue(min(1.0, dmax / spread), spread, dmax)


def collapse_metric(embedding, limit_sets: Sequence, box_sample) -> float:
    """Largest Hausdorff distance between limit-set images, relative to the diameter of F(box)."""
    return collapse_details(embedding, limit_sets, box_sample).metric


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class CollapseRecord:
    tau: float
    N: int
    seed: int
    fit_residual: float
    collapse_metric: float
    spread: float
    status: str  # OK | FAILED | NOT_APPLICABLE
    message: str = ""


@dataclass(frozen=True)
class CollapseReport:
    system_name: str
    dictionary: Dictionary
    m: int
    records: list

    def summary(self) -> list:
        out = []
        for tau in sorted({r.tau for r in self.records}):
            for N in sorted({r.N for r in self.records if r.tau == tau}):
                vals = [r.collapse_metric for r in self.records
                        if r.tau == tau and r.N == N and r.status == "OK"]
                out.append({"tau": tau, "N": N, "n_ok": len(vals),
                            "mean": float(np.mean(vals)) if vals else math.nan,
                            "std": float(np.std(vals)) if vals else math.nan})
        return out

    def means(self, tau: float) -> list:
        return [(s["N"], s["mean"]) for s in self.summary() if s["tau"] == tau]

    def to_csv(self) -> str:
        header = ["tau", "N", "seed", "fit_residual", "collapse_metric", "spread", "status"]
        return csv_text(header, ([r.tau, r.N, r.seed, r.fit_residual, r.collapse_metric, r.spread, r.status]
                                 for r in self.records))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "system": self.system_name,
            "dictionary": self.dictionary.to_dict(),
            "m": self.m,
            "records": [r.__dict__ for r in self.records],
            "summary": self.summary(),
            "note": "trend tolerances are engineering choices; no claim that any tau is below the critical time",
        }

    def to_json(self) -> str:
        return json_text(self.to_dict())

    def write(self, stem) -> list:
        return [write_atomic(f"{stem}.csv", self.to_csv()), write_atomic(f"{stem}.json", self.to_json())]


def sweep(system: SystemDef, dictionary: Dictionary, m: int, tau_list, N_list, seeds, box,
          limit_sets: Optional[Sequence] = None, dt: float = DEFAULT_DT, workers: int = 1,
          box_sample=None) -> CollapseReport:
    """Fit and score every (tau, N, seed) cell; failures are recorded per cell."""
    if not len(tau_list) or not len(N_list) or not len(seeds):
        raise ValueError("tau_list, N_list and seeds must be nonempty")
    sets = [ls for ls in (system.known_limit_sets if limit_sets is None else limit_sets) if _reps(ls).size]
    sample = box_lattice(box, domain=system.domain) if box_sample is None else box_sample
    cells = [(t, n, s) for t in tau_list for n in N_list for s in seeds]

    def run(cell):
        tau, N, seed = cell
        try:
            emb = fit_embedding(sample_pairs(system, box, N, tau, seed, dt), dictionary, m)
        except ImmersionLabError as exc:
            return CollapseRecord(tau, N, seed, math.nan, math.nan, math.nan, "FAILED", str(exc))
        if len(sets) < 2:
            return CollapseRecord(tau, N, seed, emb.fit_residual, math.nan, math.nan, "NOT_APPLICABLE",
                                  "fewer than two limit sets")
        cv = collapse_details(emb, sets, sample)
        return CollapseRecord(tau, N, seed, emb.fit_residual, cv.metric, cv.spread, "OK")

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(run, cells))
    else:
        records = [run(c) for c in cells]
    return CollapseReport(system.name, dictionary, m, records)


def trend_ok(means: Sequence[float], inversion_tol: float = 0.02, max_inversions: int = 1) -> bool:
    """Non-increasing up to at most max_inversions rises, each no larger than inversion_tol."""
    rises = [b - a for a, b in zip(means, means[1:]) if b > a]
    return len(rises) <= max_inversions and all(r <= inversion_tol for r in rises)


# ---------------------------------------------------------------- fixed-map exclusion test

@dataclass(frozen=True)
class ExclusionRow:
    N: int
    seed: int
    rms: float
    objective: float  # sqrt of the summed squared residual


@dataclass(frozen=True)
class ExclusionReport:
    system_name: str
    tau: float
    distinguishes: bool
    rows: list

    def by_seed(self, seed: int) -> list:
        return sorted((r for r in self.rows if r.seed == seed), key=lambda r: r.N)

    def mean_rms(self) -> list:
        Ns = sorted({r.N for r in self.rows})
        return [(n, float(np.mean([r.rms for r in self.rows if r.N == n]))) for n in Ns]

    def to_csv(self) -> str:
        return csv_text(["N", "seed", "rms", "objective"], ([r.N, r.seed, r.rms, r.objective] for r in self.rows))

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "system": self.system_name, "tau": self.tau,
                "distinguishes_limit_sets": self.distinguishes, "rows": [r.__dict__ for r in self.rows]}

    def to_json(self) -> str:
        return json_text(self.to_dict())

    def write(self, stem) -> list:
        return [write_atomic(f"{stem}.csv", self.to_csv()), write_atomic(f"{stem}.json", self.to_json())]


def best_fit_residual(F: Callable, X: np.ndarray, Xp: np.ndarray) -> tuple:
    """Least-squares K for a fixed map F; returns (K, rms, sqrt(SSR))."""
    Z = np.atleast_2d(F(X))
    Zp = np.atleast_2d(F(Xp))
    KT = lstsq(Z, Zp, lapack_driver="gelsd")[0]
    r2 = np.sum((Zp - Z @ KT) ** 2, axis=1)
    return KT.T, float(np.sqrt(np.mean(r2))), float(np.sqrt(np.sum(r2)))


def exclusion_test(system: SystemDef, F_fixed: Callable, tau: float, N_list, box, seeds=(0,),
                   dt: float = DEFAULT_DT, limit_sets: Optional[Sequence] = None) -> ExclusionReport:
    """Best-fit residual of one fixed map over nested data sets of growing size."""
    Ns = sorted(int(n) for n in N_list)
    if not Ns or Ns[0] < 1:
        raise ValueError("every N must be >= 1")
    sets = [ls for ls in (system.known_limit_sets if limit_sets is None else limit_sets) if _reps(ls).size]
    images = []
    for ls in sets:
        try:
            images.append(np.atleast_2d(F_fixed(_reps(ls))))
        except ImmersionLabError:
            continue
    distinguishes = any(hausdorff(a, b) > 1e-6 for a, b in itertools.combinations(images, 2))
    rows = []
    for seed in seeds:
        data = sample_pairs(system, box, Ns[-1], tau, seed, dt)
        for n in Ns:
            _, rms, obj = best_fit_residual(F_fixed, data.X[:n], data.X_plus[:n])
            rows.append(ExclusionRow(n, int(seed), rms, obj))
    return ExclusionReport(system.name, float(tau), distinguishes, rows)


# ---------------------------------------------------------------- zero-residual implies immersion

@dataclass(frozen=True)
class HoldoutCheck:
    taus: list
    residuals: list
    generator: Optional[np.ndarray]
    holdout_max_error: float
    passed: bool


def holdout_identity_check(system: SystemDef, F: Callable, box, taus=None, n_samples: int = 10_000,
                           n_holdout: int = 100, t_max: float = 5.0, rng_seed: int = 0,
                           dt: float = 1e-4, fit_tol: float = 1e-10, identity_tol: float = 1e-4
                           ) -> HoldoutCheck:
    """Fit a fixed F at several sampling times, then test F(phi(t, xi)) = exp(At) F(xi) on fresh points.

    The flow for the held-out points comes from the system's closed form, so
    it is independent of the integrator used to build the training pairs.
    """
    from .immersions import propagator

    taus = [2.0 ** -k for k in range(1, 7)] if taus is None else list(taus)
    residuals, gens = [], []
    for i, tau in enumerate(taus):
        data = sample_pairs(system, box, n_samples, tau, rng_seed + i, dt)
        K, rms, _ = best_fit_residual(F, data.X, data.X_plus)
        residuals.append(rms)
        gens.append(principal_log_generator(K, tau))
    A = gens[-1]
    B = np.asarray(box, dtype=float).reshape(system.dim, 2)
    rng = np.random.default_rng(rng_seed + 10_000)
    xi = rng.uniform(B[:, 0], B[:, 1], size=(n_holdout, system.dim))
    ts = rng.uniform(0.0, t_max, size=n_holdout)
    err = math.inf
    if A is not None:
        F0 = np.atleast_2d(F(xi))
        errs = [np.linalg.norm(np.atleast_2d(F(system.flow(t, xi[j])))[0] - propagator(A, t) @ F0[j])
                for j, t in enumerate(ts)]
        err = float(max(errs))
    passed = A is not None and max(residuals) <= fit_tol and err <= identity_tol
    return HoldoutCheck(taus, residuals, A, err, passed)
