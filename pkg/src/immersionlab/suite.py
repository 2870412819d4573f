"""Acceptance checks shared by the test-suite and the ``reproduce-paper`` command.

Every check returns a :class:`CheckResult` with the measured values, so the
caller decides how to report.  Nothing here asserts.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import get_system, integrate, propagate, reverse
from .immersions import exact_catalog, get_candidate, verify_immersion
from .learning import (Dictionary, exclusion_test, fit_embedding,
                       holdout_identity_check, sample_pairs, sweep, trend_ok)
from .limits import (LimitParams, catalog_limit_sets, estimate_omega_limit, estimate_omega_limits,
                     hausdorff, incremental_stability_probe, label_basins, seed_grid)

BENCH_1D = ("quadratic1d", "sine1d", "cubic1d", "rational1d")
BENCH_2D = ("limitcycle2d", "duffing", "vanderpol")


@dataclass(frozen=True)
class SuiteSettings:
    """Sizes used by the checks.  ``quick()`` shrinks grids and seed counts, never tolerances."""
    collapse_seeds: int = 5
    basin_cells: int = 401
    reversal_seeds: int = 8
    stability_pairs: int = 200

    @staticmethod
    def quick() -> "SuiteSettings":
        return SuiteSettings(collapse_seeds=2, basin_cells=41, reversal_seeds=4, stability_pairs=200)


@dataclass
class CheckResult:
    key: str
    title: str
    passed: bool
    values: dict = field(default_factory=dict)
    seconds: float = 0.0
    budget: float = math.inf

    def line(self) -> str:
        within = "" if self.seconds <= self.budget else f" (over {self.budget:g}s budget)"
        shown = ", ".join(f"{k}={_short(v)}" for k, v in self.values.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.key} {self.title}: {shown} [{self.seconds:.1f}s{within}]"


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(str(_short(x)) for x in v) + "]"
    return str(v)


def _timed(key: str, title: str, budget: float, fn: Callable[[], tuple]) -> CheckResult:
    t0 = time.perf_counter()
    passed, values = fn()
    return CheckResult(key, title, bool(passed), values, time.perf_counter() - t0, budget)


# ---------------------------------------------------------------- individual checks

def check_exact_residuals(settings: SuiteSettings = SuiteSettings()) -> CheckResult:
    def run():
        vals, ok = {}, True
        for c in exact_catalog():
            closed = verify_immersion(c).max_residual
            rk4 = verify_immersion(c, dt=1e-3, use_closed_form=False).max_residual
            vals[c.name] = [closed, rk4]
            ok &= closed <= 1e-6 and rk4 <= 1e-5
        return ok, vals
    return _timed("C1", "exact immersion residuals [closed, rk4]", 10, run)


def check_rational_formula(settings: SuiteSettings = SuiteSettings()) -> CheckResult:
    def run():
        c = get_candidate("rational1d")
        sys_ = c.system
        x0 = np.array([[0.2], [0.5], [0.8]])
        base = 3.0 * np.log(3.0 * x0 / (2.0 - 2.0 * x0 * x0))
        worst, X, t_prev = 0.0, x0.copy(), 0.0
        for t in (0.0, 1.0, 2.0, 5.0):
            target = np.hstack([base + 3.0 * t, np.full_like(base, 3.0)])
            if t > t_prev:
                X = propagate(sys_, X, t - t_prev).states
                t_prev = t
            for phi in (sys_.flow(t, x0), X):
                worst = max(worst, float(np.linalg.norm(c(phi) - target, axis=1).max()))
        return worst <= 1e-6, {"max_error": worst}
    return _timed("C2", "rational 1D immersion formula", 1, run)


def check_linear_recovery(settings: SuiteSettings = SuiteSettings()) -> CheckResult:
    def run():
        dec = fit_embedding(sample_pairs(get_system("decay1d"), [(-1.0, 1.0)], 50, 0.1, 0),
                            Dictionary.monomials(1, 1), 1)
        rot = fit_embedding(sample_pairs(get_system("rotation2d"), [(-2.0, 2.0)] * 2, 50, 0.1, 0),
                            Dictionary.monomials(2, 1), 2)
        e1 = abs(float(dec.A[0, 0]) + 2.0) if dec.A is not None else math.inf
        e2 = float(np.abs(rot.A - np.array([[0.0, -1.0], [1.0, 0.0]])).max()) if rot.A is not None else math.inf
        return e1 <= 1e-8 and e2 <= 1e-6, {"decay_A_error": e1, "rotation_A_error": e2}
    return _timed("C3", "linear system recovery", 1, run)


def oracle_dictionary() -> Dictionary:
    c = get_candidate("limitcycle2d")
    return Dictionary.custom("limit_cycle_oracle", 2, c.map_F, 3)


def check_oracle_dictionary(settings: SuiteSettings = SuiteSettings()) -> CheckResult:
    def run():
        data = sample_pairs(get_system("limitcycle2d"), [(0.25, 2.0), (-2.0, 2.0)], 1000, 0.1, 0)
        emb = fit_embedding(data, oracle_dictionary(), 3)
        target = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -2.0]])
        err = float(np.abs(emb.A - target).max()) if emb.A is not None else math.inf
        return emb.fit_residual <= 1e-6 and err <= 1e-4, {"fit_residual": emb.fit_residual, "A_error": err}
    return _timed("C4", "oracle dictionary on the limit cycle", 5, run)


def check_collapse_trend(settings: SuiteSettings = SuiteSettings()) -> CheckResult:
    def run():
        rep = sweep(get_system("duffing"), Dictionary.monomials(2, 4), 5, [0.01], [100, 1000, 10000],
                    list(range(settings.collapse_seeds)), [(-2.0, 2.0), (-2.0, 2.0)])
        means = [m for _, m in rep.means(0.01)]
        ratio = means[-1] / means[0] if means[0] > 0 else math.inf
        ok = trend_ok(means) and ratio <= 0.5
        return ok, {"means_N100_1000_10000": means, "ratio": ratio, "monotone": trend_ok(means)}
    return _timed("C5", "collapse trend on Duffing (tau=0.01)", 300, run)


def check_exclusion(settings: SuiteSettings = SuiteSettings()) -> CheckResult:
    def run():
        duff = get_system("duffing")
        first = exclusion_test(duff, lambda X: np.atleast_2d(X)[:, :1], 0.1, [100, 1000, 10000],
                               [(-2.0, 2.0), (-2.0, 2.0)], seeds=(0,))
        rms = [r.rms for r in first.by_seed(0)]
        obj = [r.objective for r in first.by_seed(0)]
        quad = exclusion_test(get_system("quadratic1d"), get_candidate("quadratic1d"), 0.1,
                              [100, 1000, 10000], [(-3.0, 0.9)], seeds=(0,))
        qmax = max(r.rms for r in quad.rows)
        rms_monotone = all(b >= a for a, b in zip(rms, rms[1:]))
        ok = rms[1] >= 1e-3 and rms_monotone and qmax <= 1e-6
        return ok, {"x1_rms": rms, "rms_nondecreasing": rms_monotone,
                    "x1_objective_nondecreasing": all(b >= a for a, b in zip(obj, obj[1:])),
                    "exact_quadratic_max_rms": qmax}
    return _timed("C6", "fixed-map exclusion test", 120, run)


def check_catalog_recovery(settings: SuiteSettings = SuiteSettings()) -> CheckResult:
    def run():
        vals, ok = {}, True
        for name in BENCH_1D + BENCH_2D:
            s = get_system(name)
            found = catalog_limit_sets(s, seed_grid(s.seed_box, 21 if s.dim == 1 else 5))
            worst = max(min(hausdorff(k.points, f.representatives) for f in found)
                        for k in s.known_limit_sets if len(k.points))
            vals[name] = worst
            ok &= worst <= 1e-2
            if name == "vanderpol":
                kinds = sorted(f.kind for f in found)
                vdp_ok = kinds == ["equilibrium", "periodic_orbit"] and float(
                    np.linalg.norm(next(f for f in found if f.kind == "equilibrium").point)) <= 1e-2
                vals["vanderpol_structure"] = vdp_ok
                ok &= vdp_ok
        lor = get_system("lorenz")
        ls = estimate_omega_limit(lor, [1.0, 1.0, 1.0])
        traj = integrate(lor, [1.0, 1.0, 1.0], 70.0)
        inside = bool(lor.domain.contains(traj.states).all() and not traj.exited_domain
                      and lor.domain.contains(ls.representatives).all())
        vals["lorenz_kind"] = ls.kind
        vals["lorenz_inside_ellipsoid"] = inside
        ok &= ls.kind == "attractor_cloud" and inside
        return ok, vals
    return _timed("C7", "limit-set catalog recovery (max Hausdorff)", 120, run)


def check_basin_oracle(settings: SuiteSettings = SuiteSettings()) -> CheckResult:
    def run():
        s = get_system("cubic1d")
        n = settings.basin_cells
        bm = label_basins(s, [(-2.0, 2.0)], n, s.known_limit_sets)
        x = bm.axes[0]
        centers = np.array([ls.points[0, 0] for ls in s.known_limit_sets])
        got = np.array([centers[l] if l >= 0 else np.nan for l in bm.labels])
        mask = np.arange(n) != n // 2
        agree = float(np.mean(got[mask] == np.sign(x[mask])))
        return agree == 1.0, {"cells": n, "agreement": agree}
    return _timed("C8", "basin labels vs sign oracle on x - x^3", 30, run)


def check_stability(settings: SuiteSettings = SuiteSettings()) -> CheckResult:
    def run():
        con = incremental_stability_probe(get_system("contract2d"), [(-1.0, 1.0)] * 2,
                                          settings.stability_pairs, 3.0, rng_seed=0)
        exp = incremental_stability_probe(get_system("expand1d"), [(-1.0, 1.0)],
                                          settings.stability_pairs, 3.0, rng_seed=0)
        ok = con.verdict == "consistent_with_C2" and exp.verdict == "violates_C2"
        return ok, {"contracting": con.verdict, "expanding": exp.verdict,
                    "gains": [con.max_gain, exp.max_gain]}
    return _timed("C9", "incremental stability probes", 10, run)


def reversal_seeds(k: int) -> np.ndarray:
    ang = 2.0 * math.pi * np.arange(k) / k
    return np.vstack([[0.0, 0.0], 0.05 * np.column_stack([np.cos(ang), np.sin(ang)])])


def check_reversal(settings: SuiteSettings = SuiteSettings()) -> CheckResult:
    def run():
        duff = get_system("duffing")
        X = reversal_seeds(settings.reversal_seeds)
        merge = LimitParams().merge_tol
        back = estimate_omega_limits(duff, X, direction="backward")
        fwd = estimate_omega_limits(reverse(duff), X)
        dists = [hausdorff(a.representatives, b.representatives) for a, b in zip(back, fwd)]
        kinds_match = all(a.kind == b.kind for a, b in zip(back, fwd))
        ok = kinds_match and max(dists) <= merge
        return ok, {"seeds": len(X), "kinds_match": kinds_match, "max_distance": max(dists),
                    "kinds": sorted({a.kind for a in back})}
    return _timed("C10", "reversal duality on Duffing", 30, run)


def check_holdout_identity(settings: SuiteSettings = SuiteSettings()) -> CheckResult:
    def run():
        res = holdout_identity_check(get_system("quadratic1d"), get_candidate("quadratic1d"), [(-3.0, 0.9)])
        return res.passed, {"max_fit_residual": max(res.residuals), "holdout_error": res.holdout_max_error}
    return _timed("C11", "zero-residual fit implies the immersion identity", 60, run)


CHECKS = {
    "C1": check_exact_residuals,
    "C2": check_rational_formula,
    "C3": check_linear_recovery,
    "C4": check_oracle_dictionary,
    "C5": check_collapse_trend,
    "C6": check_exclusion,
    "C7": check_catalog_recovery,
    "C8": check_basin_oracle,
    "C9": check_stability,
    "C10": check_reversal,
    "C11": check_holdout_identity,
}

