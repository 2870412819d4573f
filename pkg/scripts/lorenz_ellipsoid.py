"""Check that long Lorenz trajectories stay inside the absorbing ellipsoid used as the domain.

    python scripts/lorenz_ellipsoid.py [--horizon 200] [--starts 20]
"""
import argparse

import numpy as np

from immersionlab.dynamics import LORENZ_ELLIPSOID_LEVEL, get_system, integrate, lorenz_ellipsoid_level

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--horizon", type=float, default=200.0)
    ap.add_argument("--starts", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    lor = get_system("lorenz")
    rng = np.random.default_rng(args.seed)
    print(f"analytic level {lorenz_ellipsoid_level():.4f}, domain level {LORENZ_ELLIPSOID_LEVEL:.4f}")
    worst = True
    cand = rng.uniform(-20.0, 20.0, size=(50 * args.starts, 3)) + [0.0, 0.0, 25.0]
    for x0 in cand[lor.domain.contains(cand)][: args.starts]:
        traj = integrate(lor, x0, args.horizon)
        inside = bool(lor.domain.contains(traj.states).all()) and not traj.exited_domain
        worst &= inside
        print(f"x0={np.round(x0, 3).tolist()} inside={inside}")
    print("all inside" if worst else "some trajectory left the ellipsoid")
