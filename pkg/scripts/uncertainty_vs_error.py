"""Regress per-pixel flow error on normalised uncertainty for simulated flows."""

import argparse

from flowcalib import NoiseConfig, PerturbRange, SceneConfig, default_intrinsics, make_experiment
from flowcalib.flow import normalize_uncertainty
from flowcalib.metrics import flow_error, uncertainty_regression


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--flow-sigma", type=float, default=0.5)
    ap.add_argument("--sigma-spread", type=float, default=0.6)
    ap.add_argument("--outlier-fraction", type=float, default=0.05)
    ap.add_argument("--outlier-magnitude", type=float, default=20.0)
    ap.add_argument("--uninformative", action="store_true", help="constant q (negative control)")
    args = ap.parse_args()

    noise = NoiseConfig(flow_sigma=args.flow_sigma, sigma_spread=args.sigma_spread,
                        outlier_fraction=args.outlier_fraction, outlier_magnitude=args.outlier_magnitude,
                        uncertainty_informative=not args.uninformative)
    K = default_intrinsics()
    ex = make_experiment(SceneConfig(), noise, PerturbRange.from_degrees(0.10, 5.0), K, seed=args.seed)
    m = ex.flow_noisy.valid & ex.flow_gt.valid
    e_f = flow_error(ex.flow_noisy, ex.flow_gt)[m]
    qn = normalize_uncertainty(ex.flow_noisy).q[m]
    try:
        res = uncertainty_regression(e_f, qn)
    except ValueError as exc:
        print(f"no fit: {exc}")
        return
    print(f"pixels = {m.sum()}")
    print(f"slope = {res.slope:.4f}, intercept = {res.intercept:.4f}")
    print(f"R^2 = {res.r_squared:.3f}, p = {res.p_value:.2e}")


if __name__ == "__main__":
    main()
