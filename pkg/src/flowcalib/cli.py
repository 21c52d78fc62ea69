"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gradcheck_mod
from . import io
from .camera import rasterize_depth
from .flow import ground_truth_flow, normalize_uncertainty
from .metrics import aggregate, calibration_error, csv_records, format_table
from .sim import load_sim_config, make_experiment
from .solver import SolverError, SolverOptions, correspondences_from_flow, solve_gated, solve_weighted

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3

SIM_FILES = {
    "cloud": "cloud.bin",
    "intrinsics": "intrinsics.txt",
    "extrinsic_gt": "extrinsic_gt.txt",
    "extrinsic_init": "extrinsic_init.txt",
    "flow_gt": "flow_gt.dxqf",
    "flow_noisy": "flow_noisy.dxqf",
}
MANIFEST = "manifest.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError()


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flowcalib", description="LiDAR-camera extrinsic calibration from calibration flow")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="write a synthetic calibration frame")
    s.add_argument("--config", help="INI file with [scene] [noise] [perturbation] [camera] sections")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--n-points", type=int)
    s.add_argument("--geometry", choices=["uniform-frustum", "planes", "clusters"])
    s.add_argument("--flow-sigma", type=float)
    s.add_argument("--outlier-fraction", type=float)
    s.add_argument("--outlier-magnitude", type=float)
    s.add_argument("--max-translation", type=float, help="metres")
    s.add_argument("--max-rotation-deg", type=float)

    f = sub.add_parser("flow-gt", help="ground-truth calibration flow for a frame")
    f.add_argument("--cloud", required=True)
    f.add_argument("--intrinsics", required=True)
    f.add_argument("--init-extrinsic", required=True)
    f.add_argument("--gt-extrinsic", required=True)
    f.add_argument("--out", required=True)

    v = sub.add_parser("solve", help="refine the initial extrinsic from a flow field")
    v.add_argument("--cloud", required=True)
    v.add_argument("--intrinsics", required=True)
    v.add_argument("--init-extrinsic", required=True)
    v.add_argument("--flow", required=True)
    v.add_argument("--gated", action="store_true", help="drop uncertain pairs, then unit-weight least squares")
    v.add_argument("--threshold", type=float, default=0.5)
    v.add_argument("--max-iters", type=int, default=50)
    v.add_argument("--tol", type=float, default=1e-10)
    v.add_argument("--gt-extrinsic", help="report the error against this extrinsic")
    v.add_argument("--out", help="write the refined extrinsic here (report goes next to it)")

    e = sub.add_parser("eval", help="extrinsic error of predictions against ground truth")
    e.add_argument("pred", help="extrinsic file or directory")
    e.add_argument("gt", help="extrinsic file or directory (matched by file name)")
    e.add_argument("--out", help="per-frame CSV records")

    g = sub.add_parser("gradcheck", help="pose Jacobian vs central differences")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--instances", type=int, default=50)
    g.add_argument("--out", help="per-instance CSV records")
    return p


def cmd_simulate(args) -> int:
    overrides = {
        "scene.n_points": args.n_points,
        "scene.geometry": args.geometry,
        "noise.flow_sigma": args.flow_sigma,
        "noise.outlier_fraction": args.outlier_fraction,
        "noise.outlier_magnitude": args.outlier_magnitude,
        "perturbation.max_translation": args.max_translation,
        "perturbation.max_rotation_deg": args.max_rotation_deg,
    }
    cfg = load_sim_config(args.config, overrides)
    ex = make_experiment(cfg.scene, cfg.noise, cfg.perturb, cfg.camera, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_point_cloud(ex.cloud, out / SIM_FILES["cloud"])
    io.write_intrinsics(cfg.camera, out / SIM_FILES["intrinsics"])
    io.write_extrinsic(ex.T_gt, out / SIM_FILES["extrinsic_gt"])
    io.write_extrinsic(ex.T_init, out / SIM_FILES["extrinsic_init"])
    io.write_flow(ex.flow_gt, out / SIM_FILES["flow_gt"])
    io.write_flow(ex.flow_noisy, out / SIM_FILES["flow_noisy"])
    lines = [f"seed = {args.seed}"] + [f"{k} = {v}" for k, v in SIM_FILES.items()]
    (out / MANIFEST).write_text("\n".join(lines) + "\n")
    print(f"wrote {len(SIM_FILES)} files and {MANIFEST} to {out}")
    return EXIT_OK


def cmd_flow_gt(args) -> int:
    cloud = io.read_point_cloud(args.cloud)
    K = io.read_intrinsics(args.intrinsics)
    flow = ground_truth_flow(cloud, io.read_extrinsic(args.init_extrinsic), io.read_extrinsic(args.gt_extrinsic), K)
    io.write_flow(flow, args.out)
    print(f"valid pixels: {int(flow.valid.sum())}")
    return EXIT_OK


def cmd_solve(args) -> int:
    cloud = io.read_point_cloud(args.cloud)
    K = io.read_intrinsics(args.intrinsics)
    T_init = io.read_extrinsic(args.init_extrinsic)
    flow = io.read_flow(args.flow)
    T_gt = io.read_extrinsic(args.gt_extrinsic) if args.gt_extrinsic else None
    if flow.shape != K.shape:
        raise io.MalformedFileError(f"flow is {flow.shape[1]}x{flow.shape[0]}, image is {K.width}x{K.height}")
    opts = SolverOptions(max_iterations=args.max_iters, convergence_tol=args.tol)
    depth = rasterize_depth(cloud, T_init, K)
    cs = correspondences_from_flow(depth, cloud, flow, K)
    if args.gated:
        if flow.valid.any():
            nq = cs.sample(normalize_uncertainty(flow).q)
        else:
            nq = np.ones(len(cs))
        rep = solve_gated(T_init, cs, K, nq, args.threshold, opts)
    else:
        rep = solve_weighted(T_init, cs, K, opts)
    T_pred = rep.estimate(T_init)

    lines = [
        f"mode = {'gated' if args.gated else 'weighted'}",
        f"correspondences = {len(cs)}",
        f"inlier_count = {rep.inlier_count}",
        f"iterations = {rep.iterations}",
        f"converged = {str(rep.converged).lower()}",
        f"final_cost = {rep.final_cost:.17g}",
    ]
    if args.gated:
        lines.insert(1, f"threshold = {args.threshold:g}")
    if T_gt is not None:
        err = calibration_error(T_pred, T_gt)
        lines += [f"E_t_cm = {err.e_t:.6g}", f"E_r_deg = {err.e_r:.6g}"]
    report = "\n".join(lines) + "\n"
    print(report, end="")
    if args.out:
        io.write_extrinsic(T_pred, args.out)
        out = Path(args.out)
        out.with_name(out.name + ".report.txt").write_text(report)
    else:
        print(io.format_extrinsic(T_pred), end="")
    if not rep.converged:
        print(f"error: solver did not converge in {rep.iterations} iterations", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _pairs(pred: Path, gt: Path) -> list[tuple[str, Path, Path]]:
    if pred.is_dir() != gt.is_dir():
        raise io.MalformedFileError("pred and gt must both be files or both be directories")
    if not pred.is_dir():
        return [(pred.stem, pred, gt)]
    names = sorted({p.name for p in pred.iterdir() if p.is_file()} & {p.name for p in gt.iterdir() if p.is_file()})
    if not names:
        raise io.MalformedFileError(f"no matching file names in {pred} and {gt}")
    return [(Path(n).stem, pred / n, gt / n) for n in names]


def cmd_eval(args) -> int:
    pred, gt = Path(args.pred), Path(args.gt)
    for p in (pred, gt):
        if not p.exists():
            raise io.UnreadableFileError(f"{p} does not exist")
    frames = [(fid, calibration_error(io.read_extrinsic(a), io.read_extrinsic(b))) for fid, a, b in _pairs(pred, gt)]
    if len(frames) == 1 and not pred.is_dir():
        print(format_table([("Error", frames[0][1])]))
    else:
        summary = aggregate([e for _, e in frames])
        print(f"frames = {summary.count}")
        print(summary.table())
    if args.out:
        Path(args.out).write_text(csv_records(frames))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.instances < 1:
        raise UsageError("--instances must be at least 1")
    results = gradcheck_mod.run_gradcheck(args.seed, args.instances)
    worst = max(r.max_rel_error for r in results)
    failed = [r.seed for r in results if not r.passed]
    print(f"instances = {len(results)}")
    print(f"max_relative_error = {worst:.3e}")
    print(f"tolerance = {gradcheck_mod.TOLERANCE:.0e}")
    print("result = " + ("PASS" if not failed else f"FAIL (seeds {failed})"))
    if args.out:
        Path(args.out).write_text("seed,max_rel_error\n" + "".join(f"{r.seed},{r.max_rel_error!r}\n" for r in results))
    return EXIT_OK if not failed else EXIT_SOLVER


COMMANDS = {
    "simulate": cmd_simulate,
    "flow-gt": cmd_flow_gt,
    "solve": cmd_solve,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        if str(exc):
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (io.DataError, OSError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
