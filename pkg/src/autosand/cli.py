"""Command-line entry points for the sanding workcell simulation.

Exit codes: 0 all faces pass, 2 quality failure, 3 planner failure,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import harness
from . import planner as pln
from . import pointcloud as pc
from .config import PipelineConfig, load_config, save_config

EXIT_OK = 0
EXIT_QUALITY = 2
EXIT_PLANNER = 3
EXIT_NUMERIC = 4


def _load(args) -> PipelineConfig:
    if args.config:
        return load_config(args.config)
    return PipelineConfig()


def _classify(err: Exception) -> int:
    cause = err.cause if isinstance(err, harness.PipelineError) else err
    if isinstance(cause, (pln.NoPathFound, pln.InvalidEndpoint)):
        return EXIT_PLANNER
    return EXIT_NUMERIC


def cmd_scan(args) -> int:
    config = _load(args)
    out = Path(args.out)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    cell = harness.build_workcell(config)
    rough = harness._roughness_array(
        cell, {f: config.object.roughness for f in cell.face_ids})
    harness._scan_stage(config, cell, rough, out)
    print(f"wrote {config.scanner.n_views} views to {out / 'scans'}")
    return EXIT_OK


def cmd_model(args) -> int:
    config = _load(args)
    out = Path(args.out)
    scans_dir = Path(args.scans) if args.scans else out / "scans"
    manifest = json.loads((scans_dir / "views.json").read_text())
    scans = [pc.load_ply(scans_dir / f) for f in manifest["files"]]
    model_cloud = pc.merge_scans(scans, manifest["angles"], icp_params=config.icp,
                                 sor_k=config.sor.k, sor_alpha=config.sor.alpha)
    out.mkdir(parents=True, exist_ok=True)
    pc.save_ply(model_cloud, out / "model.ply")
    print(f"merged {len(scans)} views into {out / 'model.ply'} ({len(model_cloud)} points)")
    return EXIT_OK


def cmd_plan(args) -> int:
    config = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cell = harness.build_workcell(config)
    try:
        seq = harness._sequence_stage(config, cell, out)
        order = [cell.tasks[i] for i in seq.order]
        current = np.asarray(config.pipeline.home, dtype=float)
        for k, task in enumerate(order):
            path = pln.plan_single_query(cell.planner_ctx, current, task.approach)
            traj = pln.lspb_parameterize(path, config.robot.velocity_limits,
                                         config.robot.acceleration_limits,
                                         config.planner.sample_dt)
            harness.write_csv(out / f"transit_{k:02d}_face{task.face_id:02d}.csv",
                              ["t"] + [f"q{i}" for i in range(1, 5)]
                              + [f"qd{i}" for i in range(1, 5)]
                              + [f"qdd{i}" for i in range(1, 5)],
                              np.hstack([traj.times[:, None], traj.positions,
                                         traj.velocities, traj.accelerations]))
            current = task.approach
    except harness.PipelineError as err:
        print(f"error: {err}", file=sys.stderr)
        return _classify(err)
    print(f"sequence {json.loads((out / 'sequence.json').read_text())['order']}"
          f" cost {seq.total_cost:.4f}")
    return EXIT_OK


def cmd_sand(args) -> int:
    config = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.face is None:
            setup = harness.nominal_setup(config,
                                          duration=args.duration or 10.0)
            result = harness.simulate_sanding(setup, config.sim.transient,
                                              config.sim.tail_fraction)
            name = "sand_nominal.csv"
        else:
            cell = harness.build_workcell(config)
            task = next(t for t in cell.tasks if t.face_id == args.face)
            result = harness.sanding_phase(config, task, duration=args.duration,
                                           noise_seed=config.sim.seed)
            name = f"sand_face{args.face:02d}.csv"
    except (dyn.IntegrationDiverged, dyn.SingularJacobian, dyn.JointLimitViolation) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    harness.write_csv(out / name, harness.LOG_COLUMNS, result.log)
    print(f"steady force {result.steady_force:.3f} N "
          f"(error {result.steady_force_error:+.3f} N), "
          f"tail |zq| {result.mean_zq_tail:.2e}, "
          f"descent {'ok' if result.monitor.passed else 'VIOLATED'}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load(args)
    try:
        report = harness.run_pipeline(config, args.out)
    except harness.PipelineError as err:
        print(f"error: {err}", file=sys.stderr)
        return _classify(err)
    print(f"pipeline {'PASS' if report.passed else 'FAIL'}: "
          f"{sum(f.passed for f in report.faces)}/{len(report.faces)} faces, "
          f"travel cost {report.total_travel_cost:.4f}, "
          f"wall {report.wall_time:.1f} s")
    return EXIT_OK if report.passed else EXIT_QUALITY


def cmd_report(args) -> int:
    data = json.loads((Path(args.run) / "report.json").read_text())
    print(f"{'face':>4} {'seq':>3} {'force [N]':>10} {'|zq| max':>9} "
          f"{'resands':>7} {'pass':>5}")
    for f in data["faces"]:
        print(f"{f['face_id']:>4} {f['sequence_position']:>3} "
              f"{f['steady_force']:>10.3f} {f['max_zq_after_transient']:>9.2e} "
              f"{f['resand_count']:>7} {str(f['passed']):>5}")
    print(f"travel cost {data['total_travel_cost']:.4f}, "
          f"wall {data['wall_time']:.1f} s, "
          f"{'PASS' if data['passed'] else 'FAIL'}")
    if data.get("error"):
        print(f"error: {data['error']}")
    return EXIT_OK if data["passed"] else EXIT_QUALITY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autosand",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file (defaults are built in)")
        p.add_argument("--out", default="runs/latest", help="output directory")

    p = sub.add_parser("scan", help="emit synthetic scan views as PLY")
    common(p)
    p.set_defaults(fn=cmd_scan)

    p = sub.add_parser("model", help="filter and register scans into a model cloud")
    common(p)
    p.add_argument("--scans", help="directory with views.json (default <out>/scans)")
    p.set_defaults(fn=cmd_model)

    p = sub.add_parser("plan", help="optimize the sanding sequence, emit trajectories")
    common(p)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("sand", help="closed-loop sanding of one face")
    common(p)
    p.add_argument("--face", type=int, default=None,
                   help="face id (default: canonical single-contact scenario)")
    p.add_argument("--duration", type=float, default=None, help="seconds")
    p.set_defaults(fn=cmd_sand)

    p = sub.add_parser("run", help="full pipeline: scan, model, plan, sand, assess")
    common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("report", help="summarize a finished run directory")
    p.add_argument("--run", default="runs/latest", help="run directory")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("write-config", help="write the default config to a file")
    p.add_argument("path")
    p.set_defaults(fn=lambda a: (save_config(PipelineConfig(), a.path), EXIT_OK)[1])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
