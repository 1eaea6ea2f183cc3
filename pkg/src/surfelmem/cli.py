"""Command-line surface: exploration runs, ablations, snapshot tools, debug renders.

Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure.
Diagnostics go to stderr; reports are written to files under --out.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from . import harness, persist
from .retrieval import RetrievalConfig
from .store import MergeConfig
from .world import NoiseParams

STRATEGY_NAMES = {
    "vmem": "vmem",
    "temporal": "temporal",
    "camdist": "camera_distance",
    "fov": "fov",
}


class _ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # config errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        raise _ConfigError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="surfelmem", description=__doc__)
    sub = p.add_subparsers(dest="command", metavar="command")

    def add_run_flags(sp, needs_out=True):
        sp.add_argument("--scene", required=True, help="scene preset name or JSON path")
        sp.add_argument("--traj", required=True, help="trajectory JSON path")
        sp.add_argument("--k", default="4", help="context view count (comma list for ablate)")
        sp.add_argument("--m", type=int, default=None, help="views per step (default: trajectory file)")
        sp.add_argument("--sigma", type=float, default=0.03, help="point-map downsampling factor")
        sp.add_argument("--alpha", type=float, default=0.2, help="radius grazing-angle floor")
        sp.add_argument("--noise-sigma", type=float, default=0.0, help="relative depth noise std")
        sp.add_argument("--dropout", type=float, default=0.0, help="depth dropout probability")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--stride", type=int, default=1, help="evaluate metrics every Nth frame")
        if needs_out:
            sp.add_argument("--out", required=True, help="output directory")

    for name, doc in (
        ("explore", "run one exploration episode"),
        ("cycle", "run an episode on the trajectory concatenated with its reverse"),
    ):
        sp = sub.add_parser(name, help=doc)
        add_run_flags(sp)
        sp.add_argument(
            "--strategy", default="vmem", choices=sorted(STRATEGY_NAMES), help="retrieval strategy"
        )

    sp = sub.add_parser("ablate", help="compare retrieval strategies over a k grid")
    add_run_flags(sp)
    sp.add_argument("--strategy", default="vmem,temporal,camdist,fov", help="comma list of strategies")
    sp.add_argument("--cycle", action="store_true", help="apply the cycle protocol first")

    sp = sub.add_parser("snapshot", help="inspect or convert a memory snapshot")
    sp.add_argument("--in", dest="input", required=True, help="snapshot path")
    sp.add_argument("--to-json", default=None, help="write a JSON dump to this path")

    sp = sub.add_parser("render-debug", help="rasterize surfel ids from a snapshot")
    sp.add_argument("--snapshot", required=True)
    sp.add_argument("--traj", required=True, help="trajectory JSON supplying the camera")
    sp.add_argument("--index", type=int, default=0, help="camera index within the trajectory")
    sp.add_argument("--width", type=int, default=128)
    sp.add_argument("--height", type=int, default=128)
    sp.add_argument("--out", required=True, help="output PNG path")

    sp = sub.add_parser("serve", help="serve the memory API over HTTP")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    return p


def _require_file(path: str) -> None:
    if not os.path.isfile(path):
        raise _ConfigError(f"no such file: {path}")


def _load_run_inputs(args):
    if not (args.scene in persist.PRESETS or os.path.isfile(args.scene)):
        raise _ConfigError(f"no such scene preset or file: {args.scene}")
    _require_file(args.traj)
    scene = persist.load_scene(args.scene, seed=args.seed)
    traj = persist.load_trajectory(args.traj)
    if args.m is not None:
        traj = harness.Trajectory(traj.cameras, args.m, traj.name)
    try:
        merge = MergeConfig(sigma=args.sigma, alpha=args.alpha)
        noise = NoiseParams(args.noise_sigma, args.dropout, args.seed)
    except ValueError as e:
        raise _ConfigError(str(e))
    return scene, traj, merge, noise


def _write_frame_csv(path: str, reports: list[harness.MetricsReport]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["strategy", "k", "frame", "coverage", "r_dist", "t_dist", "revisit_hit", "retrieved"])
        for rep in reports:
            for fr in rep.frames:
                w.writerow(
                    [
                        rep.strategy,
                        rep.k,
                        fr["frame"],
                        f"{fr['coverage']:.6f}",
                        f"{fr['r_dist']:.6g}",
                        f"{fr['t_dist']:.6g}",
                        "" if fr["revisit_hit"] is None else int(fr["revisit_hit"]),
                        " ".join(map(str, fr["retrieved"])),
                    ]
                )


def _aggregates(rep: harness.MetricsReport) -> dict:
    return {
        "strategy": rep.strategy,
        "k": rep.k,
        "mean_coverage": rep.mean_coverage,
        "revisit_recall": rep.revisit_recall,
        "revisit_recall_far_half": rep.revisit_recall_far_half,
        "mean_r_dist": rep.mean_r_dist,
        "mean_t_dist": rep.mean_t_dist,
    }


def _cmd_explore(args, use_cycle: bool) -> int:
    scene, traj, merge, noise = _load_run_inputs(args)
    if use_cycle:
        traj = harness.cycle_protocol(traj)
    try:
        k = int(args.k)
        cfg = RetrievalConfig(k=k, strategy=STRATEGY_NAMES[args.strategy])
    except ValueError as e:
        raise _ConfigError(str(e))
    os.makedirs(args.out, exist_ok=True)
    log = harness.run_exploration(scene, traj, cfg, merge, noise)
    report = harness.score_episode(log, scene, traj, stride=args.stride)
    snap_path = os.path.join(args.out, "memory.vmem")
    persist.save_snapshot(log.store, snap_path)
    log.snapshot_path = snap_path
    with open(os.path.join(args.out, "episode.json"), "w") as f:
        f.write(log.to_json())
    with open(os.path.join(args.out, "metrics.json"), "w") as f:
        f.write(report.to_json())
    _write_frame_csv(os.path.join(args.out, "metrics.csv"), [report])
    print(json.dumps(_aggregates(report), sort_keys=True), file=sys.stderr)
    return 0


def _cmd_ablate(args) -> int:
    scene, traj, merge, noise = _load_run_inputs(args)
    if args.cycle:
        traj = harness.cycle_protocol(traj)
    try:
        strategies = [STRATEGY_NAMES[s.strip()] for s in args.strategy.split(",") if s.strip()]
        k_values = [int(k) for k in args.k.split(",") if k.strip()]
    except (KeyError, ValueError) as e:
        raise _ConfigError(f"bad strategy or k list: {e}")
    if not strategies or not k_values:
        raise _ConfigError("ablate needs at least one strategy and one k")
    os.makedirs(args.out, exist_ok=True)
    reports = harness.run_ablation(
        scene, traj, strategies, k_values, merge, noise, stride=args.stride
    )
    _write_frame_csv(os.path.join(args.out, "ablation.csv"), reports)
    with open(os.path.join(args.out, "ablation.json"), "w") as f:
        json.dump([_aggregates(r) for r in reports], f, sort_keys=True, indent=2)
    for r in reports:
        print(json.dumps(_aggregates(r), sort_keys=True), file=sys.stderr)
    return 0


def _cmd_snapshot(args) -> int:
    _require_file(args.input)
    store = persist.load_snapshot(args.input)
    dump = persist.snapshot_to_json(store)
    if args.to_json:
        with open(args.to_json, "w") as f:
            json.dump(dump, f, sort_keys=True, indent=2)
    summary = {k: dump[k] for k in ("surfel_count", "view_count", "retained_frames", "next_frame")}
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_render_debug(args) -> int:
    from .raster import rasterize_ids
    from .geometry import Camera

    _require_file(args.snapshot)
    _require_file(args.traj)
    store = persist.load_snapshot(args.snapshot)
    traj = persist.load_trajectory(args.traj)
    if not (0 <= args.index < len(traj.cameras)):
        raise _ConfigError(f"camera index {args.index} out of range (trajectory has {len(traj.cameras)})")
    cam = traj.cameras[args.index]
    cam = Camera(cam.pose, cam.intrinsics.with_resolution(args.width, args.height))
    image = rasterize_ids(store, cam, (args.width, args.height))
    persist.dump_id_image(image, args.out, store)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("surfelmem: a command is required", file=sys.stderr)
            return 1
        if args.command == "explore":
            return _cmd_explore(args, use_cycle=False)
        if args.command == "cycle":
            return _cmd_explore(args, use_cycle=True)
        if args.command == "ablate":
            return _cmd_ablate(args)
        if args.command == "snapshot":
            return _cmd_snapshot(args)
        if args.command == "render-debug":
            return _cmd_render_debug(args)
        if args.command == "serve":
            return _cmd_serve(args)
        parser.print_usage(sys.stderr)
        return 1
    except _ConfigError as e:
        print(f"surfelmem: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"surfelmem: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
