"""Command-line entry point: ``easvo <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 an APE above
``--fail-above``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .dataset_io import (
    DataFormatError,
    load_dataset,
    load_events,
    load_frames,
    load_ground_truth,
    read_trajectory_csv,
    write_grayscale_png,
    write_trajectory_csv,
)
from .evaluation import DEFAULT_MAX_DT, report
from .fusion import FusionConfig, fuse_sequence
from .rotation_estimation import PipelineConfig, run_pipeline
from .sources import SOURCES, RepresentationConfig, UnknownSourceError, build_source, check_sources, event_frames

log = logging.getLogger("easvo")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BOUND = 0, 2, 3, 4


class ConfigError(Exception):
    pass


# -- configuration -----------------------------------------------------------------


def _read_config_file(path):
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix == ".json":
            return json.loads(text)
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(text.decode("utf-8"))
    except ValueError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None


# flag name -> (config section, key); ``n`` feeds both event-window settings
_OVERRIDES = {
    "beta": [("fusion", "beta")],
    "gamma": [("fusion", "gamma")],
    "sigma": [("fusion", "gaussian_sigma")],
    "kernel_size": [("fusion", "gaussian_kernel_size")],
    "n": [("fusion", "n_events"), ("representation", "n_events")],
    "tau": [("representation", "tau")],
    "radius": [("representation", "radius")],
    "threshold1": [("pipeline", "threshold1")],
    "threshold2": [("pipeline", "threshold2")],
    "ransac_iters": [("pipeline", "ransac_iters")],
    "ransac_threshold": [("pipeline", "ransac_threshold")],
}


def resolve_config(args, raw=None):
    """Merge a config mapping (or ``--config`` file) with command-line flags; flags win."""
    if raw is None:
        raw = _read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(raw) - {"fusion", "representation", "pipeline", "seed"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    sections = {k: dict(raw.get(k, {})) for k in ("fusion", "representation", "pipeline")}
    for flag, targets in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            for section, key in targets:
                sections[section][key] = value
    seed = args.seed if getattr(args, "seed", None) is not None else raw.get("seed", 0)
    try:
        fusion = FusionConfig(**sections["fusion"])
        rep = RepresentationConfig(**sections["representation"])
        pipe = PipelineConfig.from_dict(sections["pipeline"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return {"fusion": fusion, "representation": rep, "pipeline": pipe, "seed": int(seed)}


def config_to_dict(cfg):
    return {
        "fusion": cfg["fusion"].to_dict(),
        "representation": cfg["representation"].to_dict(),
        "pipeline": cfg["pipeline"].to_dict(),
        "seed": cfg["seed"],
    }


def _load(args):
    return load_dataset(args.dataset, t_max=args.t_max, intrinsics_path=args.intrinsics)


def _need_intrinsics(ds):
    if ds.intrinsics is None:
        raise DataFormatError("no camera intrinsics: add intrinsics.json or calib.txt, or pass --intrinsics")
    return ds.intrinsics


# -- subcommands ----------------------------------------------------------------------


def _parse_omega(text):
    if text == "standard":
        return None
    try:
        w = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"--omega expects 'wx,wy,wz' or 'standard', got {text!r}") from None
    if len(w) != 3:
        raise ConfigError("--omega expects three comma-separated values")
    return tuple(w)


def cmd_simulate(args):
    from .synthetic import SyntheticScene, darken, export_dataset, generate_events, make_panorama, render_frames
    from .synthetic import standard_motion

    omega = _parse_omega(args.omega)
    if args.duration <= 0 or args.contrast <= 0 or args.frame_rate <= 0:
        raise ConfigError("--duration, --contrast and --frame-rate must be positive")
    motion = standard_motion(args.duration) if omega is None else [(0.0, omega)]
    lighting = "spots" if args.low_light else None
    pano = make_panorama(seed=args.seed, lighting=lighting, n_spots=args.spots, dim_level=args.dim_level)
    scene = SyntheticScene(
        pano,
        motion=motion,
        duration=args.duration,
        frame_rate=args.frame_rate,
        contrast_threshold=args.contrast,
        seed=args.seed,
        event_rate=args.event_rate,
        noise_rate=args.noise_rate,
    )
    frames, poses = render_frames(scene)
    if args.low_light:
        frames = darken(frames, args.darken, args.read_noise, seed=args.seed)
    # a little past the last frame so the final slices are complete
    events = generate_events(scene, t_end=args.duration + args.event_tail)
    out = export_dataset(scene, args.out, frames, poses, events)
    print(f"wrote {len(frames)} frames, {len(events)} events, {len(poses)} poses to {out}")
    return EXIT_OK


def cmd_represent(args):
    ds = _load(args)
    given = {k: v for k, v in (("n_events", args.n), ("tau", args.tau), ("radius", args.radius)) if v is not None}
    try:
        rep = RepresentationConfig(**given)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "eq":
        frames = build_source("enhanced", ds.frames, ds.events, FusionConfig(), rep)
    else:
        frames = event_frames(args.kind, ds.frames, ds.events, rep)
    for i, f in enumerate(frames):
        write_grayscale_png(f.pixels, out / f"{args.kind}_{i:05d}.png")
    print(f"wrote {len(frames)} {args.kind} images to {out}")
    return EXIT_OK


def _frames_and_events(args):
    """From a dataset directory, or from separate ``--frames`` and ``--events``."""
    if args.dataset is not None:
        ds = _load(args)
        return ds.frames, ds.events
    if args.frames is None or args.events is None:
        raise ConfigError("give a dataset directory, or both --frames and --events")
    frames = load_frames(args.frames, t_max=args.t_max)
    if not frames:
        raise DataFormatError("no frames", Path(args.frames) / "images.txt")
    return frames, load_events(args.events, (frames[0].width, frames[0].height))


def cmd_fuse(args):
    cfg = resolve_config(args)["fusion"]
    frames, events = _frames_and_events(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fused = fuse_sequence(frames, events, cfg)
    sidecar = {"config": cfg.to_dict(), "frames": []}
    for i, f in enumerate(fused):
        name = f"eas_{i:05d}.png"
        write_grayscale_png(f.pixels, out / name)
        sidecar["frames"].append({"file": name, "t": f.t, "alpha_used": f.alpha_used, "fused": f.fused})
    (out / "fusion.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    print(f"wrote {len(fused)} fused frames to {out}")
    return EXIT_OK


def cmd_estimate(args):
    cfg = resolve_config(args)
    ds = _load(args)
    intr = _need_intrinsics(ds)
    frames = build_source(args.source, ds.frames, ds.events, cfg["fusion"], cfg["representation"])
    tracks = []

    def keep_tracks(k, corr):
        for (x0, y0), (x1, y1) in zip(corr.prev_points, corr.next_points):
            tracks.append((k, corr.frame_t_prev, corr.frame_t_next, x0, y0, x1, y1))

    on_pair = keep_tracks if args.dump_tracks else None
    traj = run_pipeline(frames, cfg["pipeline"], intr, seed=cfg["seed"], on_pair=on_pair)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj, args.out)
    if args.dump_tracks:
        with open(args.dump_tracks, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["pair", "t_prev", "t_next", "x_prev", "y_prev", "x_next", "y_next"])
            for k, t0, t1, *xy in tracks:
                w.writerow([k, f"{t0:.9f}", f"{t1:.9f}", *(f"{v:.4f}" for v in xy)])
    print(f"wrote {len(traj)} orientations to {args.out}")
    return EXIT_OK


def cmd_evaluate(args):
    traj = read_trajectory_csv(args.est)
    gt = load_ground_truth(args.gt)
    name = args.name or Path(args.est).stem
    m = report(traj, gt, {"estimate": str(args.est)}, args.out, name, args.max_dt, plot=not args.no_plots)
    print(f"{name}: average APE {m['average_ape']:.6f} rad, average NC {m['average_nc']:.2f}")
    if args.fail_above is not None and m["average_ape"] > args.fail_above:
        print(f"average APE {m['average_ape']:.6f} exceeds bound {args.fail_above}", file=sys.stderr)
        return EXIT_BOUND
    return EXIT_OK


# -- pipeline -----------------------------------------------------------------------


def format_table(rows):
    """Plain-text table: one column per source, NC and APE rows."""
    names = [r["source"] for r in rows]

    def cell(r, key, fmt):
        v = r.get(key)
        return "failed" if v is None else format(v, fmt)

    lines = [["", *names], ["average NC", *(cell(r, "average_nc", ".2f") for r in rows)]]
    lines.append(["average APE (rad)", *(cell(r, "average_ape", ".4f") for r in rows)])
    widths = [max(len(line[i]) for line in lines) for i in range(len(lines[0]))]
    return "\n".join("  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(line, widths)))
                     for line in lines) + "\n"


def write_table_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["source", "average_nc", "average_ape", "fallback_fraction", "n_frames", "status"])
        for r in rows:
            if r.get("average_ape") is None:
                w.writerow([r["source"], "", "", "", "", "failed"])
            else:
                w.writerow([r["source"], f"{r['average_nc']:.4f}", f"{r['average_ape']:.6f}",
                            f"{r['fallback_fraction']:.4f}", r["n_frames"], "ok"])


def run_sources(ds, sources, cfg, out_dir, max_dt=DEFAULT_MAX_DT, plots=True):
    """Run every source, returning one result dict each; failures are recorded."""
    intr = _need_intrinsics(ds)
    rows = []
    samples = {}
    for name in sources:
        log.info("source %s", name)
        try:
            frames = build_source(name, ds.frames, ds.events, cfg["fusion"], cfg["representation"])
            samples[name] = frames[len(frames) // 2].pixels
            traj = run_pipeline(frames, cfg["pipeline"], intr, seed=cfg["seed"])
            m = report(traj, ds.ground_truth, config_to_dict(cfg), out_dir, name, max_dt, plot=plots)
            rows.append({"source": name, **m})
        except Exception as exc:  # one bad source must not stop the others
            log.error("source %s failed: %s", name, exc)
            rows.append({"source": name, "average_ape": None, "average_nc": None, "error": f"{type(exc).__name__}: {exc}"})
    if plots and samples:
        from .plotting import write_results_bars, write_source_gallery

        write_source_gallery(samples, Path(out_dir) / "sources.png")
        if any(r.get("average_ape") is not None for r in rows):
            write_results_bars(rows, Path(out_dir) / "results.svg")
    return rows


def cmd_pipeline(args):
    if args.from_manifest:
        try:
            manifest = json.loads(Path(args.from_manifest).read_text())
            inputs = manifest["inputs"]
            conf = manifest["config"]
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot replay manifest {args.from_manifest}: {exc}") from None
        cfg = resolve_config(argparse.Namespace(), raw=conf)
        args.dataset = inputs["dataset"]
        args.t_max = inputs.get("t_max")
        args.intrinsics = inputs.get("intrinsics")
        args.max_dt = inputs.get("max_dt", DEFAULT_MAX_DT)
        sources = inputs["sources"]
    else:
        if args.dataset is None:
            raise ConfigError("pipeline needs a dataset directory or --from-manifest")
        cfg = resolve_config(args)
        sources = list(SOURCES) if args.sources is None else [s for s in args.sources.split(",") if s]
    try:
        sources = check_sources(sources)
    except UnknownSourceError as exc:
        raise ConfigError(str(exc)) from None

    ds = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_sources(ds, sources, cfg, out, args.max_dt, plots=not args.no_plots)

    write_table_csv(rows, out / "table.csv")
    (out / "table.txt").write_text(format_table(rows))
    manifest = {
        "tool": "easvo",
        "version": __version__,
        "inputs": {
            "dataset": str(args.dataset),
            "t_max": args.t_max,
            "intrinsics": None if args.intrinsics is None else str(args.intrinsics),
            "sources": sources,
            "max_dt": args.max_dt,
        },
        "config": config_to_dict(cfg),
        "results": {r["source"]: {k: v for k, v in r.items() if k != "source"} for r in rows},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(format_table(rows))

    if any(r.get("average_ape") is None for r in rows):
        return EXIT_DATA
    if args.fail_above is not None:
        worst = max(r["average_ape"] for r in rows)
        if not math.isfinite(worst) or worst > args.fail_above:
            print(f"average APE {worst:.6f} exceeds bound {args.fail_above}", file=sys.stderr)
            return EXIT_BOUND
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------


def _add_dataset(p, optional=False):
    if optional:
        p.add_argument("dataset", nargs="?", help="dataset directory (events.txt, images.txt, images/, groundtruth.txt)")
    else:
        p.add_argument("dataset", help="dataset directory (events.txt, images.txt, images/, groundtruth.txt)")
    p.add_argument("--t-max", type=float, default=None, help="use only frames up to this time (s)")
    p.add_argument("--intrinsics", default=None, help="intrinsics.json or calib.txt (default: look in the dataset)")


def _add_fusion_flags(p):
    g = p.add_argument_group("fusion")
    g.add_argument("--beta", type=float, help="only pixels darker than this are enhanced (default 128)")
    g.add_argument("--gamma", type=float, help="lower bound of the adaptive weight (default 64)")
    g.add_argument("--sigma", type=float, help="Gaussian sigma in pixels (default 1.0)")
    g.add_argument("--kernel-size", type=int, help="Gaussian kernel size, odd (default 5)")
    g.add_argument("--n", type=int, help="events per slice (default 15000)")


def _add_pipeline_flags(p):
    g = p.add_argument_group("estimation")
    g.add_argument("--config", help="TOML or JSON file with [fusion], [representation], [pipeline] and seed")
    g.add_argument("--tau", type=float, help="time-surface decay constant in seconds (default 0.05)")
    g.add_argument("--radius", type=int, help="SITS neighbourhood radius (default 3)")
    g.add_argument("--threshold1", type=int, help="minimum correspondences to estimate a pair (default 15)")
    g.add_argument("--threshold2", type=int, help="re-detect corners below this many tracks (default 50)")
    g.add_argument("--ransac-iters", type=int, help="RANSAC iterations (default 500)")
    g.add_argument("--ransac-threshold", type=float, help="epipolar inlier distance, normalised units (default 1e-3)")
    g.add_argument("--seed", type=int, help="random seed for RANSAC (default 0)")


def build_parser():
    parser = argparse.ArgumentParser(prog="easvo", description="Event-enhanced frame-based rotation estimation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic rotating-camera dataset")
    p.add_argument("--duration", type=float, default=10.0, help="seconds (default 10)")
    p.add_argument("--omega", default="standard",
                   help="constant body rate 'wx,wy,wz' in rad/s, or 'standard' for the built-in script")
    p.add_argument("--contrast", type=float, default=0.15, help="log-intensity contrast threshold C (default 0.15)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frame-rate", type=float, default=24.0)
    p.add_argument("--event-rate", type=float, default=1000.0, help="internal event sampling rate, Hz")
    p.add_argument("--event-tail", type=float, default=0.2, help="seconds of events beyond the last frame")
    p.add_argument("--noise-rate", type=float, default=0.0, help="background events per pixel per second")
    p.add_argument("--low-light", action="store_true", help="dim scene with a few lit spots and darkened frames")
    p.add_argument("--spots", type=int, default=1, help="lit spots in a low-light scene (default 1)")
    p.add_argument("--dim-level", type=float, default=0.01, help="illumination outside the spots (default 0.01)")
    p.add_argument("--darken", type=int, default=60, help="maximum grey level of darkened frames (default 60)")
    p.add_argument("--read-noise", type=float, default=1.5, help="frame noise std after darkening, grey levels")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("represent", help="render event representations or equalised frames as PNGs")
    _add_dataset(p)
    p.add_argument("--kind", choices=("slice", "ts", "sits", "eq"), required=True)
    p.add_argument("--n", type=int, help="events per slice window (default 15000)")
    p.add_argument("--tau", type=float, help="time-surface decay (default 0.05 s)")
    p.add_argument("--radius", type=int, help="SITS radius (default 3)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_represent)

    p = sub.add_parser("fuse", help="write EAS-fused frames and a JSON sidecar")
    _add_dataset(p, optional=True)
    p.add_argument("--frames", help="directory holding images.txt (instead of a dataset directory)")
    p.add_argument("--events", help="events file (instead of a dataset directory)")
    _add_fusion_flags(p)
    p.add_argument("--config", help="TOML or JSON config file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("estimate", help="estimate a rotation trajectory from one source")
    _add_dataset(p)
    p.add_argument("--source", choices=SOURCES, default="eas")
    _add_fusion_flags(p)
    _add_pipeline_flags(p)
    p.add_argument("--dump-tracks", help="also write every tracked correspondence to this CSV")
    p.add_argument("--out", required=True, help="trajectory CSV")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="score a trajectory CSV against ground truth")
    p.add_argument("--est", required=True, help="trajectory CSV from 'estimate'")
    p.add_argument("--gt", required=True, help="groundtruth.txt")
    p.add_argument("--out", required=True, help="output directory for metrics, CSV and plot")
    p.add_argument("--name", help="basename of the outputs (default: estimate file stem)")
    p.add_argument("--max-dt", type=float, default=DEFAULT_MAX_DT, help="largest ground-truth gap to interpolate")
    p.add_argument("--fail-above", type=float, help="exit 4 if average APE exceeds this (rad)")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run several sources and write a comparison table")
    _add_dataset(p, optional=True)
    p.add_argument("--sources", help=f"comma-separated subset of {','.join(SOURCES)} (default: all)")
    _add_fusion_flags(p)
    _add_pipeline_flags(p)
    p.add_argument("--from-manifest", help="replay the inputs and configuration of an earlier manifest.json")
    p.add_argument("--max-dt", type=float, default=DEFAULT_MAX_DT)
    p.add_argument("--fail-above", type=float, help="exit 4 if any average APE exceeds this (rad)")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
