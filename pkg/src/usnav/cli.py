"""Command-line surface for the navigation engine.

Subcommands: calibrate (mask -> probe geometry JSON), track (observation
file -> poses), accuracy (grid experiment -> report), latency (loopback
probe run), serve (start the nav service), replay (pose trace ->
cue-state log). Global flags: --seed, --config, --out.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
from typing import List, Optional

import numpy as np

from .calibration import compute_probe_geometry, read_mask_pgm
from .cues import CueConfig, NeedleToolGeometry
from .experiments import AccuracyGrid, run_accuracy_experiment
from .pipeline import LatencyProbeConfig, run_latency_probe, write_latency_csv
from .service import NavServiceConfig, SessionConfig, replay_trace, serve_forever
from .simulate import (
    DEFAULT_SENSOR_WIDTH_MM,
    DepthCameraModel,
    FanSpec,
    default_probe_geometry,
    default_tools,
)
from .tracking import MarkerObservation, ToolDefinition, load_tools, track_frame
from .wire import TrackingPacket


def load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _config_tools(config: dict) -> List[ToolDefinition]:
    if "tools" in config:
        return [
            ToolDefinition(
                tool_id=int(t["tool_id"]),
                markers=np.asarray(t["markers"], dtype=np.float64),
                max_occlusion=int(t.get("max_occlusion", 1)),
                match_tolerance=float(t.get("match_tolerance", 3.0)),
            )
            for t in config["tools"]
        ]
    return list(default_tools())


def _config_camera(config: dict) -> DepthCameraModel:
    if "camera" in config:
        return DepthCameraModel.from_dict(config["camera"])
    return DepthCameraModel()


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master RNG seed")
    parser.add_argument("--config", type=str, default=None, help="JSON config path")
    parser.add_argument("--out", type=str, default=".", help="output directory")


def cmd_calibrate(args) -> int:
    config = load_config(args.config)
    if args.mask:
        mask = read_mask_pgm(args.mask)
    else:
        mask = FanSpec(**config.get("fan", {})).rasterize()
    sensor_width = (
        args.sensor_width
        if args.sensor_width is not None
        else float(config.get("sensor_width_mm", DEFAULT_SENSOR_WIDTH_MM))
    )
    geom = compute_probe_geometry(mask, args.kind, sensor_width)
    out_path = os.path.join(_out_dir(args), "probe_geometry.json")
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(geom.to_json())
    print(f"pixel width: {geom.pixel_width} mm/px")
    print(f"origin: {geom.origin}  corners: {geom.corners}")
    print(f"wrote {out_path}")
    return 0


def cmd_track(args) -> int:
    config = load_config(args.config)
    tools = load_tools(args.tools) if args.tools else _config_tools(config)
    out_lines = []
    with open(args.observations, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            obs = MarkerObservation(
                points=np.asarray(entry["points"], dtype=np.float64).reshape(-1, 3),
                timestamp_us=int(entry.get("timestamp_us", 0)),
            )
            for pose in track_frame(obs, tools, match_tolerance=args.tolerance):
                packet = TrackingPacket.from_pose(
                    pose.tool_id,
                    obs.timestamp_us,
                    pose.transform,
                    rms_error=pose.rms_error,
                    occluded_count=pose.occluded_count,
                )
                out_lines.append(
                    json.dumps(
                        {
                            "timestamp_us": packet.timestamp_us,
                            "tool_id": packet.tool_id,
                            "quaternion": list(packet.quaternion),
                            "translation": list(packet.translation),
                            "rms_error_mm": packet.rms_error,
                            "occluded_count": packet.occluded_count,
                        },
                        sort_keys=True,
                    )
                )
    out_path = os.path.join(_out_dir(args), "poses.jsonl")
    with open(out_path, "w", encoding="utf-8") as f:
        f.write("\n".join(out_lines) + ("\n" if out_lines else ""))
    print(f"wrote {len(out_lines)} poses to {out_path}")
    return 0


def cmd_accuracy(args) -> int:
    config = load_config(args.config)
    fan = FanSpec(**config.get("fan", {}))
    sensor_width = float(config.get("sensor_width_mm", DEFAULT_SENSOR_WIDTH_MM))
    mask = fan.rasterize()
    geom = compute_probe_geometry(mask, "convex", sensor_width)
    grid_cfg = config.get("grid", {})
    grid = AccuracyGrid.generate(
        geom,
        mask,
        spacing=float(grid_cfg.get("spacing", 10.0)),
        depth_extent=float(grid_cfg.get("depth_extent", 200.0)),
        frames_per_target=args.frames
        if args.frames is not None
        else int(grid_cfg.get("frames_per_target", 200)),
    )
    camera = _config_camera(config)
    tools = _config_tools(config)
    report = run_accuracy_experiment(grid, camera, tools, geom, seed=args.seed)

    out = _out_dir(args)
    csv_path = os.path.join(out, "accuracy_samples.csv")
    json_path = os.path.join(out, "accuracy_report.json")
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        f.write(report.samples_csv())
    with open(json_path, "w", encoding="utf-8") as f:
        f.write(report.summary_json())
    print(f"targets: {len(grid)}  samples: {len(report.sample_target)}")
    print(f"tracking failures: {report.tracking_failures}")
    print(f"overall mean offset: {report.overall_offset_mean_mm:.3f} mm")
    for label, stats in report.band_stats.items():
        if stats.get("targets"):
            print(
                f"  band {label}: offset {stats['offset_mean_mm']:.3f} mm, "
                f"oop {stats['oop_mean_mm']:.3f} mm over {stats['targets']} targets"
            )
    print(f"wrote {csv_path} and {json_path}")
    return 0


def cmd_latency(args) -> int:
    config = LatencyProbeConfig(
        fps=args.fps,
        duration_s=args.duration,
        frame_width=args.width,
        frame_height=args.height,
        host_delay_s=args.host_delay_ms / 1000.0,
        headset_delay_s=args.headset_delay_ms / 1000.0,
    )
    records, summary = run_latency_probe(config)
    out_path = os.path.join(_out_dir(args), "latency.csv")
    write_latency_csv(records, out_path)
    print(
        f"frames: {summary.frames_completed}/{summary.frames_sent} "
        f"(lost {len(summary.lost_frame_ids)}, {summary.loss_fraction:.2%})"
    )
    print(f"t1 = {summary.t1_mean_ms:.2f} +/- {summary.t1_std_ms:.2f} ms")
    print(f"t2 = {summary.t2_mean_ms:.2f} +/- {summary.t2_std_ms:.2f} ms")
    print(f"wrote {out_path}")
    return 0


def _session_config(config: dict) -> SessionConfig:
    session = config.get("session", {})
    kwargs = {}
    for key in (
        "session_id",
        "probe_tool_id",
        "needle_tool_id",
        "mode",
        "grace_us",
        "flip_plane",
    ):
        if key in session:
            kwargs[key] = session[key]
    if "cue" in config:
        kwargs["cue_config"] = CueConfig.from_dict(config["cue"])
    if "needle" in config:
        kwargs["needle_geometry"] = NeedleToolGeometry(**config["needle"])
    if session.get("probe_geometry") == "default" or "fan" in config:
        kwargs["probe_geometry"] = default_probe_geometry(
            FanSpec(**config.get("fan", {})),
            float(config.get("sensor_width_mm", DEFAULT_SENSOR_WIDTH_MM)),
        )
    return SessionConfig(**kwargs)


def cmd_serve(args) -> int:
    config = load_config(args.config)
    service_config = NavServiceConfig(
        tcp_port=args.tcp_port,
        udp_port=args.udp_port,
        health_port=args.health_port,
        sessions=[_session_config(config)],
    )
    try:
        asyncio.run(serve_forever(service_config))
    except KeyboardInterrupt:
        pass
    return 0


def cmd_replay(args) -> int:
    config = load_config(args.config)
    session = _session_config(config)
    if args.mode:
        session.mode = args.mode
    entries = []
    with open(args.trace, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    lines = replay_trace(entries, session)
    out_path = os.path.join(_out_dir(args), "cue_log.jsonl")
    with open(out_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))
    print(f"wrote {len(lines)} cue states to {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="usnav", description="Ultrasound biopsy navigation engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="mask -> probe geometry JSON")
    _add_common(p)
    p.add_argument("--mask", type=str, default=None, help="mask PGM path (default: synthetic fan)")
    p.add_argument("--kind", choices=("convex", "linear"), default="convex")
    p.add_argument("--sensor-width", type=float, default=None, help="aperture L in mm")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("track", help="observation file -> poses")
    _add_common(p)
    p.add_argument("--observations", type=str, required=True, help="JSON-lines points file")
    p.add_argument("--tools", type=str, default=None, help="tool config JSON")
    p.add_argument("--tolerance", type=float, default=None, help="match tolerance mm")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("accuracy", help="grid experiment -> report")
    _add_common(p)
    p.add_argument("--frames", type=int, default=None, help="frames per target override")
    p.set_defaults(func=cmd_accuracy)

    p = sub.add_parser("latency", help="loopback latency probe")
    _add_common(p)
    p.add_argument("--fps", type=float, default=60.0)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--width", type=int, default=1053)
    p.add_argument("--height", type=int, default=604)
    p.add_argument("--host-delay-ms", type=float, default=0.0)
    p.add_argument("--headset-delay-ms", type=float, default=0.0)
    p.set_defaults(func=cmd_latency)

    p = sub.add_parser("serve", help="start the navigation service")
    _add_common(p)
    p.add_argument("--tcp-port", type=int, default=0)
    p.add_argument("--udp-port", type=int, default=0)
    p.add_argument("--health-port", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="pose trace -> cue-state log")
    _add_common(p)
    p.add_argument("--trace", type=str, required=True, help="JSON-lines pose trace")
    p.add_argument("--mode", choices=("in_plane", "out_of_plane"), default=None)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
