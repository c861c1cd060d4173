import json
import signal
import socket
import subprocess
import sys
import time
import urllib.request

import numpy as np
import pytest

from usnav.calibration import write_pgm
from usnav.cli import main
from usnav.geometry import RigidTransform
from usnav.simulate import DEFAULT_FAN, NOISELESS_CAMERA, default_tools, scene_probe_pose, synthesize_observation
from usnav.wire import TrackingPacket


class TestCalibrate:
    def test_default_fan(self, tmp_path, capsys):
        assert main(["calibrate", "--out", str(tmp_path)]) == 0
        payload = json.loads((tmp_path / "probe_geometry.json").read_text())
        assert payload["pixel_width_mm"] == pytest.approx(0.5)
        assert "pixel width" in capsys.readouterr().out

    def test_from_pgm(self, tmp_path):
        mask_path = tmp_path / "mask.pgm"
        write_pgm(mask_path, DEFAULT_FAN.rasterize().bits)
        assert (
            main(
                [
                    "calibrate",
                    "--mask",
                    str(mask_path),
                    "--sensor-width",
                    "42",
                    "--out",
                    str(tmp_path),
                ]
            )
            == 0
        )
        payload = json.loads((tmp_path / "probe_geometry.json").read_text())
        assert payload["origin_px"] == [320, 20]


class TestTrack:
    def test_poses_from_observation_file(self, tmp_path):
        probe, needle = default_tools()
        poses = {
            1: scene_probe_pose(),
            2: RigidTransform(np.eye(3), np.array([60.0, -20.0, 430.0])),
        }
        lines = []
        for k in range(3):
            obs = synthesize_observation(poses, [probe, needle], NOISELESS_CAMERA, seed=k)
            lines.append(
                json.dumps(
                    {"timestamp_us": 1000 * k, "points": obs.points.tolist()}
                )
            )
        obs_path = tmp_path / "obs.jsonl"
        obs_path.write_text("\n".join(lines) + "\n")
        assert (
            main(["track", "--observations", str(obs_path), "--out", str(tmp_path)])
            == 0
        )
        out_lines = (tmp_path / "poses.jsonl").read_text().strip().splitlines()
        assert len(out_lines) == 6  # two tools x three frames
        first = json.loads(out_lines[0])
        assert set(first) == {
            "timestamp_us",
            "tool_id",
            "quaternion",
            "translation",
            "rms_error_mm",
            "occluded_count",
        }


class TestAccuracy:
    def test_quick_run_outputs(self, tmp_path, capsys):
        assert (
            main(["accuracy", "--frames", "1", "--seed", "3", "--out", str(tmp_path)])
            == 0
        )
        report = json.loads((tmp_path / "accuracy_report.json").read_text())
        assert report["targets"] == 353
        csv_text = (tmp_path / "accuracy_samples.csv").read_text()
        assert csv_text.startswith("target_index,")
        out = capsys.readouterr().out
        assert "targets: 353" in out


class TestLatency:
    def test_short_probe(self, tmp_path, capsys):
        assert (
            main(
                [
                    "latency",
                    "--fps",
                    "40",
                    "--duration",
                    "0.4",
                    "--width",
                    "32",
                    "--height",
                    "24",
                    "--out",
                    str(tmp_path),
                ]
            )
            == 0
        )
        csv_text = (tmp_path / "latency.csv").read_text()
        assert csv_text.startswith("frame_id,")
        assert "t1 =" in capsys.readouterr().out


class TestReplay:
    def test_trace_to_cue_log(self, tmp_path):
        entries = []
        for k in range(5):
            for tool_id in (1, 2):
                packet = TrackingPacket.from_pose(
                    tool_id,
                    1000 * k + tool_id,
                    RigidTransform(np.eye(3), np.array([0.0, 0.0, -10.0 * tool_id])),
                )
                entries.append(
                    json.dumps(
                        {
                            "tool_id": tool_id,
                            "timestamp_us": packet.timestamp_us,
                            "quaternion": list(packet.quaternion),
                            "translation": list(packet.translation),
                        }
                    )
                )
        trace = tmp_path / "trace.jsonl"
        trace.write_text("\n".join(entries) + "\n")
        assert (
            main(
                [
                    "replay",
                    "--trace",
                    str(trace),
                    "--mode",
                    "out_of_plane",
                    "--out",
                    str(tmp_path),
                ]
            )
            == 0
        )
        lines = (tmp_path / "cue_log.jsonl").read_text().strip().splitlines()
        assert len(lines) == 10
        kinds = {json.loads(line)["kind"] for line in lines}
        assert "out_of_plane" in kinds


class TestServe:
    def test_serve_smoke(self, tmp_path):
        proc = subprocess.Popen(
            [sys.executable, "-m", "usnav.cli", "serve"],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
        )
        try:
            banner = proc.stdout.readline()
            assert "usnav service listening" in banner
            parts = dict(
                item.split("=") for item in banner.strip().split(": ")[1].split(" ")
            )
            with urllib.request.urlopen(
                f"http://127.0.0.1:{parts['health']}/health", timeout=5
            ) as response:
                health = json.loads(response.read())
            assert health["sessions"] == 1
            with socket.create_connection(("127.0.0.1", int(parts["tcp"])), timeout=5):
                pass
        finally:
            proc.send_signal(signal.SIGINT)
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
