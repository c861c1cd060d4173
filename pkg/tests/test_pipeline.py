import csv

import numpy as np
import pytest

from usnav.pipeline import (
    BoundedQueue,
    LATENCY_CSV_COLUMNS,
    LatencyProbeConfig,
    LatencyRecord,
    run_latency_probe,
    write_latency_csv,
)


class TestBoundedQueue:
    def test_fifo(self):
        q = BoundedQueue(4)
        for i in range(3):
            q.put(i)
        assert [q.get(timeout=0.1) for _ in range(3)] == [0, 1, 2]

    def test_drop_oldest_counts(self):
        q = BoundedQueue(2)
        for i in range(5):
            q.put(i)
        assert q.drops == 3
        assert q.get(timeout=0.1) == 3
        assert q.get(timeout=0.1) == 4

    def test_timeout(self):
        q = BoundedQueue(1)
        with pytest.raises(TimeoutError):
            q.get(timeout=0.05)

    def test_capacity_validation(self):
        with pytest.raises(ValueError):
            BoundedQueue(0)


class TestLatencyRecord:
    def test_stamp_ordering_enforced(self):
        with pytest.raises(ValueError):
            LatencyRecord(0, 100, 90, 120)

    def test_t1_t2(self):
        record = LatencyRecord(0, 100, 150, 240)
        assert record.t1_us == 50
        assert record.t2_us == 140


class TestLatencyProbe:
    def test_zero_work_run_completes_fast(self):
        config = LatencyProbeConfig(fps=100.0, duration_s=0.5, frame_width=16, frame_height=16)
        records, summary = run_latency_probe(config)
        assert summary.frames_sent == 50
        assert summary.frames_completed >= 49
        t1 = np.array([r.t1_us for r in records]) / 1000.0
        t2 = np.array([r.t2_us for r in records]) / 1000.0
        # zero-work stages on loopback stay in single-digit milliseconds
        assert float(np.median(t1)) < 5.0
        assert float(np.median(t2)) < 5.0
        for r in records:
            assert r.t_capture_us <= r.t_render_host_us <= r.t_headset_display_us

    def test_injected_delay_detected(self):
        base_cfg = LatencyProbeConfig(fps=60.0, duration_s=0.6, frame_width=16, frame_height=16)
        _, base = run_latency_probe(base_cfg)
        delayed_cfg = LatencyProbeConfig(
            fps=60.0, duration_s=0.6, frame_width=16, frame_height=16, host_delay_s=0.010
        )
        _, delayed = run_latency_probe(delayed_cfg)
        shift = delayed.t1_mean_ms - base.t1_mean_ms
        assert 8.0 <= shift <= 12.0

    def test_loss_reported_not_raised(self):
        config = LatencyProbeConfig(fps=30.0, duration_s=0.4, frame_width=8, frame_height=8)
        records, summary = run_latency_probe(config)
        assert summary.loss_fraction <= 0.05
        assert summary.frames_completed + len(summary.lost_frame_ids) == summary.frames_sent

    def test_csv_export(self, tmp_path):
        config = LatencyProbeConfig(fps=50.0, duration_s=0.3, frame_width=8, frame_height=8)
        records, _ = run_latency_probe(config)
        path = tmp_path / "latency.csv"
        write_latency_csv(records, path)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert tuple(rows[0]) == LATENCY_CSV_COLUMNS
        assert len(rows) == len(records) + 1
        first = rows[1]
        assert int(first[4]) == int(first[2]) - int(first[1])
        assert int(first[5]) == int(first[3]) - int(first[1])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LatencyProbeConfig(fps=0.0)
        with pytest.raises(ValueError):
            LatencyProbeConfig(frame_width=0)
