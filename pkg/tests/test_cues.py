import json
import math

import numpy as np
import pytest

from usnav.cues import (
    CueConfig,
    IN_PLANE,
    OUT_OF_PLANE,
    InPlaneCueState,
    NeedleToolGeometry,
    OutOfPlaneCueState,
    ToolPoseSample,
    TrackingLostCue,
    cue_frame,
    cue_state_to_json,
    inplane_cues,
    outofplane_cues,
)
from usnav.geometry import (
    DegenerateProjection,
    ImagePlane,
    NeedleState,
    RayParallelToPlane,
    RigidTransform,
    vec3,
)

from conftest import random_rigid, rotation_about

CFG = CueConfig()


def xy_plane():
    return ImagePlane.from_pose(RigidTransform.identity())


def inplane_needle(offset=0.0, angle=0.0, tip_xy=(0.0, 20.0)):
    """Needle whose tip sits `offset` above the x-y plane, direction along
    +y tilted out of plane by `angle`."""
    direction = np.array([0.0, math.cos(angle), math.sin(angle)])
    return NeedleState(
        tip=np.array([tip_xy[0], tip_xy[1], offset]), direction=direction, length=120.0
    )


class TestCueConfig:
    def test_defaults_valid(self):
        CueConfig()

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"t_near": 5.0, "t_far": 5.0},
            {"theta_near": 0.5, "theta_far": 0.2},
            {"r1_base": 20.0},  # r2 <= r1
            {"w_min": 2.0},  # >= w_max
            {"contact_image_alpha": 1.0},
            {"d_switch": -1.0},
        ],
    )
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ValueError):
            CueConfig(**kwargs)

    def test_dict_roundtrip(self):
        cfg = CueConfig(t_far=12.0, color_contact="#ff0000")
        assert CueConfig.from_dict(cfg.to_dict()) == cfg


class TestInPlaneCues:
    def test_aligned_fixed_point(self):
        state = inplane_cues(inplane_needle(), xy_plane(), vec3(0, -40, 0), CFG)
        assert state.r2 == state.r1
        assert state.r4 == state.r3
        assert state.translation_offset == pytest.approx(0.0, abs=1e-12)
        assert state.rotation_angle == pytest.approx(0.0, abs=1e-12)
        assert state.translation_color == CFG.color_aligned
        assert state.rotation_color == CFG.color_aligned
        assert state.line_width == CFG.w_min

    def test_offset_at_t_far_gives_full_span(self):
        # oracle: the documented interpolation restated independently
        state = inplane_cues(inplane_needle(offset=CFG.t_far), xy_plane(), vec3(0, -40, 0), CFG)
        expected_r2 = CFG.r1_base + (CFG.r2_base - CFG.r1_base) * 1.0
        assert state.r2 == pytest.approx(expected_r2, abs=1e-12)
        assert state.r4 == state.r3
        assert state.translation_color == CFG.color_misaligned

    def test_intermediate_offset_formula(self):
        offset = 4.0
        frac = (offset - CFG.t_near) / (CFG.t_far - CFG.t_near)
        state = inplane_cues(inplane_needle(offset=offset), xy_plane(), vec3(0, -40, 0), CFG)
        assert state.r2 == pytest.approx(CFG.r1_base + (CFG.r2_base - CFG.r1_base) * frac, abs=1e-12)
        assert state.line_width == pytest.approx(
            CFG.w_min + (CFG.w_max - CFG.w_min) * frac, abs=1e-12
        )

    def test_offset_beyond_t_far_clamps_and_monotone(self):
        sweep = np.linspace(0.0, 2.0 * CFG.t_far, 100)
        r2_values = [
            inplane_cues(inplane_needle(offset=o), xy_plane(), vec3(0, -40, 0), CFG).r2
            for o in sweep
        ]
        assert r2_values[-1] == pytest.approx(CFG.r2_base, abs=1e-12)
        assert all(b - a >= -1e-12 for a, b in zip(r2_values, r2_values[1:]))

    def test_rotation_sweep_monotone(self):
        sweep = np.linspace(0.0, math.radians(25.0), 100)
        r4_values = [
            inplane_cues(inplane_needle(angle=a), xy_plane(), vec3(0, -40, 0), CFG).r4
            for a in sweep
        ]
        assert all(b - a >= -1e-12 for a, b in zip(r4_values, r4_values[1:]))
        assert r4_values[0] == CFG.r3_base
        assert r4_values[-1] == pytest.approx(CFG.r4_base, abs=1e-12)

    def test_segments_split_at_projected_tip(self):
        needle = inplane_needle(offset=2.0, tip_xy=(5.0, 10.0))
        insertion = vec3(5.0, -30.0, 4.0)
        state = inplane_cues(needle, xy_plane(), insertion, CFG)
        np.testing.assert_allclose(state.traversed_segment[1], state.shadow_origin, atol=1e-12)
        np.testing.assert_allclose(state.future_segment[0], state.shadow_origin, atol=1e-12)
        # traversed start is the insertion point projected onto the plane
        np.testing.assert_allclose(state.traversed_segment[0], [5.0, -30.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(
            state.future_segment[1],
            state.shadow_origin + needle.length * state.shadow_direction,
            atol=1e-12,
        )

    def test_perpendicular_needle_raises(self):
        needle = NeedleState(vec3(0, 0, 5), vec3(0, 0, 1), 120.0)
        with pytest.raises(DegenerateProjection):
            inplane_cues(needle, xy_plane(), vec3(0, 0, 0), CFG)


class TestOutOfPlaneCues:
    def needle_at(self, d):
        """Needle tip at signed plane distance `d` on the entry side of the
        x-y plane (normal +z), feeding toward the plane."""
        return NeedleState(vec3(10.0, 20.0, -d), vec3(0, 0, 1), 120.0)

    def test_far_sphere_mode(self):
        state = outofplane_cues(self.needle_at(CFG.d_switch + 1.0), xy_plane(), CFG)
        assert state.display_mode == "far_sphere"
        assert not state.circles_visible
        assert state.image_alpha == 1.0
        # hit point on the plane
        assert abs(state.hit_point[2]) < 1e-9
        np.testing.assert_allclose(state.hit_point[:2], [10.0, 20.0], atol=1e-9)

    def test_contact_mode(self):
        state = outofplane_cues(self.needle_at(0.0), xy_plane(), CFG)
        assert state.display_mode == "contact"
        assert state.image_alpha == CFG.contact_image_alpha < 1.0
        assert not state.circles_visible
        assert state.tip_color == CFG.color_contact
        assert state.inner_radius == pytest.approx(state.outer_radius, abs=1e-12)

    def test_near_circles_mode_and_signs(self):
        state = outofplane_cues(self.needle_at(CFG.d_switch / 2), xy_plane(), CFG)
        assert state.display_mode == "near_circles"
        assert state.circles_visible
        assert state.distance == pytest.approx(CFG.d_switch / 2, abs=1e-12)

    def test_pierced_through_is_near_circles_until_contact(self):
        # needle beyond the plane on the far side
        state = outofplane_cues(self.needle_at(-(CFG.epsilon_contact + 1.0)), xy_plane(), CFG)
        assert state.display_mode == "near_circles"
        state = outofplane_cues(self.needle_at(-CFG.epsilon_contact / 2), xy_plane(), CFG)
        assert state.display_mode == "contact"

    def test_circle_gap_monotone_to_zero(self):
        plane = xy_plane()
        gaps = []
        for d in np.linspace(CFG.d_switch, 0.0, 120):
            state = outofplane_cues(self.needle_at(d), plane, CFG)
            gaps.append(state.outer_radius - state.inner_radius)
        assert all(b - a <= 1e-12 for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] == pytest.approx(0.0, abs=1e-12)

    def test_tip_radius_shrinks_linearly(self):
        plane = xy_plane()
        d = CFG.d_switch / 4
        state = outofplane_cues(self.needle_at(d), plane, CFG)
        expected = CFG.tip_radius_min + (CFG.tip_radius_max - CFG.tip_radius_min) * (
            d / CFG.d_switch
        )
        assert state.tip_radius == pytest.approx(expected, abs=1e-12)

    def test_mode_threshold_exactness(self):
        plane = xy_plane()
        assert outofplane_cues(self.needle_at(CFG.d_switch), plane, CFG).display_mode == "near_circles"
        assert (
            outofplane_cues(self.needle_at(CFG.d_switch + 1e-6), plane, CFG).display_mode
            == "far_sphere"
        )
        assert (
            outofplane_cues(self.needle_at(CFG.epsilon_contact), plane, CFG).display_mode
            == "contact"
        )

    def test_parallel_ray_raises(self):
        needle = NeedleState(vec3(0, 0, 5), vec3(1, 0, 0), 120.0)
        with pytest.raises(RayParallelToPlane):
            outofplane_cues(needle, xy_plane(), CFG)

    def test_continuity_away_from_thresholds(self):
        plane = xy_plane()
        ds = np.linspace(CFG.d_switch - 0.5, CFG.epsilon_contact + 0.1, 400)
        prev = None
        for d in ds:
            s = outofplane_cues(self.needle_at(d), plane, CFG)
            vals = np.array([s.inner_radius, s.tip_radius, s.distance])
            if prev is not None:
                assert np.all(np.abs(vals - prev) < 0.1)
            prev = vals


class TestFrameInvariance:
    def test_inplane_rigid_invariance(self, rng):
        for _ in range(50):
            g = random_rigid(rng)
            needle = inplane_needle(offset=3.0, angle=0.1)
            plane = xy_plane()
            insertion = vec3(1.0, -20.0, 2.0)
            base = inplane_cues(needle, plane, insertion, CFG)
            moved = inplane_cues(
                needle.transformed(g), plane.transformed(g), g.apply(insertion), CFG
            )
            for field in ("r1", "r2", "r3", "r4", "line_width", "translation_offset", "rotation_angle"):
                assert getattr(base, field) == pytest.approx(getattr(moved, field), abs=1e-9)
            np.testing.assert_allclose(moved.shadow_origin, g.apply(base.shadow_origin), atol=1e-9)
            np.testing.assert_allclose(
                moved.shadow_direction, g.apply_direction(base.shadow_direction), atol=1e-9
            )

    def test_outofplane_rigid_invariance(self, rng):
        for _ in range(50):
            g = random_rigid(rng)
            needle = NeedleState(vec3(4, 5, 9), vec3(0, 0, -1), 120.0)
            plane = xy_plane()
            base = outofplane_cues(needle, plane, CFG)
            moved = outofplane_cues(needle.transformed(g), plane.transformed(g), CFG)
            for field in ("distance", "outer_radius", "inner_radius", "tip_radius", "image_alpha"):
                assert getattr(base, field) == pytest.approx(getattr(moved, field), abs=1e-9)
            assert base.display_mode == moved.display_mode
            np.testing.assert_allclose(moved.hit_point, g.apply(base.hit_point), atol=1e-9)


def aligned_needle_geometry():
    """Needle tool whose identity pose puts the tip on the plane, in-plane."""
    return NeedleToolGeometry(origin=(0.0, -120.0, 0.0), direction=(0.0, 1.0, 0.0), length=120.0)


class TestCueFrame:
    def test_composition_matches_direct_call(self):
        probe = ToolPoseSample(RigidTransform.identity(), timestamp_us=1000)
        needle = ToolPoseSample(RigidTransform.identity(), timestamp_us=1000)
        geometry = aligned_needle_geometry()
        state = cue_frame(
            IN_PLANE, probe, needle, None, geometry, CFG, now_us=1000
        )
        assert isinstance(state, InPlaneCueState)
        expected = inplane_cues(
            geometry.tip_state_in(needle.pose),
            ImagePlane.from_pose(probe.pose),
            geometry.tip_state_in(needle.pose).tip,
            CFG,
        )
        assert cue_state_to_json(state) == cue_state_to_json(expected)
        assert state.translation_color == CFG.color_aligned

    def test_mode_dispatch(self):
        probe = ToolPoseSample(RigidTransform.identity(), timestamp_us=0)
        needle_pose = RigidTransform(np.eye(3), np.array([0.0, 0.0, -130.0]))
        needle = ToolPoseSample(needle_pose, timestamp_us=0)
        state = cue_frame(
            OUT_OF_PLANE, probe, needle, None, NeedleToolGeometry(), CFG, now_us=0
        )
        assert isinstance(state, OutOfPlaneCueState)

    def test_tracking_lost_when_needle_stale(self):
        probe = ToolPoseSample(RigidTransform.identity(), timestamp_us=900_000)
        needle = ToolPoseSample(RigidTransform.identity(), timestamp_us=700_000)
        state = cue_frame(
            IN_PLANE, probe, needle, None, aligned_needle_geometry(), CFG, now_us=900_000
        )
        assert isinstance(state, TrackingLostCue)
        assert state.stale_tools == ("needle",)

    def test_tracking_lost_when_tool_missing(self):
        needle = ToolPoseSample(RigidTransform.identity(), timestamp_us=0)
        state = cue_frame(
            IN_PLANE, None, needle, None, aligned_needle_geometry(), CFG, now_us=0
        )
        assert isinstance(state, TrackingLostCue)
        assert state.stale_tools == ("probe",)

    def test_grace_window_boundary(self):
        probe = ToolPoseSample(RigidTransform.identity(), timestamp_us=0)
        needle = ToolPoseSample(RigidTransform.identity(), timestamp_us=0)
        geometry = aligned_needle_geometry()
        ok = cue_frame(IN_PLANE, probe, needle, None, geometry, CFG, now_us=100_000)
        assert isinstance(ok, InPlaneCueState)
        lost = cue_frame(IN_PLANE, probe, needle, None, geometry, CFG, now_us=100_001)
        assert isinstance(lost, TrackingLostCue)

    def test_unknown_mode_rejected(self):
        probe = ToolPoseSample(RigidTransform.identity(), timestamp_us=0)
        with pytest.raises(ValueError):
            cue_frame("sideways", probe, probe, None, NeedleToolGeometry(), CFG, now_us=0)

    def test_flip_plane_changes_sign(self):
        probe = ToolPoseSample(RigidTransform.identity(), timestamp_us=0)
        needle_pose = RigidTransform(np.eye(3), np.array([0.0, 0.0, -130.0]))
        needle = ToolPoseSample(needle_pose, timestamp_us=0)
        plain = cue_frame(OUT_OF_PLANE, probe, needle, None, NeedleToolGeometry(), CFG, now_us=0)
        flipped = cue_frame(
            OUT_OF_PLANE, probe, needle, None, NeedleToolGeometry(), CFG, now_us=0, flip_plane=True
        )
        assert plain.distance == pytest.approx(-flipped.distance, abs=1e-12)


class TestSerialization:
    def test_canonical_json_is_stable(self):
        state = outofplane_cues(
            NeedleState(vec3(1, 2, -30), vec3(0, 0, 1), 120.0), xy_plane(), CFG
        )
        a = cue_state_to_json(state)
        b = cue_state_to_json(state)
        assert a == b
        payload = json.loads(a)
        assert payload["kind"] == OUT_OF_PLANE
        assert payload["display_mode"] == "far_sphere"

    def test_tracking_lost_serialization(self):
        assert json.loads(cue_state_to_json(TrackingLostCue(("probe",)))) == {
            "kind": "tracking_lost",
            "stale_tools": ["probe"],
        }

    def test_deterministic_replay_of_pose_trace(self, rng):
        # Byte-identical cue logs across two replays of one recorded trace.
        from usnav.service import SessionConfig, replay_trace
        from usnav.wire import TrackingPacket

        entries = []
        for k in range(60):
            angle = 0.002 * k
            pose = RigidTransform(
                rotation_about([1, 0, 0], angle), np.array([0.0, 0.0, 0.1 * k])
            )
            packet = TrackingPacket.from_pose(2, 1000 * k, pose)
            entries.append(
                {
                    "tool_id": 2,
                    "timestamp_us": packet.timestamp_us,
                    "quaternion": list(packet.quaternion),
                    "translation": list(packet.translation),
                }
            )
            probe_packet = TrackingPacket.from_pose(1, 1000 * k, RigidTransform.identity())
            entries.append(
                {
                    "tool_id": 1,
                    "timestamp_us": probe_packet.timestamp_us,
                    "quaternion": list(probe_packet.quaternion),
                    "translation": list(probe_packet.translation),
                }
            )
        config = SessionConfig(needle_geometry=NeedleToolGeometry(length=130.0))
        log1 = replay_trace(entries, config)
        log2 = replay_trace(entries, config)
        assert log1 == log2
        assert len(log1) == len(entries)
