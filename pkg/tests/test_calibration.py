import math

import numpy as np
import pytest

from usnav.calibration import (
    BoundingBox,
    DegenerateTopEdge,
    DimensionMismatch,
    EmptyMask,
    ImageMask,
    ProbeGeometry,
    compute_probe_geometry,
    detect_top_corners,
    extract_bounds,
    package_frame,
    read_mask_pgm,
    read_pgm,
    write_pgm,
)
from usnav.simulate import DEFAULT_FAN, DEFAULT_SENSOR_WIDTH_MM, FanSpec


def rect_mask(width=200, height=100, u0=10, u1=110, v0=5, v1=80):
    bits = np.zeros((height, width), dtype=bool)
    bits[v0 : v1 + 1, u0 : u1 + 1] = True
    return ImageMask(bits)


# 45-degree test fan with analytically exact corner columns.
TEST_FAN = FanSpec(
    width=160,
    height=130,
    apex_u=60.0,
    apex_v=-20.0,
    v_top=10,
    half_angle=math.atan(1.0) + 1e-12,
    r_outer=120.3,
)


class TestImageMask:
    def test_rejects_empty(self):
        with pytest.raises(EmptyMask):
            ImageMask(np.zeros((4, 4), dtype=bool))

    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            ImageMask(np.ones((2, 2, 2), dtype=bool))

    def test_connectivity_check(self):
        bits = np.zeros((5, 5), dtype=bool)
        bits[0, 0] = True
        bits[4, 4] = True
        assert not ImageMask(bits).is_connected()
        assert ImageMask(np.ones((3, 3), dtype=bool)).is_connected()
        assert DEFAULT_FAN.rasterize().is_connected()


class TestExtractBounds:
    def test_full_true(self):
        box = extract_bounds(ImageMask(np.ones((10, 10), dtype=bool)))
        assert (box.u_min, box.u_max, box.v_min, box.v_max) == (0, 9, 0, 9)

    def test_single_pixel(self):
        bits = np.zeros((10, 10), dtype=bool)
        bits[7, 4] = True
        box = extract_bounds(ImageMask(bits))
        assert (box.u_min, box.u_max, box.v_min, box.v_max) == (4, 4, 7, 7)

    def test_fan_matches_generator_oracle(self):
        mask = DEFAULT_FAN.rasterize()
        box = extract_bounds(mask)
        assert (box.u_min, box.u_max, box.v_min, box.v_max) == DEFAULT_FAN.expected_bounds()

    def test_tightness(self):
        mask = DEFAULT_FAN.rasterize()
        box = extract_bounds(mask)
        assert mask.bits[box.v_min, :].any()
        assert mask.bits[box.v_max, :].any()
        assert mask.bits[:, box.u_min].any()
        assert mask.bits[:, box.u_max].any()

    def test_bbox_validation(self):
        with pytest.raises(ValueError):
            BoundingBox(5, 4, 0, 0)


class TestDetectTopCorners:
    def test_rectangle(self):
        mask = rect_mask()
        assert detect_top_corners(mask, extract_bounds(mask)) == (10, 110)

    def test_flat_top_fan(self):
        mask = TEST_FAN.rasterize()
        corners = detect_top_corners(mask, extract_bounds(mask))
        assert corners == TEST_FAN.top_corner_columns() == (30, 90)

    def test_speckle_above_top_edge_is_skipped(self):
        bits = TEST_FAN.rasterize().bits.copy()
        bits[TEST_FAN.v_top - 3, 60] = True  # isolated 1-px speckle
        mask = ImageMask(bits)
        assert detect_top_corners(mask, extract_bounds(mask)) == (30, 90)

    def test_degenerate_when_no_wide_run(self):
        bits = np.zeros((20, 20), dtype=bool)
        for k in range(4, 16):
            bits[k, k] = True  # 1-px diagonal
        mask = ImageMask(bits)
        with pytest.raises(DegenerateTopEdge):
            detect_top_corners(mask, extract_bounds(mask))


class TestComputeProbeGeometry:
    def test_convex_pixel_width(self):
        mask = rect_mask(u0=10, u1=110)
        geom = compute_probe_geometry(mask, "convex", 50.0)
        assert geom.pixel_width == pytest.approx(0.5, abs=1e-12)
        assert geom.corners == (10, 110)
        assert geom.origin == (60, 5)

    def test_linear_pixel_width(self):
        mask = rect_mask(width=520, u0=0, u1=499)
        geom = compute_probe_geometry(mask, "linear", 49.9)
        assert geom.pixel_width == pytest.approx(0.1, abs=1e-12)
        assert geom.corners == (0, 499)

    def test_origin_maps_to_tool_origin(self):
        geom = compute_probe_geometry(DEFAULT_FAN.rasterize(), "convex", DEFAULT_SENSOR_WIDTH_MM)
        np.testing.assert_allclose(geom.pixel_to_tool(*geom.origin), np.zeros(3), atol=1e-12)

    def test_extrinsic_structure_entry_by_entry(self):
        geom = compute_probe_geometry(DEFAULT_FAN.rasterize(), "convex", DEFAULT_SENSOR_WIDTH_MM)
        pw = geom.pixel_width
        u_c, v_c = geom.origin
        b = geom.bounds
        expected = np.array(
            [
                [pw, 0, 0, -pw * (u_c - b.u_min)],
                [0, pw, 0, -pw * (v_c - b.v_min)],
                [0, 0, 1, 0],
                [0, 0, 0, 1],
            ]
        )
        np.testing.assert_array_equal(geom.extrinsic, expected)

    def test_pixel_roundtrip(self):
        geom = compute_probe_geometry(DEFAULT_FAN.rasterize(), "convex", DEFAULT_SENSOR_WIDTH_MM)
        rng = np.random.default_rng(3)
        for _ in range(200):
            u = rng.uniform(geom.bounds.u_min, geom.bounds.u_max)
            v = rng.uniform(geom.bounds.v_min, geom.bounds.v_max)
            u2, v2 = geom.tool_to_pixel(geom.pixel_to_tool(u, v))
            assert abs(u2 - u) < 1e-9
            assert abs(v2 - v) < 1e-9

    def test_scale_law(self):
        lo = FanSpec(
            width=160, height=130, apex_u=60.0, apex_v=-20.25, v_top=10,
            half_angle=math.atan(1.0) + 1e-12, r_outer=100.3,
        )
        hi = FanSpec(
            width=320, height=260, apex_u=120.0, apex_v=-40.5, v_top=20,
            half_angle=math.atan(1.0) + 1e-12, r_outer=200.6,
        )
        g_lo = compute_probe_geometry(lo.rasterize(), "convex", 50.0)
        g_hi = compute_probe_geometry(hi.rasterize(), "convex", 50.0)
        assert abs(g_hi.pixel_width - g_lo.pixel_width / 2.0) < 1e-9 * g_lo.pixel_width

    def test_kind_consistency_on_rectangle(self):
        mask = rect_mask()
        convex = compute_probe_geometry(mask, "convex", 50.0)
        linear = compute_probe_geometry(mask, "linear", 50.0)
        assert convex.pixel_width == linear.pixel_width
        assert convex.origin == linear.origin
        assert convex.corners == linear.corners
        np.testing.assert_array_equal(convex.extrinsic, linear.extrinsic)

    def test_invalid_inputs(self):
        mask = rect_mask()
        with pytest.raises(ValueError):
            compute_probe_geometry(mask, "sector", 50.0)
        with pytest.raises(ValueError):
            compute_probe_geometry(mask, "convex", 0.0)

    def test_geometry_invariant_enforced(self):
        geom = compute_probe_geometry(rect_mask(), "convex", 50.0)
        doctored = geom.extrinsic.copy()
        doctored[0, 3] += 1.0
        with pytest.raises(ValueError, match="extrinsic"):
            ProbeGeometry(
                kind=geom.kind,
                pixel_width=geom.pixel_width,
                origin=geom.origin,
                sensor_width=geom.sensor_width,
                corners=geom.corners,
                bounds=geom.bounds,
                extrinsic=doctored,
            )

    def test_json_roundtrip(self):
        geom = compute_probe_geometry(DEFAULT_FAN.rasterize(), "convex", DEFAULT_SENSOR_WIDTH_MM)
        restored = ProbeGeometry.from_json(geom.to_json())
        assert restored.kind == geom.kind
        assert restored.pixel_width == geom.pixel_width
        assert restored.origin == geom.origin
        assert restored.bounds == geom.bounds
        np.testing.assert_array_equal(restored.extrinsic, geom.extrinsic)


class TestPackageFrame:
    def test_all_valid_crop_is_identity(self, rng):
        mask = ImageMask(np.ones((40, 60), dtype=bool))
        geom = compute_probe_geometry(mask, "linear", 30.0)
        image = rng.integers(0, 256, size=(40, 60), dtype=np.uint8)
        packed = package_frame(image, mask, geom, probe_tag="SC5-1U")
        np.testing.assert_array_equal(packed.crop, image)
        assert packed.mask.all()
        assert packed.transparent_count == 0
        assert packed.probe_tag == "SC5-1U"

    def test_dimension_mismatch(self):
        mask = ImageMask(np.ones((40, 60), dtype=bool))
        geom = compute_probe_geometry(mask, "linear", 30.0)
        with pytest.raises(DimensionMismatch):
            package_frame(np.zeros((41, 60), dtype=np.uint8), mask, geom)

    def test_full_size_frame_payload_class(self, rng):
        # Largest frame size in the latency methodology: image + same-size
        # mask comes to ~1.21 MiB under the one-byte-per-pixel encoding.
        bits = np.ones((604, 1053), dtype=bool)
        bits[0, 0] = False  # keep the mask non-trivial
        bits[0, 1053 - 1] = False
        mask = ImageMask(bits)
        geom = compute_probe_geometry(mask, "linear", 100.0)
        image = rng.integers(0, 256, size=(604, 1053), dtype=np.uint8)
        packed = package_frame(image, mask, geom)
        assert packed.nbytes == 2 * 1053 * 604
        assert packed.nbytes / 2**20 == pytest.approx(1.21, abs=0.01)

    def test_transparent_count_matches_mask_oracle(self, rng):
        mask = DEFAULT_FAN.rasterize()
        geom = compute_probe_geometry(mask, "convex", DEFAULT_SENSOR_WIDTH_MM)
        image = rng.integers(0, 256, size=(mask.height, mask.width), dtype=np.uint8)
        packed = package_frame(image, mask, geom)
        b = geom.bounds
        region = mask.bits[b.v_min : b.v_max + 1, b.u_min : b.u_max + 1]
        assert packed.transparent_count == int((~region).sum())
        # valid payload bytes are untouched
        crop_src = image[b.v_min : b.v_max + 1, b.u_min : b.u_max + 1]
        np.testing.assert_array_equal(packed.crop[region], crop_src[region])


class TestPgmIO:
    def test_mask_roundtrip(self, tmp_path):
        mask = DEFAULT_FAN.rasterize()
        path = tmp_path / "fan.pgm"
        write_pgm(path, mask.bits)
        restored = read_mask_pgm(path)
        np.testing.assert_array_equal(restored.bits, mask.bits)

    def test_gray_roundtrip(self, tmp_path, rng):
        image = rng.integers(0, 256, size=(31, 47), dtype=np.uint8)
        path = tmp_path / "img.pgm"
        write_pgm(path, image)
        np.testing.assert_array_equal(read_pgm(path), image)

    def test_comments_supported(self, tmp_path):
        path = tmp_path / "c.pgm"
        payload = bytes(range(6))
        path.write_bytes(b"P5\n# comment line\n3 2\n255\n" + payload)
        grid = read_pgm(path)
        assert grid.shape == (2, 3)
        assert grid.tobytes() == payload

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x00\x01")
        with pytest.raises(Exception, match="truncated"):
            read_pgm(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "w.pgm"
        path.write_bytes(b"P2\n2 2\n255\n0 0 0 0")
        with pytest.raises(Exception, match="P5"):
            read_pgm(path)
