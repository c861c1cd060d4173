"""Probe calibration walkthrough: from a validity mask to pixel geometry.

Generates the synthetic convex fan, identifies the top corners and
origin, builds the pixel->tool extrinsic, and demonstrates the mapping
on a few pixels. Writes the mask (PGM) and geometry (JSON) next to this
script when run with an output directory argument.
"""

import sys

import numpy as np

from usnav.calibration import compute_probe_geometry, write_pgm
from usnav.simulate import DEFAULT_FAN, DEFAULT_SENSOR_WIDTH_MM

mask = DEFAULT_FAN.rasterize()
print(f"fan mask: {mask.width} x {mask.height} px, "
      f"{int(mask.bits.sum())} valid pixels, connected={mask.is_connected()}")

geom = compute_probe_geometry(mask, "convex", DEFAULT_SENSOR_WIDTH_MM)
print(f"top corners: columns {geom.corners[0]} .. {geom.corners[1]}")
print(f"aperture L = {DEFAULT_SENSOR_WIDTH_MM} mm over "
      f"{geom.corners[1] - geom.corners[0]} px -> pixel width {geom.pixel_width} mm/px")
print(f"image origin pixel: {geom.origin}")
print("extrinsic (pixel -> tool mm):")
print(np.array_str(geom.extrinsic, precision=3, suppress_small=True))

print("\npixel mapping samples:")
for u, v in [geom.origin, (geom.bounds.u_min, geom.bounds.v_min), (450, 300)]:
    point = geom.pixel_to_tool(u, v)
    print(f"  pixel ({u:4d}, {v:4d}) -> tool ({point[0]:7.2f}, {point[1]:7.2f}, {point[2]:4.1f}) mm")

if len(sys.argv) > 1:
    out = sys.argv[1]
    write_pgm(f"{out}/fan_mask.pgm", mask.bits)
    with open(f"{out}/probe_geometry.json", "w") as f:
        f.write(geom.to_json())
    print(f"\nwrote {out}/fan_mask.pgm and {out}/probe_geometry.json")
