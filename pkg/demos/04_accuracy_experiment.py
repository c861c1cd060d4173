"""Accuracy-experiment walkthrough at reduced scale.

Runs the tracked-intersection experiment on a subsampled target grid
(every 4th of the 353 targets, 40 frames each), prints the depth-band
table, and notes how the errors degrade with target depth. Run the CLI
(``usnav accuracy``) for the full 353 x 200 replication.
"""

import time

from usnav.experiments import AccuracyGrid, BAND_LABELS, run_accuracy_experiment
from usnav.simulate import DEFAULT_FAN, DepthCameraModel, default_probe_geometry, default_tools

mask = DEFAULT_FAN.rasterize()
geom = default_probe_geometry()
grid_full = AccuracyGrid.generate(geom, mask)
print(f"full grid: {len(grid_full)} targets at {grid_full.spacing} mm spacing, "
      f"depth extent {grid_full.depth_extent} mm")

grid = AccuracyGrid(grid_full.targets[::4], frames_per_target=40)
camera = DepthCameraModel()
print(f"demo run: {len(grid)} targets x {grid.frames_per_target} frames, "
      f"camera sigma_xy={camera.sigma_xy} sigma_z={camera.sigma_z} q={camera.quant_step} mm")

start = time.monotonic()
report = run_accuracy_experiment(grid, camera, list(default_tools()), geom, seed=1)
print(f"tracked {len(report.sample_target)} frames in {time.monotonic() - start:.1f} s "
      f"({report.tracking_failures} tracking failures)\n")

print(f"{'depth band':>12} {'targets':>8} {'in-plane MAE':>13} {'oop MAE':>9} {'offset':>8}")
for label in BAND_LABELS:
    stats = report.band_stats[label]
    if not stats.get("targets"):
        continue
    print(
        f"{label:>12} {stats['targets']:>8} "
        f"{stats['sample_inplane_mae_mm']:>10.2f} mm "
        f"{stats['sample_oop_mae_mm']:>6.2f} mm "
        f"{stats['offset_mean_mm']:>5.2f} mm"
    )
print(f"\noverall: in-plane {report.overall_inplane_mae_mm:.2f} mm, "
      f"out-of-plane {report.overall_oop_mae_mm:.2f} mm")
print("both errors grow with target depth: deeper image points amplify")
print("the tracked probe's angular error, and depth noise tilts both plates.")
