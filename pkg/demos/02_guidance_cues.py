"""Guidance-cue walkthrough for both puncture modes.

Sweeps a virtual needle toward the image plane and prints how the cue
parameters evolve: circle radii converging, line width thinning, mode
switches, and the contact state with image transparency.
"""

import numpy as np

from usnav.cues import CueConfig, inplane_cues, outofplane_cues
from usnav.geometry import ImagePlane, NeedleState, RigidTransform, vec3

cfg = CueConfig()
plane = ImagePlane.from_pose(RigidTransform.identity())

print("== in-plane mode: tip offset sweep ==")
print(f"{'offset mm':>10} {'r1':>6} {'r2':>6} {'width':>6}  palette")
for offset in [12.0, 8.0, 4.0, 2.0, 1.0, 0.4, 0.0]:
    needle = NeedleState(vec3(0.0, 20.0, offset), vec3(0, 1, 0), 120.0)
    state = inplane_cues(needle, plane, vec3(0.0, -40.0, 0.0), cfg)
    print(
        f"{offset:10.1f} {state.r1:6.2f} {state.r2:6.2f} {state.line_width:6.2f}  "
        f"{'aligned' if state.translation_color == cfg.color_aligned else 'misaligned'}"
    )

print("\n== in-plane mode: rotation sweep (offset 0) ==")
print(f"{'angle deg':>10} {'r3':>6} {'r4':>6}")
for deg in [15.0, 10.0, 5.0, 2.0, 0.5]:
    a = np.radians(deg)
    needle = NeedleState(vec3(0, 20, 0), vec3(0.0, np.cos(a), np.sin(a)), 120.0)
    state = inplane_cues(needle, plane, vec3(0.0, -40.0, 0.0), cfg)
    print(f"{deg:10.1f} {state.r3:6.2f} {state.r4:6.2f}")

print("\n== out-of-plane mode: approach sweep ==")
print(f"{'d mm':>6} {'mode':>12} {'inner':>6} {'outer':>6} {'tip':>5} {'alpha':>5}")
for d in [30.0, 20.0, 15.0, 10.0, 5.0, 2.0, 0.4, 0.0]:
    needle = NeedleState(vec3(5.0, 5.0, -d), vec3(0, 0, 1), 120.0)
    state = outofplane_cues(needle, plane, cfg)
    print(
        f"{d:6.1f} {state.display_mode:>12} {state.inner_radius:6.2f} "
        f"{state.outer_radius:6.2f} {state.tip_radius:5.2f} {state.image_alpha:5.2f}"
    )
print("\nat contact the circles vanish, the tip turns the contact color,")
print("and the image alpha drops so the extruded tip stays visible.")
