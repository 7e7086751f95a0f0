# Walk through turning a product photo mask plus a size into per-frame
# skeleton and box guidance. Run from the repository root:
#     python demos/01_guidance_plan.py
import json
from importlib.resources import files

import numpy as np

from guidestage import templates as tpl
from guidestage.body import hand_anchor, orientation_class
from guidestage.geometry import min_rotated_rect, read_pgm_mask
from guidestage.raster import render_plan

data = files("guidestage") / "data"
cam = tpl.DEFAULT_CAMERA
pool = tpl.load_pool(data / "pool.json")
human = tpl.HumanInput.from_json(json.loads((data / "human.json").read_text()))
mask = read_pgm_mask(data / "bottle_mask.pgm")

# The mask only fixes the product's shape. Its tightest oriented rectangle
# gives the height/width ratio that every frame's box keeps.
rect = min_rotated_rect(mask)
print(f"mask: {int(mask.bits.sum())} px, rect {rect.width:.1f} x {rect.height:.1f}, aspect {rect.height / rect.width:.3f}")

# which motion gets picked depends on the size and on where the person faces
for size in (5.0, 22.0, 33.0):
    plan = tpl.compile_guidance(human, tpl.ProductSpec(size, mask), pool, cam)
    print(f"{size:5.1f} cm -> hold {plan.hold_id:<20} other hand {plan.other_hand_id}")

plan = tpl.compile_guidance(human, tpl.ProductSpec(22.0, mask), pool, cam)
print("orientation:", orientation_class(plan.poses[0]).value, " frames:", plan.frame_count)

# The box rides on the holding hand and keeps the mask's aspect in every frame.
for k in (0, plan.frame_count // 2, plan.frame_count - 1):
    box, pose = plan.boxes[k], plan.poses[k]
    anchor = hand_anchor(pose, "Right", cam)
    print(f"frame {k:2d}: box center ({box.cx:.2f}, {box.cy:.2f}), h/w {box.height / box.width:.3f}, hand {np.round(anchor, 2)}")

# two hands: the box spans the two hand anchors exactly
wide = tpl.compile_guidance(human, tpl.ProductSpec(33.0, mask), pool, cam)
gap = hand_anchor(wide.poses[0], "Left", cam) - hand_anchor(wide.poses[0], "Right", cam)
print(f"two-hand width {wide.boxes[0].width:.4f} px vs anchor gap {np.hypot(*gap):.4f} px")

frames = render_plan(plan, cam)
print("guidance frames:", frames.shape, "value range", frames.min(), frames.max())
