# Estimate object poses from segmentation masks and compare with the simulator's truth.
import math
import tempfile
from pathlib import Path

from tabletop_grasp.maskio import pose_record_for_file, write_mask
from tabletop_grasp.perception_bridge import SimulatorMaskSource, perceive, select_target
from tabletop_grasp.tabletop_env import CLASS_NAMES, ScenarioSpec, TabletopEnv

# A cluttered scene: some objects sit partly on top of others
env = TabletopEnv(ScenarioSpec("clutter", object_count=6, overlap_density=0.5))
env.reset(seed=3)

# Perception works on masks only; poses come out in world coordinates
detections = perceive(SimulatorMaskSource(env), env.workspace.calib)
truth = {o.uid: o for o in env.objects}
print(f"{'class':<16}{'ratio':>7}{'x err':>9}{'y err':>9}{'angle err':>11}")
for d in detections:
    t = truth[d.uid]
    if not d.visible:
        print(f"{CLASS_NAMES[d.class_label]:<16}{d.ratio:>7.2f}   hidden")
        continue
    gap = abs((d.pose.theta - t.pose.theta + math.pi / 2) % math.pi - math.pi / 2)
    angle = "-" if t.orientation_free else f"{gap:.3f}"
    print(f"{CLASS_NAMES[d.class_label]:<16}{d.ratio:>7.2f}{d.pose.x - t.pose.x:>9.4f}"
          f"{d.pose.y - t.pose.y:>9.4f}{angle:>11}")

# Occluded objects have a low visible ratio; the least covered one is picked first
first = select_target(detections, "by_ratio")
print("first pick:", CLASS_NAMES[first.class_label], f"(ratio {first.ratio:.2f})")

# The same masks written to disk give the same pixel-frame poses as the CLI 'pose' command
with tempfile.TemporaryDirectory() as tmp:
    for i, r in enumerate(env.render()):
        if not r.visible:
            continue
        path = Path(tmp) / f"object{i}.pgm"
        write_mask(path, r.mask, env.workspace.pixel_grid, r.full_area)
        print(path.name, pose_record_for_file(path))
