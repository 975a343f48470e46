"""Joint layout shared by every dataset in the package (PoseTrack 15-joint order)."""

JOINT_NAMES = (
    "right_ankle",
    "right_knee",
    "right_hip",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_wrist",
    "right_elbow",
    "right_shoulder",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "head_bottom",
    "nose",
    "head_top",
)

NUM_JOINTS = len(JOINT_NAMES)
JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}


def _mirror(name):
    if name.startswith("left_"):
        return "right_" + name[5:]
    if name.startswith("right_"):
        return "left_" + name[6:]
    return name


# FLIP_PERMUTATION[k] is the channel that joint k moves to under a horizontal flip
FLIP_PERMUTATION = tuple(JOINT_INDEX[_mirror(n)] for n in JOINT_NAMES)

# Rendered segments, in draw order. Each limb gets its own colour so that the
# toy encoder can tell joints apart from local appearance alone.
LIMBS = (
    ("head_bottom", "pelvis"),
    ("right_shoulder", "left_shoulder"),
    ("right_hip", "left_hip"),
    ("right_shoulder", "right_hip"),
    ("left_shoulder", "left_hip"),
    ("head_bottom", "nose"),
    ("nose", "head_top"),
    ("right_hip", "right_knee"),
    ("right_knee", "right_ankle"),
    ("left_hip", "left_knee"),
    ("left_knee", "left_ankle"),
    ("right_shoulder", "right_elbow"),
    ("right_elbow", "right_wrist"),
    ("left_shoulder", "left_elbow"),
    ("left_elbow", "left_wrist"),
)

LIMB_COLORS = (
    (0.55, 0.55, 0.95),
    (0.35, 0.75, 0.95),
    (0.30, 0.50, 0.70),
    (0.95, 0.55, 0.25),
    (0.25, 0.95, 0.55),
    (0.95, 0.95, 0.95),
    (0.75, 0.75, 0.35),
    (0.95, 0.20, 0.20),
    (0.60, 0.10, 0.30),
    (0.20, 0.95, 0.20),
    (0.10, 0.55, 0.25),
    (0.95, 0.30, 0.80),
    (0.55, 0.20, 0.95),
    (0.95, 0.85, 0.10),
    (0.20, 0.85, 0.85),
)
