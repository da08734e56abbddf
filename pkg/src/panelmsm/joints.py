"""Hand-joint identifiers, contralateral lookup, and joint-type encoding.

The unit of observation is one of the 28 hand joints: metacarpophalangeal
(MCP), proximal interphalangeal (PIP) and distal interphalangeal (DIP)
joints on each of four fingers, plus MCP and PIP on the thumb, in each
hand.  Joint type enters regressions as a five-level categorical variable
with thumb PIP as the baseline level.
"""

from dataclasses import dataclass

import numpy as np

HANDS = ("L", "R")
FINGER_SITES = ("MCP", "PIP", "DIP")
THUMB_SITES = ("TMCP", "TPIP")
SITES = FINGER_SITES + THUMB_SITES

# Dummy-coded joint type: columns (MCP, PIP, DIP, TMCP), TPIP is baseline.
JOINT_TYPE_LEVELS = ("MCP", "PIP", "DIP", "TMCP")


@dataclass(frozen=True)
class JointId:
    """One of the 28 hand joints.

    digit 1 is the thumb (sites TMCP/TPIP); digits 2-5 are the fingers
    (sites MCP/PIP/DIP).
    """

    hand: str
    digit: int
    site: str

    def __post_init__(self):
        if self.hand not in HANDS:
            raise ValueError(f"hand must be one of {HANDS}, got {self.hand!r}")
        if self.digit == 1:
            if self.site not in THUMB_SITES:
                raise ValueError(f"thumb joints must have site in {THUMB_SITES}")
        elif 2 <= self.digit <= 5:
            if self.site not in FINGER_SITES:
                raise ValueError(f"finger joints must have site in {FINGER_SITES}")
        else:
            raise ValueError(f"digit must be 1-5, got {self.digit}")

    def label(self) -> str:
        return f"{self.hand}{self.digit}{self.site}"


def _enumerate_joints() -> tuple[JointId, ...]:
    joints = []
    for hand in HANDS:
        joints.append(JointId(hand, 1, "TMCP"))
        joints.append(JointId(hand, 1, "TPIP"))
        for digit in range(2, 6):
            for site in FINGER_SITES:
                joints.append(JointId(hand, digit, site))
    return tuple(joints)


ALL_JOINTS: tuple[JointId, ...] = _enumerate_joints()
N_JOINTS = len(ALL_JOINTS)
JOINT_INDEX: dict[JointId, int] = {j: k for k, j in enumerate(ALL_JOINTS)}

assert N_JOINTS == 28


def opposite_joint(joint: JointId) -> JointId:
    """Contralateral joint: same digit and site on the other hand."""
    return JointId("R" if joint.hand == "L" else "L", joint.digit, joint.site)


# Index of each joint's contralateral partner, aligned with ALL_JOINTS.
OPPOSITE_INDEX = np.array([JOINT_INDEX[opposite_joint(j)] for j in ALL_JOINTS])


def encode_joint_type(joint: JointId) -> np.ndarray:
    """Dummy vector (MCP, PIP, DIP, TMCP); all zeros for the baseline TPIP."""
    out = np.zeros(4)
    if joint.site in JOINT_TYPE_LEVELS:
        out[JOINT_TYPE_LEVELS.index(joint.site)] = 1.0
    return out


# (28, 4) matrix of joint-type dummies, aligned with ALL_JOINTS.
JOINT_TYPE_DUMMIES = np.array([encode_joint_type(j) for j in ALL_JOINTS])
