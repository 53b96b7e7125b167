"""Analytic kinematics for a 3-DOF quadruped leg (abduction, hip, knee).

Conventions:
  - joint order per leg: (q_abd, q_hip, q_knee); all-zero = leg straight down
  - knee bends backward, q_knee <= 0 on the solution branch
  - leg order across the robot: FR, FL, RR, RL; right side_sign = -1
  - sagittal chain: x = -T*sin(q_hip) - C*sin(q_hip + q_knee),
                    z = -T*cos(q_hip) - C*cos(q_hip + q_knee)
  - the abduction joint rotates the (lateral offset, sagittal) assembly
    about the body x axis

Everything broadcasts over leading axes; feet/Jacobians for all four legs
come from the *_all variants with a legs axis.
"""

from dataclasses import dataclass, field

import numpy as np

LEG_NAMES = ("FR", "FL", "RR", "RL")
LEG_INDEX = {name: i for i, name in enumerate(LEG_NAMES)}
# diagonal trot pairs and the adjacent pairs used by gait checks
DIAGONAL_PAIRS = ((0, 3), (1, 2))
ADJACENT_PAIRS = ((0, 1), (2, 3), (0, 2), (1, 3))

_DEFAULT_MOUNTS = (
    (0.1881, -0.04675, 0.0),   # FR
    (0.1881, 0.04675, 0.0),    # FL
    (-0.1881, -0.04675, 0.0),  # RR
    (-0.1881, 0.04675, 0.0),   # RL
)
_DEFAULT_SIDES = (-1.0, 1.0, -1.0, 1.0)


class Unreachable(ValueError):
    """Target foot position lies outside the leg workspace."""

    def __init__(self, point, detail: str = ""):
        self.point = np.asarray(point, dtype=float)
        super().__init__(f"unreachable foot target {self.point}{': ' + detail if detail else ''}")


@dataclass(frozen=True)
class LegGeometry:
    """Link lengths and hip mount points shared by the four legs."""

    hip_offset: float = 0.08   # lateral offset from abduction axis, m
    thigh_len: float = 0.213   # m
    calf_len: float = 0.213    # m
    hip_mounts: np.ndarray = field(
        default_factory=lambda: np.array(_DEFAULT_MOUNTS)
    )  # (4, 3) body frame
    side_signs: np.ndarray = field(
        default_factory=lambda: np.array(_DEFAULT_SIDES)
    )  # +1 left, -1 right

    def __post_init__(self):
        object.__setattr__(self, "hip_mounts", np.asarray(self.hip_mounts, dtype=float))
        object.__setattr__(self, "side_signs", np.asarray(self.side_signs, dtype=float))
        if min(self.hip_offset, self.thigh_len, self.calf_len) <= 0.0:
            raise ValueError("all leg lengths must be positive")

    @property
    def max_reach(self) -> float:
        return self.thigh_len + self.calf_len

    @property
    def min_reach(self) -> float:
        return abs(self.thigh_len - self.calf_len)


def _sagittal_chain(q_hip, q_knee, geom: LegGeometry):
    t, c = geom.thigh_len, geom.calf_len
    x = -t * np.sin(q_hip) - c * np.sin(q_hip + q_knee)
    z = -t * np.cos(q_hip) - c * np.cos(q_hip + q_knee)
    return x, z


def forward_kinematics(q, geom: LegGeometry, leg: int) -> np.ndarray:
    """Foot position in the body frame for one leg; q is (..., 3)."""
    q = np.asarray(q, dtype=float)
    q_abd, q_hip, q_knee = q[..., 0], q[..., 1], q[..., 2]
    x, z = _sagittal_chain(q_hip, q_knee, geom)
    y = geom.side_signs[leg] * geom.hip_offset
    ca, sa = np.cos(q_abd), np.sin(q_abd)
    foot = np.stack([x, ca * y - sa * z, sa * y + ca * z], axis=-1)
    return geom.hip_mounts[leg] + foot


def forward_kinematics_all(q12, geom: LegGeometry) -> np.ndarray:
    """Feet for all four legs: q12 is (..., 12) -> (..., 4, 3) body frame."""
    q = np.asarray(q12, dtype=float)
    q = q.reshape(q.shape[:-1] + (4, 3))
    q_abd, q_hip, q_knee = q[..., 0], q[..., 1], q[..., 2]
    x, z = _sagittal_chain(q_hip, q_knee, geom)
    y = geom.side_signs * geom.hip_offset
    ca, sa = np.cos(q_abd), np.sin(q_abd)
    foot = np.stack([x, ca * y - sa * z, sa * y + ca * z], axis=-1)
    return geom.hip_mounts + foot


def leg_jacobian(q, geom: LegGeometry, leg: int) -> np.ndarray:
    """d(foot)/d(q) for one leg, (..., 3, 3); column order (abd, hip, knee)."""
    q = np.asarray(q, dtype=float)
    return _jacobian_core(
        q[..., 0], q[..., 1], q[..., 2], geom,
        geom.side_signs[leg] * geom.hip_offset,
    )


def leg_jacobian_all(q12, geom: LegGeometry) -> np.ndarray:
    """Jacobians for all four legs: (..., 12) -> (..., 4, 3, 3)."""
    q = np.asarray(q12, dtype=float)
    q = q.reshape(q.shape[:-1] + (4, 3))
    return _jacobian_core(
        q[..., 0], q[..., 1], q[..., 2], geom, geom.side_signs * geom.hip_offset
    )


def _jacobian_core(q_abd, q_hip, q_knee, geom: LegGeometry, y_off):
    t, c = geom.thigh_len, geom.calf_len
    hk = q_hip + q_knee
    x, z = _sagittal_chain(q_hip, q_knee, geom)
    dx_dhip = -t * np.cos(q_hip) - c * np.cos(hk)
    dz_dhip = t * np.sin(q_hip) + c * np.sin(hk)
    dx_dknee = -c * np.cos(hk)
    dz_dknee = c * np.sin(hk)
    ca, sa = np.cos(q_abd), np.sin(q_abd)
    zero = np.zeros_like(x)
    y_off = np.broadcast_to(y_off, x.shape)

    # columns: d(foot)/d(q_abd), d(foot)/d(q_hip), d(foot)/d(q_knee)
    col_abd = np.stack([zero, -sa * y_off - ca * z, ca * y_off - sa * z], axis=-1)
    col_hip = np.stack([dx_dhip, -sa * dz_dhip, ca * dz_dhip], axis=-1)
    col_knee = np.stack([dx_dknee, -sa * dz_dknee, ca * dz_dknee], axis=-1)
    return np.stack([col_abd, col_hip, col_knee], axis=-1)


def inverse_kinematics(p, geom: LegGeometry, leg: int) -> np.ndarray:
    """Closed-form IK for one leg on the knee-backward branch (q_knee <= 0).

    The solution keeps the foot below the abduction axis (sagittal z <= 0),
    which is unique for locomotion poses. Raises Unreachable when the target
    lies outside the annular workspace or inside the hip-offset cylinder.
    """
    p = np.asarray(p, dtype=float)
    rel = p - geom.hip_mounts[leg]
    y_off = geom.side_signs[leg] * geom.hip_offset

    r_yz_sq = rel[1] ** 2 + rel[2] ** 2
    z_sq = r_yz_sq - y_off**2
    if z_sq < -1e-12:
        raise Unreachable(p, "inside the abduction-axis offset cylinder")
    z_s = -np.sqrt(max(z_sq, 0.0))
    q_abd = np.arctan2(rel[2], rel[1]) - np.arctan2(z_s, y_off)
    q_abd = np.arctan2(np.sin(q_abd), np.cos(q_abd))  # wrap to (-pi, pi]

    x_s = rel[0]
    d_sq = x_s**2 + z_s**2
    t, c = geom.thigh_len, geom.calf_len
    lo, hi = geom.min_reach, geom.max_reach
    if d_sq > (hi + 1e-9) ** 2 or d_sq < max(lo - 1e-9, 0.0) ** 2:
        raise Unreachable(p, f"planar distance {np.sqrt(d_sq):.4f} outside [{lo:.4f}, {hi:.4f}]")

    cos_knee = (d_sq - t * t - c * c) / (2.0 * t * c)
    q_knee = -np.arccos(np.clip(cos_knee, -1.0, 1.0))
    q_hip = np.arctan2(-x_s, -z_s) - np.arctan2(
        c * np.sin(q_knee), t + c * np.cos(q_knee)
    )
    return np.array([q_abd, q_hip, q_knee])


def inverse_kinematics_all(feet, geom: LegGeometry) -> np.ndarray:
    """IK for all four legs: feet (4, 3) -> joint vector (12,)."""
    feet = np.asarray(feet, dtype=float)
    return np.concatenate([inverse_kinematics(feet[leg], geom, leg) for leg in range(4)])


def standing_pose(geom: LegGeometry, stand_height: float) -> np.ndarray:
    """Joint vector (12,) putting every foot directly below its hip mount."""
    q = []
    for leg in range(4):
        target = geom.hip_mounts[leg] + np.array(
            [0.0, geom.side_signs[leg] * geom.hip_offset, -stand_height]
        )
        q.append(inverse_kinematics(target, geom, leg))
    return np.concatenate(q)
