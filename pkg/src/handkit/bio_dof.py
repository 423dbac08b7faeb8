"""The biomechanically feasible 23-DoF pose space and its expansion to the
45-value articulation vector.

Each of index/middle/ring/little gets 4 DoF (MCP flexion, MCP abduction, PIP
flexion, DIP flexion); the thumb gets 7 (rotation/abduction/flexion at MCP
and PIP, flexion at DIP).  Expansion is additive in the axis-angle vector:
the per-joint vector is the sum of angle * axis terms, which keeps the map
linear in the 23 angles and guarantees the finger joints never acquire a
twist component.  For large combined angles this differs from composing the
per-axis rotations as matrices; the additive convention is the documented
choice.

Axes are derived from a model's rest pose: the twist axis follows the bone
leaving the joint, the abduction axis is the palm normal projected
perpendicular to it, and the flexion axis completes the right-handed triplet
(twist x abd).  Positive flexion therefore bends the finger toward the palm
normal.  Joint limits are data, not code: defaults below, loadable from a
plain-text config.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kinematics as kin
from .hand_model import HandModel, rest_joints

_FINGER_DOFS = ("mcp_flex", "mcp_abd", "pip_flex", "dip_flex")
_THUMB_DOFS = ("mcp_rot", "mcp_abd", "mcp_flex",
               "pip_rot", "pip_abd", "pip_flex", "dip_flex")

#: (dof name, articulated-joint slot 0..14, axis kind) in 23-vector order
DOF_SPECS: tuple[tuple[str, int, str], ...] = tuple(
    [(f"{finger}_{dof}", 3 * fi + {"mcp": 0, "pip": 1, "dip": 2}[dof.split("_")[0]],
      dof.split("_")[1])
     for finger, fi in (("index", 1), ("middle", 2), ("ring", 3), ("little", 4))
     for dof in _FINGER_DOFS]
    + [(f"thumb_{dof}", 0 + {"mcp": 0, "pip": 1, "dip": 2}[dof.split("_")[0]],
        {"rot": "twist"}.get(dof.split("_")[1], dof.split("_")[1])) for dof in _THUMB_DOFS]
)
DOF_NAMES = tuple(name for name, _, _ in DOF_SPECS)
DOF_COUNT = len(DOF_SPECS)  # 23

_DEFAULT_FINGER_LIMITS = {
    "mcp_flex": (-0.3, 1.6),
    "mcp_abd": (-0.35, 0.35),
    "pip_flex": (0.0, 1.9),
    "dip_flex": (0.0, 1.6),
}
_DEFAULT_THUMB_LIMITS = {
    "mcp_rot": (-0.6, 0.6),
    "mcp_abd": (-0.6, 0.6),
    "mcp_flex": (-0.3, 1.6),
    "pip_rot": (-0.6, 0.6),
    "pip_abd": (-0.6, 0.6),
    "pip_flex": (-0.3, 1.6),
    "dip_flex": (0.0, 1.6),
}


@dataclass
class BioPose:
    """The 23 feasible angles, radians, in DOF_NAMES order."""

    values: np.ndarray = field(default_factory=lambda: np.zeros(DOF_COUNT))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.shape != (DOF_COUNT,):
            raise ValueError(f"BioPose needs {DOF_COUNT} values")
        if not np.isfinite(self.values).all():
            raise ValueError("BioPose values must be finite")

    def __getitem__(self, name: str) -> float:
        return float(self.values[DOF_NAMES.index(name)])

    @classmethod
    def from_dict(cls, angles: dict[str, float]) -> "BioPose":
        values = np.zeros(DOF_COUNT)
        for name, value in angles.items():
            values[DOF_NAMES.index(name)] = value
        return cls(values)


@dataclass
class DofLimits:
    """Per-DoF [min, max] intervals, radians; rest pose is always inside."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if self.lower.shape != (DOF_COUNT,) or self.upper.shape != (DOF_COUNT,):
            raise ValueError(f"limits need {DOF_COUNT} intervals")
        if (self.lower > 0).any() or (self.upper < 0).any():
            raise ValueError("every interval must contain 0 (rest pose feasible)")

    @classmethod
    def default(cls) -> "DofLimits":
        lower = np.zeros(DOF_COUNT)
        upper = np.zeros(DOF_COUNT)
        for i, name in enumerate(DOF_NAMES):
            finger, dof = name.split("_", 1)
            table = _DEFAULT_THUMB_LIMITS if finger == "thumb" else _DEFAULT_FINGER_LIMITS
            lower[i], upper[i] = table[dof]
        return cls(lower, upper)

    def save(self, path) -> None:
        lines = [f"{name} = {format(lo, '.9g')} {format(hi, '.9g')}"
                 for name, lo, hi in zip(DOF_NAMES, self.lower, self.upper)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "DofLimits":
        lower = np.full(DOF_COUNT, np.nan)
        upper = np.full(DOF_COUNT, np.nan)
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            name, _, rest = line.partition("=")
            parts = rest.split()
            name = name.strip()
            if name not in DOF_NAMES or len(parts) != 2:
                raise ValueError(f"bad limits line: {raw!r}")
            i = DOF_NAMES.index(name)
            lower[i], upper[i] = float(parts[0]), float(parts[1])
        if np.isnan(lower).any():
            missing = [DOF_NAMES[i] for i in np.flatnonzero(np.isnan(lower))]
            raise ValueError(f"limits file missing entries: {missing}")
        return cls(lower, upper)


@dataclass
class AxisTable:
    """Orthonormal (flex, abd, twist) triplets per articulated finger joint.

    Rows follow the articulated-joint order (thumb MCP/PIP/DIP, then index,
    middle, ring, little).  Immutable after derivation.
    """

    flex: np.ndarray    # (15, 3)
    abd: np.ndarray     # (15, 3)
    twist: np.ndarray   # (15, 3)

    def __post_init__(self):
        for arr in (self.flex, self.abd, self.twist):
            if np.asarray(arr).shape != (15, 3):
                raise ValueError("axis tables need shape (15, 3)")
        self.flex = np.asarray(self.flex, dtype=float)
        self.abd = np.asarray(self.abd, dtype=float)
        self.twist = np.asarray(self.twist, dtype=float)
        self._expansion = None

    def check_orthonormal(self, tol: float = 1e-9) -> None:
        for a, b in (("flex", "abd"), ("flex", "twist"), ("abd", "twist")):
            dots = np.abs(np.einsum("ic,ic->i", getattr(self, a), getattr(self, b)))
            if dots.max() > tol:
                raise ValueError(f"{a} and {b} axes are not orthogonal")
        for name in ("flex", "abd", "twist"):
            norms = np.linalg.norm(getattr(self, name), axis=1)
            if np.abs(norms - 1.0).max() > tol:
                raise ValueError(f"{name} axes are not unit length")

    def axis(self, slot: int, kind: str) -> np.ndarray:
        return {"flex": self.flex, "abd": self.abd, "twist": self.twist}[kind][slot]

    def expansion_matrix(self) -> np.ndarray:
        """E of shape (45, 23) such that articulation = E @ bio23."""
        if self._expansion is None:
            mat = np.zeros((kin.ARTICULATION_SIZE, DOF_COUNT))
            for col, (_, slot, kind) in enumerate(DOF_SPECS):
                mat[3 * slot:3 * slot + 3, col] = self.axis(slot, kind)
            self._expansion = mat
        return self._expansion


class DegenerateBoneError(ValueError):
    """Raised when a rest-pose bone has (near) zero length."""


def derive_axes(model: HandModel) -> AxisTable:
    """Build the axis table from a model's rest pose.

    Twist follows the bone leaving each joint; the palm normal comes from the
    wrist / index-MCP / little-MCP plane; abd is the palm normal projected
    orthogonal to twist; flex = twist x abd.  Gram-Schmidt keeps the triplets
    orthonormal regardless of model geometry, and unit vectors make the table
    invariant to uniform scaling.
    """
    joints = rest_joints(model).joints
    wrist = joints[0]
    index_mcp = joints[kin.finger_joint(1, 0)]
    little_mcp = joints[kin.finger_joint(4, 0)]
    normal = np.cross(little_mcp - wrist, index_mcp - wrist)
    norm = np.linalg.norm(normal)
    if norm < 1e-9:
        raise DegenerateBoneError("wrist and MCP joints are collinear")
    normal = normal / norm

    flex = np.zeros((15, 3))
    abd = np.zeros((15, 3))
    twist = np.zeros((15, 3))
    for fi in range(5):
        for part in range(3):
            slot = 3 * fi + part
            joint = kin.finger_joint(fi, part)
            bone = joints[joint + 1] - joints[joint]
            length = np.linalg.norm(bone)
            if length < 1e-9:
                raise DegenerateBoneError(
                    f"zero-length bone at {kin.JOINT_NAMES[joint]}")
            t = bone / length
            a = normal - np.dot(normal, t) * t
            a_norm = np.linalg.norm(a)
            if a_norm < 1e-9:
                raise DegenerateBoneError(
                    f"bone at {kin.JOINT_NAMES[joint]} is parallel to the palm normal")
            a = a / a_norm
            twist[slot] = t
            abd[slot] = a
            flex[slot] = np.cross(t, a)
    table = AxisTable(flex=flex, abd=abd, twist=twist)
    table.check_orthonormal(1e-9)
    return table


def expand(bio: BioPose, axes: AxisTable) -> np.ndarray:
    """23 feasible angles -> 45 articulation values (linear; expand(0) = 0)."""
    values = bio.values if isinstance(bio, BioPose) else np.asarray(bio, dtype=float)
    return axes.expansion_matrix() @ values


def expand_batch(bio_values: np.ndarray, axes: AxisTable) -> np.ndarray:
    """Batched expansion: (B, 23) -> (B, 45)."""
    return np.asarray(bio_values, dtype=float) @ axes.expansion_matrix().T


def clamp(bio: BioPose, limits: DofLimits) -> BioPose:
    """Project onto the feasible box (idempotent)."""
    return BioPose(np.clip(bio.values, limits.lower, limits.upper))


def is_feasible(bio: BioPose, limits: DofLimits) -> bool:
    """True iff clamp leaves the pose unchanged."""
    return bool(((bio.values >= limits.lower) & (bio.values <= limits.upper)).all())


def sample_uniform(limits: DofLimits, count: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Uniform feasible draws, shape (count, 23)."""
    return rng.uniform(limits.lower, limits.upper, size=(count, DOF_COUNT))
