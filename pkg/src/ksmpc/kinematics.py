"""Switched quadrotor kinematics.

The pose ``(x, y, z, phi, theta, psi)`` evolves as ``pose_dot = R(attitude) v``
where ``R = diag(R_v, R_w)`` maps body velocities to world rates. The switched
model restricts ``v`` to a 13-element alphabet of axis-aligned velocities and
integrates with a forward Euler step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

MODE_COUNT = 13
HOVER = 1
PITCH_EPS = 1e-6

# Standard ZYX rotation, or the matrix with the s/c(theta) substitutions in the
# (1,2), (2,2), (1,3), (2,3) entries. The latter is not orthogonal.
ROTATION_FORMS = ("standard", "printed")


class SingularAttitudeError(ValueError):
    """Pitch too close to +-pi/2 for the Euler-rate map."""


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return a
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose:
    """Position (m) and Euler attitude (rad) of one UAV."""

    x: float
    y: float
    z: float
    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.phi, self.theta, self.psi)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite pose {vals}")
        if not -math.pi / 2 < self.theta < math.pi / 2:
            raise SingularAttitudeError(f"theta={self.theta} outside (-pi/2, pi/2)")
        object.__setattr__(self, "phi", wrap_angle(float(self.phi)))
        object.__setattr__(self, "psi", wrap_angle(float(self.psi)))

    @classmethod
    def from_state(cls, state: Iterable[float]) -> "Pose":
        return cls(*(float(v) for v in state))

    @property
    def state(self) -> tuple[float, float, float, float, float, float]:
        return (self.x, self.y, self.z, self.phi, self.theta, self.psi)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def attitude(self) -> np.ndarray:
        return np.array([self.phi, self.theta, self.psi])


class BodyVelocity(NamedTuple):
    """Body-frame linear (m/s) and angular (rad/s) velocity."""

    v_u: float = 0.0
    v_v: float = 0.0
    v_w: float = 0.0
    w_p: float = 0.0
    w_q: float = 0.0
    w_r: float = 0.0

    @property
    def linear(self) -> tuple[float, float, float]:
        return (self.v_u, self.v_v, self.v_w)

    @property
    def angular(self) -> tuple[float, float, float]:
        return (self.w_p, self.w_q, self.w_r)


@dataclass(frozen=True)
class ModeSet:
    """Speed magnitudes of the switching alphabet."""

    v_bar: float
    w_bar: float
    count: int = MODE_COUNT

    def __post_init__(self):
        if not (self.v_bar > 0 and self.w_bar > 0):
            raise ValueError("v_bar and w_bar must be positive")
        if self.count != MODE_COUNT:
            raise ValueError(f"mode count is fixed at {MODE_COUNT}")


# Modes that keep a level UAV in its horizontal plane: hover, +-u, +-v, +-yaw.
PLANAR_MODES = (1, 2, 3, 7, 8, 9, 13)
ALL_MODES = tuple(range(1, MODE_COUNT + 1))


def _mode_axis(sigma: int) -> tuple[int, float]:
    """Return (axis index 0..5, sign) for a non-hover mode."""
    if sigma <= 7:
        return sigma - 2, 1.0
    return sigma - 8, -1.0


def check_mode(sigma) -> int:
    if isinstance(sigma, bool) or int(sigma) != sigma or not 1 <= sigma <= MODE_COUNT:
        raise ValueError(f"mode {sigma!r} outside 1..{MODE_COUNT}")
    return int(sigma)


def check_sequence(seq: Sequence[int]) -> tuple[int, ...]:
    return tuple(check_mode(s) for s in seq)


def mode_input(sigma: int, modes: ModeSet) -> BodyVelocity:
    """Body velocity commanded by mode ``sigma``."""
    sigma = check_mode(sigma)
    if sigma == HOVER:
        return BodyVelocity()
    axis, sign = _mode_axis(sigma)
    v = [0.0] * 6
    v[axis] = sign * (modes.v_bar if axis < 3 else modes.w_bar)
    return BodyVelocity(*v)


def _check_pitch(theta: float, eps: float) -> None:
    if abs(theta) >= math.pi / 2 - eps:
        raise SingularAttitudeError(
            f"|theta|={abs(theta):.9g} within {eps:g} of pi/2; Euler-rate map is singular"
        )


def rotation_blocks(attitude, form: str = "standard", eps: float = PITCH_EPS):
    """Return ``(R_v, R_w)`` for Euler angles ``(phi, theta, psi)``."""
    phi, theta, psi = (float(a) for a in attitude)
    _check_pitch(theta, eps)
    if form not in ROTATION_FORMS:
        raise ValueError(f"unknown rotation form {form!r}")
    sf, cf = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    sp, cp = math.sin(psi), math.cos(psi)
    if form == "standard":
        rv = [
            [ct * cp, sf * st * cp - cf * sp, cf * st * cp + sf * sp],
            [ct * sp, sf * st * sp + cf * cp, cf * st * sp - sf * cp],
            [-st, sf * ct, cf * ct],
        ]
    else:
        rv = [
            [ct * cp, sf * st * cp - ct * sp, cf * st * cp + st * sp],
            [ct * sp, sf * st * sp + ct * cp, cf * st * sp - st * cp],
            [-st, sf * ct, cf * ct],
        ]
    tt = st / ct
    rw = [
        [1.0, sf * tt, cf * tt],
        [0.0, cf, -sf],
        [0.0, sf / ct, cf / ct],
    ]
    return np.array(rv), np.array(rw)


def body_to_world_map(attitude, form: str = "standard", eps: float = PITCH_EPS) -> np.ndarray:
    """6x6 block-diagonal map from body velocity to pose rates."""
    rv, rw = rotation_blocks(attitude, form, eps)
    out = np.zeros((6, 6))
    out[:3, :3] = rv
    out[3:, 3:] = rw
    return out


def _rate_column(phi: float, theta: float, psi: float, axis: int, form: str):
    """Column ``axis`` of the 6x6 map, as (block, c0, c1, c2).

    ``block`` is 0 for position rates and 1 for attitude rates.
    """
    if axis >= 3:
        sf, cf = math.sin(phi), math.cos(phi)
        ct = math.cos(theta)
        if axis == 3:
            return 1, 1.0, 0.0, 0.0
        if axis == 4:
            return 1, sf * math.tan(theta), cf, sf / ct
        return 1, cf * math.tan(theta), -sf, cf / ct
    st, ct = math.sin(theta), math.cos(theta)
    sp, cp = math.sin(psi), math.cos(psi)
    if axis == 0:
        return 0, ct * cp, ct * sp, -st
    sf, cf = math.sin(phi), math.cos(phi)
    if form == "standard":
        if axis == 1:
            return 0, sf * st * cp - cf * sp, sf * st * sp + cf * cp, sf * ct
        return 0, cf * st * cp + sf * sp, cf * st * sp - sf * cp, cf * ct
    if form != "printed":
        raise ValueError(f"unknown rotation form {form!r}")
    if axis == 1:
        return 0, sf * st * cp - ct * sp, sf * st * sp + ct * cp, sf * ct
    return 0, cf * st * cp + st * sp, cf * st * sp - st * cp, cf * ct


def advance(state, sigma: int, T: float, modes: ModeSet,
            form: str = "standard", eps: float = PITCH_EPS):
    """Forward-Euler step on a raw 6-tuple state; returns a new 6-tuple.

    This is the arithmetic behind :func:`step`; the solver calls it directly to
    avoid building :class:`Pose` objects at every tree node.
    """
    x, y, z, phi, theta, psi = state
    _check_pitch(theta, eps)
    if sigma == HOVER:
        return (x, y, z, phi, theta, psi)
    axis, sign = _mode_axis(sigma)
    block, c0, c1, c2 = _rate_column(phi, theta, psi, axis, form)
    h = T * sign * (modes.v_bar if block == 0 else modes.w_bar)
    if block == 0:
        return (x + h * c0, y + h * c1, z + h * c2, phi, theta, psi)
    return (x, y, z, wrap_angle(phi + h * c0), theta + h * c1, wrap_angle(psi + h * c2))


def step(pose: Pose, sigma: int, T: float, modes: ModeSet,
         form: str = "standard", eps: float = PITCH_EPS) -> Pose:
    """One discrete step ``x_{k+1} = x_k + T R(x_k) u(sigma)``."""
    if not T > 0:
        raise ValueError("sampling time must be positive")
    return Pose.from_state(advance(pose.state, check_mode(sigma), T, modes, form, eps))


def rollout(pose: Pose, seq: Sequence[int], T: float, modes: ModeSet,
            form: str = "standard", eps: float = PITCH_EPS) -> list[Pose]:
    """Apply ``seq`` from ``pose``; returns ``len(seq) + 1`` poses including the start."""
    out = [pose]
    for sigma in check_sequence(seq):
        out.append(step(out[-1], sigma, T, modes, form, eps))
    return out
