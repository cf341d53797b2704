"""Geometric world model: anchor placement, user kinematics, and the
deterministic maps from a user state to per-link AOA / delay / Doppler.

All geometry is 2D. Angles of arrival are measured against an anchor's
array axis (``array_normal``) and live in [0, pi]; the half-plane
ambiguity of a linear array is resolved by scenario construction (users
stay on one side of each array line).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8  # [m/s]


class AnchorKind(Enum):
    BASE_STATION = "bs"
    RIS = "ris"


class SingularGeometryError(ValueError):
    """User and anchor positions coincide; direction is undefined."""


@dataclass(frozen=True)
class Anchor:
    """Static array node (base station or RIS).

    ``array_normal`` is the unit direction against which the AOA is
    measured (the array's directional vector); the element phase step is
    proportional to cos(AOA).
    """

    position: np.ndarray  # [m], shape (2,)
    array_normal: np.ndarray  # unit vector, shape (2,)
    element_count: int
    kind: AnchorKind

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "array_normal", np.asarray(self.array_normal, dtype=float))
        if self.position.shape != (2,) or self.array_normal.shape != (2,):
            raise ValueError("anchor position and array_normal must be 2-vectors")
        if abs(np.linalg.norm(self.array_normal) - 1.0) > 1e-12:
            raise ValueError("array_normal must have unit norm")
        if self.element_count < 1:
            raise ValueError("element_count must be >= 1")


@dataclass(frozen=True)
class UserState:
    """Per-user position and velocity at one tracking slot."""

    position: np.ndarray  # [m], shape (2,)
    velocity: np.ndarray  # [m/s], shape (2,)

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))
        if self.position.shape != (2,) or self.velocity.shape != (2,):
            raise ValueError("position and velocity must be 2-vectors")
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.velocity))):
            raise ValueError("user state must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])


def white_acceleration_cov(dt: float, q: float) -> np.ndarray:
    """Process-noise covariance of the constant-velocity model driven by
    white acceleration with intensity ``q`` [m^2/s^3]."""
    i2 = np.eye(2)
    return q * np.block([
        [dt ** 3 / 3.0 * i2, dt ** 2 / 2.0 * i2],
        [dt ** 2 / 2.0 * i2, dt * i2],
    ])


@dataclass(frozen=True)
class MobilityModel:
    """Discrete constant-velocity dynamics [p; v] -> F0 [p; v] + noise."""

    dt: float  # [s] slot interval
    transition: np.ndarray = field(default=None)  # 4x4
    process_noise_cov: np.ndarray = field(default=None)  # 4x4, symmetric PSD
    q: float = 1.0  # [m^2/s^3] white-acceleration intensity, used when cov not given

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        i2 = np.eye(2)
        f0 = np.block([[i2, self.dt * i2], [np.zeros((2, 2)), i2]])
        if self.transition is None:
            object.__setattr__(self, "transition", f0)
        else:
            t = np.asarray(self.transition, dtype=float)
            if not np.allclose(t, f0, atol=1e-12):
                raise ValueError("transition must be the constant-velocity block form")
            object.__setattr__(self, "transition", t)
        if self.process_noise_cov is None:
            object.__setattr__(self, "process_noise_cov", white_acceleration_cov(self.dt, self.q))
        else:
            cov = np.asarray(self.process_noise_cov, dtype=float)
            if cov.shape != (4, 4) or not np.allclose(cov, cov.T, atol=1e-10):
                raise ValueError("process_noise_cov must be 4x4 symmetric")
            if np.min(np.linalg.eigvalsh(cov)) < -1e-12:
                raise ValueError("process_noise_cov must be PSD")
            object.__setattr__(self, "process_noise_cov", cov)


@dataclass(frozen=True)
class LinkGeometry:
    """Deterministic per-link quantities derived from a user state."""

    aoa: float  # [rad] in [0, pi], against the anchor array axis
    delay: float  # [s]
    doppler: float  # [Hz]
    distance: float  # [m]
    direction: np.ndarray  # unit vector from anchor to the other endpoint


def step_state(state: UserState, model: MobilityModel, noise_sample: np.ndarray) -> UserState:
    """Advance one slot: F0 [p; v] + noise, noise drawn by the caller."""
    noise = np.asarray(noise_sample, dtype=float)
    if noise.shape != (4,) or not np.all(np.isfinite(noise)):
        raise ValueError("noise_sample must be a finite 4-vector")
    nxt = model.transition @ state.as_vector() + noise
    return UserState(position=nxt[:2], velocity=nxt[2:])


def link_geometry(state: UserState, anchor: Anchor, wavelength: float) -> LinkGeometry:
    """AOA / delay / Doppler of the anchor-user link.

    aoa = arccos(axis . e), delay = d / c, doppler = v . e / wavelength,
    with e the unit direction from the anchor to the user.
    """
    diff = state.position - anchor.position
    d = float(np.linalg.norm(diff))
    if d < 1e-9:
        raise SingularGeometryError("user coincides with anchor")
    e = diff / d
    cos_aoa = float(np.clip(anchor.array_normal @ e, -1.0, 1.0))
    return LinkGeometry(
        aoa=float(np.arccos(cos_aoa)),
        delay=d / SPEED_OF_LIGHT,
        doppler=float(state.velocity @ e) / wavelength,
        distance=d,
        direction=e,
    )


def ris_to_bs_geometry(ris: Anchor, bs: Anchor) -> tuple[LinkGeometry, LinkGeometry]:
    """Static RIS-BS link: (geometry at the BS, geometry at the RIS).

    The BS-side record holds the AOA of the RIS direction at the BS array;
    the RIS-side record holds the AOD towards the BS at the RIS array.
    Doppler is exactly zero on both (static endpoints).
    """
    diff = ris.position - bs.position
    d = float(np.linalg.norm(diff))
    if d < 1e-9:
        raise SingularGeometryError("RIS coincides with BS")
    e_bs_to_ris = diff / d
    e_ris_to_bs = -e_bs_to_ris
    tau = d / SPEED_OF_LIGHT
    bs_side = LinkGeometry(
        aoa=float(np.arccos(np.clip(bs.array_normal @ e_bs_to_ris, -1.0, 1.0))),
        delay=tau, doppler=0.0, distance=d, direction=e_bs_to_ris,
    )
    ris_side = LinkGeometry(
        aoa=float(np.arccos(np.clip(ris.array_normal @ e_ris_to_bs, -1.0, 1.0))),
        delay=tau, doppler=0.0, distance=d, direction=e_ris_to_bs,
    )
    return bs_side, ris_side
