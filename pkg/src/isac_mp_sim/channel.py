"""Per-link complex channel responses under the binary LOS blockage model:
ULA steering vectors, geometric path gains, and Bernoulli blockage sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import LinkGeometry


@dataclass(frozen=True)
class SteeringVector:
    entries: np.ndarray  # complex, shape (M,), unit modulus, entries[0] == 1
    phase_step: float  # [rad] zeta_s * cos(theta)


def steering(theta: float, count: int, zeta_s: float) -> SteeringVector:
    """ULA steering vector, entry m = exp(-j * zeta_s * m * cos(theta))."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not np.isfinite(theta) or not np.isfinite(zeta_s):
        raise ValueError("theta and zeta_s must be finite")
    step = zeta_s * np.cos(theta)
    m = np.arange(count)
    return SteeringVector(entries=np.exp(-1j * step * m), phase_step=float(step))


def path_gain(d: float, wavelength: float) -> float:
    """Free-space LOS amplitude gain wavelength / (4 pi d)."""
    if d <= 0:
        raise ValueError("distance must be positive")
    return wavelength / (4.0 * np.pi * d)


def complex_gain(d: float, wavelength: float, phase_mode: str = "geometric",
                 rng: np.random.Generator | None = None) -> complex:
    """Complex LOS gain: magnitude wavelength/(4 pi d), phase per mode.

    phase_mode 'geometric' uses the carrier phase of the geometric path,
    exp(-j 2 pi d / wavelength); 'random' draws the phase uniformly;
    'none' keeps the real positive path-loss amplitude.
    """
    mag = path_gain(d, wavelength)
    if phase_mode == "geometric":
        phase = -2.0 * np.pi * d / wavelength
    elif phase_mode == "random":
        if rng is None:
            raise ValueError("phase_mode 'random' requires an rng")
        phase = rng.uniform(0.0, 2.0 * np.pi)
    elif phase_mode == "none":
        return complex(mag)
    else:
        raise ValueError(f"unknown phase_mode {phase_mode!r}")
    return mag * np.exp(1j * phase)


@dataclass(frozen=True)
class LinkChannelState:
    """Blockage indicator and complex gain attached to one link's geometry."""

    blocked: int  # alpha in {0, 1}; 0 means the link contributes nothing
    gain: complex  # beta
    geometry: LinkGeometry


@dataclass(frozen=True)
class BlockageProcess:
    """Bernoulli LOS availability, held piecewise constant over slots.

    ``window`` optionally forces a deterministic schedule for user-BS links:
    outside [window[0], window[1]] (1-based slot indices, inclusive) they are
    blocked, inside they are available, reproducing windowed-availability
    experiments. User-RIS and RIS-BS links are unaffected by the window.
    """

    p_block_ub: float = 0.0
    p_block_ui: float = 0.0
    p_block_ib: float = 0.0
    hold_slots: int = 1
    window: tuple[int, int] | None = None

    def __post_init__(self):
        for p in (self.p_block_ub, self.p_block_ui, self.p_block_ib):
            if not 0.0 <= p <= 1.0:
                raise ValueError("blockage probabilities must be in [0, 1]")
        if self.hold_slots < 1:
            raise ValueError("hold_slots must be >= 1")


class BlockageSampler:
    """Draws per-link alpha sequences for one realization.

    One RNG stream per link (keyed by kind and indices) keeps draws
    reproducible regardless of the order links are queried in.
    """

    def __init__(self, process: BlockageProcess, seed_seq: np.random.SeedSequence):
        self.process = process
        self._root = seed_seq
        self._rngs: dict[tuple, np.random.Generator] = {}
        self._drawn: dict[tuple, list[int]] = {}

    _KIND_CODE = {"ub": 1, "ui": 2, "ib": 3}

    def _link_rng(self, key: tuple) -> np.random.Generator:
        if key not in self._rngs:
            # stable per-link substream; plain arithmetic (no str hashing,
            # which is salted per process and would break determinism)
            kind, *ids = key
            branch = self._KIND_CODE[kind]
            for i in ids:
                branch = branch * 1024 + int(i) + 1
            child = np.random.SeedSequence(
                entropy=self._root.entropy,
                spawn_key=self._root.spawn_key + (branch % (2 ** 31),),
            )
            self._rngs[key] = np.random.default_rng(child)
        return self._rngs[key]

    def alpha(self, link_kind: str, link_id: tuple, slot: int) -> int:
        """LOS indicator for one link at a 1-based slot index."""
        proc = self.process
        if link_kind == "ub" and proc.window is not None:
            lo, hi = proc.window
            return 1 if lo <= slot <= hi else 0
        p_block = {"ub": proc.p_block_ub, "ui": proc.p_block_ui, "ib": proc.p_block_ib}[link_kind]
        if p_block == 0.0:
            return 1
        if p_block == 1.0:
            return 0
        key = (link_kind,) + tuple(link_id)
        epoch = (slot - 1) // proc.hold_slots
        vals = self._drawn.setdefault(key, [])
        rng = self._link_rng(key)
        while len(vals) <= epoch:
            vals.append(1 if rng.random() >= p_block else 0)
        return vals[epoch]


def sample_blockage(process: BlockageProcess, rng: np.random.Generator, n_links: int) -> np.ndarray:
    """One-shot Bernoulli(1 - p_block) draw for ``n_links`` user-BS links."""
    return (rng.random(n_links) >= process.p_block_ub).astype(int)
