"""Vectorized per-BS observation synthesis.

Each BS observes, over the comb subset, the superposition of direct and
RIS-cascaded link contributions

    y_g = sum_k ( w_ub[k,g] * aF(tau) (x) aTbar(nu) (x) aT(nu) (x) aB(theta)
n                 + sum_r w_ui[k,g,r] * aF(tau_cascade) (x) aTbar(nu) (x)
                   aI_beam(psi, aod, aoa, nu) (x) aB(theta_bs) ) + noise.

Kronecker axis order is frequency (x) group (x) intra-group symbol (x)
antenna, left factor slowest; a vectorized block reshapes to
(n_i, groups, q1, m_b) in C order. This is the on-disk layout contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .channel import LinkChannelState, steering
from .protocol import IsacGrid, RisSchedule, TransmitSchedule
from .scenario import Anchor, LinkGeometry, UserState, link_geometry, ris_to_bs_geometry


def delay_steering(tau: float, n_i: int, zeta_f_bar: float) -> np.ndarray:
    """Frequency-axis steering, entry n = exp(-j zeta_f_bar n tau)."""
    if n_i < 1:
        raise ValueError("n_i must be >= 1")
    return np.exp(-1j * zeta_f_bar * tau * np.arange(n_i))


def doppler_steering(nu: float, length: int, zeta: float) -> np.ndarray:
    """Time-axis steering, entry m = exp(-j zeta m nu)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return np.exp(-1j * zeta * nu * np.arange(length))


def ris_beamspace_steering(psi: np.ndarray, aod: float, aoa: float, nu: float,
                           zeta_s: float, zeta_t: float,
                           a_t_approx: bool = False) -> np.ndarray:
    """Beamspace RIS factor (psi^T (aI(aod) o aI(aoa))) o aT(nu), length Q1."""
    psi = np.asarray(psi, dtype=complex)
    m_i, q1 = psi.shape
    composite = steering(aod, m_i, zeta_s).entries * steering(aoa, m_i, zeta_s).entries
    projected = psi.T @ composite
    if a_t_approx:
        return projected
    return projected * doppler_steering(nu, q1, zeta_t)


@dataclass(frozen=True)
class EffectiveSignal:
    """Lumped complex amplitudes sqrt(P) s alpha beta per link of one user."""

    w_ub: complex  # user-BS
    w_ui: np.ndarray  # user-RIS-BS, shape (R,)
    cascade_delay: np.ndarray  # [s] tau_ui + tau_ib per RIS, shape (R,)


@dataclass(frozen=True)
class ReceivedBlock:
    """One BS's vectorized complex observation for one slot."""

    samples: np.ndarray  # complex, shape (n_i * groups * q1 * m_b,)
    noise_var: float  # per-entry complex variance sigma_z^2
    dims: tuple  # (n_i, groups, q1, m_b)

    def as_tensor(self) -> np.ndarray:
        return self.samples.reshape(self.dims)


@dataclass
class SlotChannel:
    """All per-link channel states of one slot.

    ub[(k, g)] and ui[(k, r)] are LinkChannelState (geometry seen from the
    anchor); ib[(g, r)] is (alpha, beta, geometry at BS, geometry at RIS).
    """

    ub: dict
    ui: dict
    ib: dict


def build_slot_channel(users: list[UserState], bs_anchors: list[Anchor],
                       ris_anchors: list[Anchor], wavelength: float,
                       alpha_ub: np.ndarray, alpha_ui: np.ndarray, alpha_ib: np.ndarray,
                       gain_fn) -> SlotChannel:
    """Assemble link states from geometry; ``gain_fn(distance)`` supplies beta."""
    ub, ui, ib = {}, {}, {}
    for k, user in enumerate(users):
        for g, bs in enumerate(bs_anchors):
            geo = link_geometry(user, bs, wavelength)
            ub[(k, g)] = LinkChannelState(int(alpha_ub[k, g]), gain_fn(geo.distance), geo)
        for r, ris in enumerate(ris_anchors):
            geo = link_geometry(user, ris, wavelength)
            ui[(k, r)] = LinkChannelState(int(alpha_ui[k, r]), gain_fn(geo.distance), geo)
    for g, bs in enumerate(bs_anchors):
        for r, ris in enumerate(ris_anchors):
            bs_side, ris_side = ris_to_bs_geometry(ris, bs)
            ib[(g, r)] = (int(alpha_ib[g, r]), gain_fn(bs_side.distance), bs_side, ris_side)
    return SlotChannel(ub=ub, ui=ui, ib=ib)


def effective_signals(chan: SlotChannel, tx: TransmitSchedule, k: int, g: int,
                      n_ris: int, ris_efficiency: float = 1.0) -> EffectiveSignal:
    amp = np.sqrt(tx.power) * tx.symbols[k]
    ub = chan.ub[(k, g)]
    w_ub = amp * ub.blocked * ub.gain
    w_ui = np.zeros(n_ris, dtype=complex)
    cascade = np.zeros(n_ris)
    for r in range(n_ris):
        a_ib, b_ib, bs_side, _ = chan.ib[(g, r)]
        seg = chan.ui[(k, r)]
        w_ui[r] = amp * a_ib * seg.blocked * b_ib * seg.gain * ris_efficiency
        cascade[r] = seg.geometry.delay + bs_side.delay
    return EffectiveSignal(w_ub=complex(w_ub), w_ui=w_ui, cascade_delay=cascade)


def _kron4(a, b, c, d):
    return np.kron(a, np.kron(b, np.kron(c, d)))


def ub_steering_vector(geo: LinkGeometry, grid: IsacGrid, m_b: int, zeta_s: float,
                       a_t_approx: bool = False) -> np.ndarray:
    a_f = delay_steering(geo.delay, grid.n_i, grid.zeta_f_bar)
    a_tbar = doppler_steering(geo.doppler, grid.groups, grid.zeta_t_bar)
    a_t = np.ones(grid.q1, dtype=complex) if a_t_approx else \
        doppler_steering(geo.doppler, grid.q1, grid.zeta_t)
    a_b = steering(geo.aoa, m_b, zeta_s).entries
    return _kron4(a_f, a_tbar, a_t, a_b)


def ui_steering_vector(seg_geo: LinkGeometry, cascade_delay: float, psi: np.ndarray,
                       aod_ris: float, aoa_bs: float, grid: IsacGrid, m_b: int,
                       zeta_s: float, a_t_approx: bool = False) -> np.ndarray:
    a_f = delay_steering(cascade_delay, grid.n_i, grid.zeta_f_bar)
    a_tbar = doppler_steering(seg_geo.doppler, grid.groups, grid.zeta_t_bar)
    a_beam = ris_beamspace_steering(psi, aod_ris, seg_geo.aoa, seg_geo.doppler,
                                    zeta_s, grid.zeta_t, a_t_approx)
    a_b = steering(aoa_bs, m_b, zeta_s).entries
    return _kron4(a_f, a_tbar, a_beam, a_b)


def assemble_observation(chan: SlotChannel, tx: TransmitSchedule, grid: IsacGrid,
                         schedule: RisSchedule, bs_anchors: list[Anchor],
                         n_users: int, n_ris: int, zeta_s: float, sigma_z: float,
                         rng: np.random.Generator | None = None,
                         ris_efficiency: float = 1.0,
                         a_t_approx: bool = False) -> list[ReceivedBlock]:
    """Synthesize one slot's ReceivedBlock for every BS."""
    blocks = []
    for g, bs in enumerate(bs_anchors):
        m_b = bs.element_count
        dim = grid.n_i * grid.groups * grid.q1 * m_b
        y = np.zeros(dim, dtype=complex)
        for k in range(n_users):
            sig = effective_signals(chan, tx, k, g, n_ris, ris_efficiency)
            if sig.w_ub != 0:
                y += sig.w_ub * ub_steering_vector(chan.ub[(k, g)].geometry, grid,
                                                   m_b, zeta_s, a_t_approx)
            for r in range(n_ris):
                if sig.w_ui[r] == 0:
                    continue
                _, _, bs_side, ris_side = chan.ib[(g, r)]
                y += sig.w_ui[r] * ui_steering_vector(
                    chan.ui[(k, r)].geometry, sig.cascade_delay[r],
                    schedule.matrices[r], ris_side.aoa, bs_side.aoa,
                    grid, m_b, zeta_s, a_t_approx)
        if sigma_z > 0:
            if rng is None:
                raise ValueError("noise synthesis requires an rng")
            y += sigma_z / np.sqrt(2.0) * (rng.standard_normal(dim)
                                           + 1j * rng.standard_normal(dim))
        blocks.append(ReceivedBlock(samples=y, noise_var=sigma_z ** 2,
                                    dims=(grid.n_i, grid.groups, grid.q1, m_b)))
    return blocks


def dump_received(block: ReceivedBlock, path) -> None:
    """Debug dump: one JSON header line, then interleaved re/im float64 LE."""
    header = {
        "schema": "received-block v1",
        "dims": list(block.dims),
        "axis_order": ["subcarrier", "group", "intra_group_symbol", "antenna"],
        "noise_var": block.noise_var,
        "dtype": "<f8 interleaved re,im",
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        inter = np.empty(2 * block.samples.size)
        inter[0::2] = block.samples.real
        inter[1::2] = block.samples.imag
        fh.write(inter.astype("<f8").tobytes())


def load_received(path) -> ReceivedBlock:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        inter = np.frombuffer(fh.read(), dtype="<f8")
    samples = inter[0::2] + 1j * inter[1::2]
    return ReceivedBlock(samples=samples, noise_var=header["noise_var"],
                         dims=tuple(header["dims"]))
