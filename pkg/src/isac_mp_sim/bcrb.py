"""Recursive Bayesian information matrix and weighted bound for the
augmented per-slot parameter vector [states of all users; symbols].

Parameter ordering: 4 state entries (px, py, vx, vy) per user, stacked,
followed by 2 real entries (Re s, Im s) per user. The measurement
information sums per-link Fisher blocks (each link treated as an
independent observation of its user), which keeps the bound monotone in
the link set and invariant to per-column RIS phase rotations; the link
amplitude magnitude/phase is held at its true value (the geometric gain
is not differentiated, so the bound does not claim carrier-phase
super-resolution the estimator never attempts).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import steering
from .protocol import IsacGrid, RisSchedule, TransmitSchedule
from .scenario import SPEED_OF_LIGHT, MobilityModel
from .synth import SlotChannel


@dataclass(frozen=True)
class BimMatrix:
    matrix: np.ndarray  # (6K, 6K) real symmetric PSD
    slot_index: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", 0.5 * (m + m.T))


def state_dim(n_users: int) -> int:
    return 6 * n_users


def position_indices(k: int) -> list:
    return [4 * k, 4 * k + 1]


def velocity_indices(k: int) -> list:
    return [4 * k + 2, 4 * k + 3]


def symbol_indices(k: int, n_users: int) -> list:
    return [4 * n_users + 2 * k, 4 * n_users + 2 * k + 1]


def initial_bim(n_users: int, pos_std: float, vel_std: float,
                symbol_prior_var: float = 1.0) -> BimMatrix:
    dim = state_dim(n_users)
    diag = np.zeros(dim)
    for k in range(n_users):
        diag[position_indices(k)] = 1.0 / pos_std ** 2
        diag[velocity_indices(k)] = 1.0 / vel_std ** 2
        diag[symbol_indices(k, n_users)] = 2.0 / symbol_prior_var
    return BimMatrix(np.diag(diag), 0)


def transition_blocks(model: MobilityModel, n_users: int,
                      symbol_prior_var: float = 1.0) -> tuple:
    """Second-derivative blocks of -log p(aug_t | aug_{t-1}).

    Symbols are independent across slots: their prior information sits in
    the (t, t) block only; a circular-Gaussian prior contributes
    2 / sigma_s^2 per real dimension.
    """
    dim = state_dim(n_users)
    q = model.process_noise_cov
    try:
        q_inv = np.linalg.inv(q)
    except np.linalg.LinAlgError:
        q_inv = np.linalg.inv(q + 1e-12 * np.trace(q) / 4 * np.eye(4))
    f = model.transition
    xi11 = np.zeros((dim, dim))
    xi12 = np.zeros((dim, dim))
    xi22 = np.zeros((dim, dim))
    for k in range(n_users):
        sl = slice(4 * k, 4 * k + 4)
        xi11[sl, sl] = f.T @ q_inv @ f
        xi12[sl, sl] = -f.T @ q_inv
        xi22[sl, sl] = q_inv
        si = symbol_indices(k, n_users)
        xi22[np.ix_(si, si)] = 2.0 / symbol_prior_var * np.eye(2)
    return xi11, xi12, xi12.T, xi22


def _kron4(a, b, c, d):
    return np.kron(a, np.kron(b, np.kron(c, d)))


def _ub_axis_vectors(geo, grid: IsacGrid, m_b: int, zeta_s: float):
    """Per-axis vectors and their derivative weights for a direct link."""
    n = np.arange(grid.n_i)
    i = np.arange(grid.groups)
    q = np.arange(grid.q1)
    m = np.arange(m_b)
    a_f = np.exp(-1j * grid.zeta_f_bar * geo.delay * n)
    a_tb = np.exp(-1j * grid.zeta_t_bar * geo.doppler * i)
    a_t = np.exp(-1j * grid.zeta_t * geo.doppler * q)
    a_b = steering(geo.aoa, m_b, zeta_s).entries
    a = _kron4(a_f, a_tb, a_t, a_b)
    da_dtau = _kron4(-1j * grid.zeta_f_bar * n * a_f, a_tb, a_t, a_b)
    da_dnu = _kron4(a_f, -1j * grid.zeta_t_bar * i * a_tb, a_t, a_b) \
        + _kron4(a_f, a_tb, -1j * grid.zeta_t * q * a_t, a_b)
    da_dcos = _kron4(a_f, a_tb, a_t, -1j * zeta_s * m * a_b)
    return a, da_dtau, da_dnu, da_dcos


def _ui_axis_vectors(seg_geo, cascade_delay, psi, aod_ris, aoa_bs,
                     grid: IsacGrid, m_b: int, zeta_s: float):
    n = np.arange(grid.n_i)
    i = np.arange(grid.groups)
    q = np.arange(grid.q1)
    m_el = np.arange(psi.shape[0])
    a_f = np.exp(-1j * grid.zeta_f_bar * cascade_delay * n)
    a_tb = np.exp(-1j * grid.zeta_t_bar * seg_geo.doppler * i)
    carrier = np.exp(-1j * zeta_s * (np.cos(aod_ris) + np.cos(seg_geo.aoa)) * m_el)
    mod = np.exp(-1j * grid.zeta_t * seg_geo.doppler * q)
    beam = (psi.T @ carrier) * mod
    dbeam_dcos = (psi.T @ (-1j * zeta_s * m_el * carrier)) * mod
    dbeam_dnu = beam * (-1j * grid.zeta_t * q)
    a_b = steering(aoa_bs, m_b, zeta_s).entries
    a = _kron4(a_f, a_tb, beam, a_b)
    da_dtau = _kron4(-1j * grid.zeta_f_bar * n * a_f, a_tb, beam, a_b)
    da_dnu = _kron4(a_f, -1j * grid.zeta_t_bar * i * a_tb, beam, a_b) \
        + _kron4(a_f, a_tb, dbeam_dnu, a_b)
    da_dcos = _kron4(a_f, a_tb, dbeam_dcos, a_b)
    return a, da_dtau, da_dnu, da_dcos


def _chain_vectors(pos, vel, anchor_pos, wavelength):
    rel = pos - anchor_pos
    d = float(np.linalg.norm(rel))
    e = rel / d
    cos_a = None  # computed by caller against the anchor axis
    dtau_dp = e / SPEED_OF_LIGHT
    dnu_dp = (vel - float(vel @ e) * e) / (wavelength * d)
    dnu_dv = e / wavelength
    return d, e, dtau_dp, dnu_dp, dnu_dv


def link_jacobian(kind: str, k: int, g: int, r: int, chan: SlotChannel,
                  tx: TransmitSchedule, grid: IsacGrid, schedule: RisSchedule,
                  bs_anchors, ris_anchors, users, zeta_s: float,
                  wavelength: float) -> np.ndarray | None:
    """Complex Jacobian of one link's mean contribution w.r.t. its user's
    6 real parameters [px, py, vx, vy, Re s, Im s]; None when blocked."""
    user = users[k]
    amp = np.sqrt(tx.power) * tx.symbols[k]
    m_b = bs_anchors[g].element_count
    if kind == "ub":
        st = chan.ub[(k, g)]
        if not st.blocked:
            return None
        w = amp * st.gain
        anchor = bs_anchors[g]
        geo = st.geometry
        a, da_dtau, da_dnu, da_dcos = _ub_axis_vectors(geo, grid, m_b, zeta_s)
    else:
        a_ib, b_ib, bs_side, ris_side = chan.ib[(g, r)]
        st = chan.ui[(k, r)]
        if not (st.blocked and a_ib):
            return None
        w = amp * b_ib * st.gain
        anchor = ris_anchors[r]
        geo = st.geometry
        a, da_dtau, da_dnu, da_dcos = _ui_axis_vectors(
            geo, geo.delay + bs_side.delay, schedule.matrices[r],
            ris_side.aoa, bs_side.aoa, grid, m_b, zeta_s)
    d, e, dtau_dp, dnu_dp, dnu_dv = _chain_vectors(user.position, user.velocity,
                                                   anchor.position, wavelength)
    cos_a = float(anchor.array_normal @ e)
    dcos_dp = (anchor.array_normal - cos_a * e) / d
    jac = np.zeros((a.size, 6), dtype=complex)
    jac[:, 0:2] = w * (np.outer(da_dcos, dcos_dp) + np.outer(da_dtau, dtau_dp)
                       + np.outer(da_dnu, dnu_dp))
    jac[:, 2:4] = w * np.outer(da_dnu, dnu_dv)
    per_symbol = w / tx.symbols[k]  # sqrt(P) alpha beta
    jac[:, 4] = per_symbol * a
    jac[:, 5] = 1j * per_symbol * a
    return jac


def measurement_bim(chan: SlotChannel, tx: TransmitSchedule, grid: IsacGrid,
                    schedule: RisSchedule, bs_anchors, ris_anchors, users,
                    zeta_s: float, wavelength: float, sigma_z: float,
                    link_filter=None) -> np.ndarray:
    """Per-link Fisher information of the slot observation, summed.

    ``link_filter(kind, k, g, r)`` optionally restricts the link set (used
    to split the profile-independent and per-RIS parts apart).
    """
    n_users = len(users)
    dim = state_dim(n_users)
    out = np.zeros((dim, dim))
    coef = 2.0 / sigma_z ** 2
    keep = link_filter if link_filter is not None else (lambda *a: True)
    for k in range(n_users):
        idx = position_indices(k) + velocity_indices(k) + symbol_indices(k, n_users)
        for g in range(len(bs_anchors)):
            jacs = []
            if keep("ub", k, g, -1):
                jacs.append(link_jacobian("ub", k, g, -1, chan, tx, grid, schedule,
                                          bs_anchors, ris_anchors, users, zeta_s,
                                          wavelength))
            for r in range(len(ris_anchors)):
                if keep("ui", k, g, r):
                    jacs.append(link_jacobian("ui", k, g, r, chan, tx, grid, schedule,
                                              bs_anchors, ris_anchors, users, zeta_s,
                                              wavelength))
            for jac in jacs:
                if jac is None:
                    continue
                block = coef * np.real(jac.conj().T @ jac)
                out[np.ix_(idx, idx)] += block
    return out


def bim_recursion(prev: BimMatrix, mea: np.ndarray, blocks: tuple) -> BimMatrix:
    """B_t = B_mea + Xi22 - Xi21 (B_{t-1} + Xi11)^{-1} Xi12."""
    xi11, xi12, xi21, xi22 = blocks
    inner = prev.matrix + xi11
    try:
        solved = np.linalg.solve(inner, xi12)
    except np.linalg.LinAlgError:
        solved = np.linalg.pinv(inner) @ xi12
    b = mea + xi22 - xi21 @ solved
    return BimMatrix(0.5 * (b + b.T), prev.slot_index + 1)


def weighted_bcrb(b: BimMatrix, weights: np.ndarray) -> float:
    """Trace{diag(weights) B^{-1}}; +inf when B is singular."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    try:
        inv = np.linalg.inv(b.matrix)
    except np.linalg.LinAlgError:
        return np.inf
    return float(np.sum(w * np.diag(inv)))


def position_bound(b: BimMatrix, k: int, n_users: int) -> float:
    """Position-block trace of B^{-1} for user k [m^2]."""
    inv = np.linalg.inv(b.matrix)
    idx = position_indices(k)
    return float(np.trace(inv[np.ix_(idx, idx)]))
