"""Resource-element grid, repetition-coded transmit schedule, and RIS
phase-profile schedules.

The joint-estimation subset of the OFDM frame is a comb: subcarriers
N0 = {1 + (n-1) dN} and symbols Q0 = union_i {q + (i-1) dQ, q = 1..Q1}.
Every element of the subset carries the same per-user symbol (repetition
coding), and each RIS replays the same Q1 phase columns in every group.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import Anchor


class GridConfigError(ValueError):
    pass


@dataclass(frozen=True)
class IsacGrid:
    """Comb-patterned resource-element subset and its phase constants."""

    q1: int  # symbols per group, > 1
    groups: int  # number of groups I
    delta_q: int  # symbol spacing between groups
    n_i: int  # number of active subcarriers
    delta_n: int  # subcarrier stride
    subcarrier_spacing: float  # [Hz]
    n_total: int  # subcarriers in the full OFDM symbol
    cp_fraction: float = 0.25  # cyclic prefix length as a fraction of n_total

    def __post_init__(self):
        if self.q1 <= 1:
            raise GridConfigError("q1 must be > 1")
        if self.groups < 1 or self.n_i < 1 or self.delta_n < 1:
            raise GridConfigError("groups, n_i, delta_n must be >= 1")
        if self.groups > 1 and self.delta_q < self.q1:
            raise GridConfigError("delta_q must be >= q1 (groups must not overlap)")
        if self.subcarrier_spacing <= 0 or self.n_total < 1:
            raise GridConfigError("subcarrier_spacing and n_total must be positive")
        if 1 + (self.n_i - 1) * self.delta_n > self.n_total:
            raise GridConfigError("subcarrier comb exceeds n_total")

    @property
    def symbol_period(self) -> float:
        """[s] OFDM symbol duration including cyclic prefix."""
        return (1.0 + self.cp_fraction) / self.subcarrier_spacing

    @property
    def subcarrier_set(self) -> np.ndarray:
        return 1 + np.arange(self.n_i) * self.delta_n

    @property
    def symbol_set(self) -> np.ndarray:
        groups = [1 + np.arange(self.q1) + i * self.delta_q for i in range(self.groups)]
        return np.concatenate(groups)

    @property
    def element_count(self) -> int:
        return self.q1 * self.groups * self.n_i

    @property
    def q_max(self) -> int:
        return self.q1 + (self.groups - 1) * self.delta_q

    # phase constants of the vectorized observation model
    @property
    def zeta_f(self) -> float:
        """[rad/s] per-subcarrier delay phase step, 2 pi df."""
        return 2.0 * np.pi * self.subcarrier_spacing

    @property
    def zeta_f_bar(self) -> float:
        """[rad/s] delay phase step across the subcarrier comb."""
        return self.zeta_f * self.delta_n

    @property
    def zeta_t(self) -> float:
        """[rad s] per-symbol Doppler phase step, 2 pi dt."""
        return 2.0 * np.pi * self.symbol_period

    @property
    def zeta_t_bar(self) -> float:
        """[rad s] Doppler phase step across groups."""
        return self.zeta_t * self.delta_q


def build_grid(q1: int, groups: int, delta_q: int, n_i: int, delta_n: int,
               subcarrier_spacing: float, n_total: int | None = None,
               cp_fraction: float = 0.25) -> IsacGrid:
    if n_total is None:
        n_total = 1 + (n_i - 1) * delta_n
    return IsacGrid(q1=q1, groups=groups, delta_q=delta_q, n_i=n_i, delta_n=delta_n,
                    subcarrier_spacing=subcarrier_spacing, n_total=n_total,
                    cp_fraction=cp_fraction)


@dataclass(frozen=True)
class RisSchedule:
    """Per-RIS unit-modulus phase matrix of shape (M_I, Q1).

    Column q is replayed for every symbol q + (i-1) dQ of the comb, so each
    group sees the identical Q1-column pattern.
    """

    matrices: tuple  # tuple of complex ndarrays, one per RIS

    def __post_init__(self):
        mats = tuple(np.asarray(m, dtype=complex) for m in self.matrices)
        object.__setattr__(self, "matrices", mats)
        for m in mats:
            if not np.allclose(np.abs(m), 1.0, atol=1e-9):
                raise ValueError("RIS schedule entries must be unit modulus")
            q1 = m.shape[1]
            for a in range(q1):
                for b in range(a + 1, q1):
                    if np.allclose(m[:, a], m[:, b], atol=1e-12):
                        raise ValueError("RIS schedule columns must be pairwise distinct")

    @property
    def q1(self) -> int:
        return self.matrices[0].shape[1]

    def angles(self) -> list[np.ndarray]:
        return [np.angle(m) for m in self.matrices]


def schedule_from_angles(angles_per_ris) -> RisSchedule:
    """Build a schedule from per-RIS angle matrices (M_I x Q1, radians)."""
    return RisSchedule(tuple(np.exp(1j * np.asarray(a, dtype=float)) for a in angles_per_ris))


def random_ris_schedule(rng: np.random.Generator, m_i: int, q1: int, n_ris: int = 1) -> RisSchedule:
    """I.i.d. uniform phases on [0, 2 pi)."""
    mats = [np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=(m_i, q1))) for _ in range(n_ris)]
    return RisSchedule(tuple(mats))


def dft_ris_schedule(ris_anchors: list[Anchor], bs_aods: np.ndarray,
                     predicted_aoas: np.ndarray, q1: int, zeta_s: float) -> RisSchedule:
    """DFT-codebook schedule matched to the predicted user directions.

    For each RIS, each user gets floor(Q1 / K) codewords whose spatial
    frequencies are closest to the composite (AOD + user AOA) phase step
    seen towards each BS; collisions fall through to the next-nearest bin
    so that all Q1 columns stay distinct.

    ``bs_aods``: shape (R, G), AOD at RIS r towards BS g.
    ``predicted_aoas``: shape (K, R), predicted user-RIS AOA.
    """
    bs_aods = np.atleast_2d(np.asarray(bs_aods, dtype=float))
    predicted_aoas = np.atleast_2d(np.asarray(predicted_aoas, dtype=float))
    n_ris = len(ris_anchors)
    k_users = predicted_aoas.shape[0]
    per_user = max(q1 // k_users, 1)
    mats = []
    for r, anchor in enumerate(ris_anchors):
        m_i = anchor.element_count
        if q1 > m_i:
            raise GridConfigError("q1 distinct DFT codewords need q1 <= element_count")
        bins = 2.0 * np.pi * np.arange(m_i) / m_i  # codeword spatial frequencies
        chosen: list[int] = []

        def grab(target: float):
            dist = np.abs(np.angle(np.exp(1j * (bins - target))))
            for b in np.argsort(dist):
                if int(b) not in chosen:
                    chosen.append(int(b))
                    return

        g_count = bs_aods.shape[1]
        for k in range(k_users):
            for j in range(per_user):
                if len(chosen) >= q1:
                    break
                g = j % g_count
                target = zeta_s * (np.cos(bs_aods[r, g]) + np.cos(predicted_aoas[k, r]))
                grab(target)
        # leftovers: spread over users/BSs again
        k = 0
        while len(chosen) < q1:
            g = (len(chosen)) % g_count
            target = zeta_s * (np.cos(bs_aods[r, g]) + np.cos(predicted_aoas[k % k_users, r]))
            grab(target + 2.0 * np.pi * len(chosen) / m_i)
            k += 1
        # codeword conjugate-matches the composite steering e^{-j m s}
        cols = [np.exp(1j * bins[b] * np.arange(m_i)) for b in chosen[:q1]]
        mats.append(np.stack(cols, axis=1))
    return RisSchedule(tuple(mats))


@dataclass(frozen=True)
class TransmitSchedule:
    """Per-user transmitted symbol and power for one slot."""

    symbols: np.ndarray  # complex, shape (K,), unit average energy prior
    power: float  # [W] per user per resource element
    prior: str = "gaussian"  # 'gaussian' or 'psk<order>'

    def __post_init__(self):
        object.__setattr__(self, "symbols", np.asarray(self.symbols, dtype=complex))
        if self.power <= 0:
            raise ValueError("power must be positive")


def draw_symbols(rng: np.random.Generator, k_users: int, prior: str = "gaussian") -> np.ndarray:
    """Draw one slot's per-user symbols from the configured prior."""
    if prior == "gaussian":
        return (rng.standard_normal(k_users) + 1j * rng.standard_normal(k_users)) / np.sqrt(2.0)
    if prior.startswith("psk"):
        order = int(prior[3:])
        phases = 2.0 * np.pi * rng.integers(0, order, size=k_users) / order + np.pi / order
        return np.exp(1j * phases)
    raise ValueError(f"unknown symbol prior {prior!r}")


def psk_constellation(order: int) -> np.ndarray:
    return np.exp(1j * (2.0 * np.pi * np.arange(order) / order + np.pi / order))
