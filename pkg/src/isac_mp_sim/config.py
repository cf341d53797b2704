"""Run configuration: TOML parsing with strict key validation, plus the
built-in presets.

Keys carry their units (power_dbm, dt_s); unknown keys are configuration
errors so sweep typos fail loudly instead of silently running defaults.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    bs_positions_m: list = field(default_factory=lambda: [[0.0, 0.0], [90.0, 0.0]])
    bs_normals: list = field(default_factory=lambda: [[0.0, 1.0], [0.0, 1.0]])
    bs_elements: int = 4
    ris_positions_m: list = field(default_factory=lambda: [[20.0, 40.0], [60.0, 40.0]])
    ris_normals: list = field(default_factory=lambda: [[1.0, 0.0], [1.0, 0.0]])
    ris_elements: int = 16
    user_positions_m: list = field(default_factory=lambda: [[35.0, -10.0], [55.0, 5.0]])
    user_velocities_mps: list = field(default_factory=lambda: [[8.0, 4.0], [-6.0, 5.0]])
    dt_s: float = 0.02
    process_noise_q: float = 1.0  # [m^2/s^3]
    carrier_hz: float = 28.0e9
    init_pos_std_m: float = 1.0
    init_vel_std_mps: float = 1.0


@dataclass
class ChannelConfig:
    p_block_ub: float = 0.0
    p_block_ui: float = 0.0
    p_block_ib: float = 0.0
    hold_slots: int = 1
    gain_phase: str = "geometric"  # geometric | random | none
    ris_efficiency: float = 1.0
    window_slots: list | None = None  # [first, last] forced availability


@dataclass
class ProtocolConfig:
    q1: int = 4
    groups: int = 4
    delta_q: int = 50
    n_subcarriers: int = 8
    n_active: int = 8
    delta_n: int = 1
    subcarrier_spacing_hz: float = 833.333e3
    cp_fraction: float = 0.25
    power_dbm: float = 30.0
    symbol_prior: str = "gaussian"
    noise_psd_dbm_hz: float = -174.0
    sigma_z_override: float | None = None


@dataclass
class HvmpSection:
    outer_iters: int = 8
    inner_iters: int = 10
    outer_tol_m: float = 1e-4
    newton_max_steps: int = 30
    damping: float = 0.7
    llr_threshold: float = 6.0
    a_t_approx: bool = True
    kappa_min: float = 1e-3


@dataclass
class BcrbConfig:
    enabled: bool = True
    symbol_prior_var: float = 1.0


@dataclass
class RisOptConfig:
    max_iters: int = 15
    eps: float = 1e-4
    fd_step: float = 1e-5
    weights: str = "position"  # position | all


@dataclass
class RunSection:
    seed: int | None = None
    slots: int = 20
    realizations: int = 20
    mode: str = "hvmp"  # hvmp | pilot | position-only
    profile: str = "random"  # random | dft | optimized


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    hvmp: HvmpSection = field(default_factory=HvmpSection)
    bcrb: BcrbConfig = field(default_factory=BcrbConfig)
    risopt: RisOptConfig = field(default_factory=RisOptConfig)

    def validate(self):
        if self.run.seed is None:
            raise ConfigError("run.seed is required")
        if self.run.mode not in ("hvmp", "pilot", "position-only"):
            raise ConfigError(f"unknown mode {self.run.mode!r}")
        if self.run.profile not in ("random", "dft", "optimized"):
            raise ConfigError(f"unknown profile {self.run.profile!r}")
        if self.channel.gain_phase not in ("geometric", "random", "none"):
            raise ConfigError(f"unknown gain_phase {self.channel.gain_phase!r}")
        k = len(self.scenario.user_positions_m)
        if len(self.scenario.user_velocities_mps) != k:
            raise ConfigError("user position/velocity lists must align")
        if self.protocol.n_active > self.protocol.n_subcarriers:
            raise ConfigError("n_active cannot exceed n_subcarriers")
        return self

    # derived quantities -------------------------------------------------
    @property
    def wavelength(self) -> float:
        from .scenario import SPEED_OF_LIGHT
        return SPEED_OF_LIGHT / self.scenario.carrier_hz

    @property
    def zeta_s(self) -> float:
        return np.pi  # half-wavelength element spacing

    @property
    def power_w(self) -> float:
        return 10.0 ** ((self.protocol.power_dbm - 30.0) / 10.0)

    @property
    def sigma_z(self) -> float:
        if self.protocol.sigma_z_override is not None:
            return self.protocol.sigma_z_override
        noise_w = 10.0 ** ((self.protocol.noise_psd_dbm_hz - 30.0) / 10.0) \
            * self.protocol.subcarrier_spacing_hz
        return float(np.sqrt(noise_w))

    @property
    def n_users(self) -> int:
        return len(self.scenario.user_positions_m)


_SECTIONS = {
    "run": RunSection,
    "scenario": ScenarioConfig,
    "channel": ChannelConfig,
    "protocol": ProtocolConfig,
    "hvmp": HvmpSection,
    "bcrb": BcrbConfig,
    "risopt": RisOptConfig,
}


def _apply_section(obj, data: dict, name: str):
    known = {f.name for f in fields(obj)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {name}.{key}")
        setattr(obj, key, value)


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    preset = data.pop("preset", None)
    cfg = preset_config(preset) if preset else RunConfig()
    for section, content in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(content, dict):
            raise ConfigError(f"section [{section}] must be a table")
        _apply_section(getattr(cfg, section), content, section)
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return config_from_dict(data)


def preset_config(name: str) -> RunConfig:
    """Built-in scenarios: 'desk' (scaled down) and 'paper-fig5' (full size)."""
    if name == "desk":
        return RunConfig()
    if name == "paper-fig5":
        cfg = RunConfig()
        cfg.scenario.bs_elements = 6
        cfg.scenario.ris_elements = 48
        cfg.scenario.user_positions_m = [[30.0, -15.0], [45.0, 5.0], [60.0, -20.0]]
        v40 = 40.0 / np.sqrt(2.0)
        v30 = 30.0 / np.sqrt(2.0)
        v15 = 15.0 / np.sqrt(2.0)
        cfg.scenario.user_velocities_mps = [[v40, v40], [-v30, v30], [v15, -v15]]
        cfg.protocol.q1 = 12
        cfg.protocol.groups = 10
        cfg.protocol.delta_q = 200
        cfg.protocol.n_subcarriers = 12
        cfg.protocol.n_active = 12
        cfg.protocol.subcarrier_spacing_hz = 10.0e6 / 12.0
        return cfg
    raise ConfigError(f"unknown preset {name!r}")


def config_to_dict(cfg: RunConfig) -> dict:
    return {name: asdict(getattr(cfg, name)) for name in _SECTIONS}
