"""Per-slot estimation engine: outer bidirectional message passing around
the inner variational loop, link detection, symbol fusion, and the forward
prediction to the next slot.

Circular-variable conventions (v is the per-index phase step of the
corresponding Kronecker axis):

    v_theta = -zeta_s cos(aoa)          antenna / RIS-element axis
    v_tau   = -zeta_f_bar tau_segment   subcarrier axis (cascade offsets are
                                        folded into known per-BS axis offsets)
    v_nu    = -zeta_t_bar nu            group axis
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..beliefs import (
    ComplexGaussianBelief, GaussianBelief, VonMisesBelief, complex_gaussian_fuse,
    gaussian_fuse, wrap_angle,
)
from ..channel import steering
from ..protocol import IsacGrid, RisSchedule, psk_constellation
from ..scenario import SPEED_OF_LIGHT, Anchor, MobilityModel
from ..synth import ReceivedBlock
from . import vmp
from .messages import (
    DopplerEvidence, doppler_prediction_message, forward_predict,
    per_link_position_message, position_fusion, velocity_fusion,
)

log = logging.getLogger(__name__)

VARS = vmp.VARS


@dataclass
class HvmpConfig:
    outer_iters: int = 8
    inner_iters: int = 10
    outer_tol_m: float = 1e-4
    newton_max_steps: int = 30  # velocity Gauss-Newton iterations
    damping: float = 0.7  # blend factor for new extrinsic natural parameters
    llr_threshold: float = 6.0  # [nats]
    a_t_approx: bool = True  # treat the intra-group Doppler factor as flat
    kappa_min: float = 1e-3
    pilot: bool = False  # symbols revealed; detection bypassed
    position_only: bool = False  # Doppler edges disconnected from velocity
    track_elbo: bool = False

    def __post_init__(self):
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must be in (0, 1]")
        if self.pilot and self.position_only:
            raise ValueError("pilot and position_only modes are mutually exclusive")


@dataclass
class EstimatorModel:
    """Static knowledge shared by all slots."""

    bs_anchors: list
    ris_anchors: list
    grid: IsacGrid
    wavelength: float
    zeta_s: float
    power: float  # [W]
    sigma_z: float
    mobility: MobilityModel
    gain_phase_mode: str = "geometric"
    ris_efficiency: float = 1.0
    symbol_prior: str = "gaussian"

    @property
    def n_users_cols(self):
        return 1 + len(self.ris_anchors)

    def ub_links(self, n_users):
        return [("ub", k, g) for k in range(n_users) for g in range(len(self.bs_anchors))]

    def ui_links(self, n_users):
        return [("ui", k, r) for k in range(n_users) for r in range(len(self.ris_anchors))]


@dataclass
class SlotPriors:
    pos: list  # per user GaussianBelief (2D)
    vel: list  # per user GaussianBelief (2D)
    prev_pos_post: list | None = None  # previous posterior, for differencing


@dataclass
class SlotEstimates:
    positions: np.ndarray  # (K, 2)
    velocities: np.ndarray  # (K, 2)
    symbols: np.ndarray  # (K,)
    pos_post: list
    vel_post: list
    symbol_post: list
    alpha: list  # per BS int arrays over columns
    vm_post: dict
    converged: bool
    diverged: bool
    n_outer: int
    trace: list = field(default_factory=list)


def _link_anchor(model: EstimatorModel, link) -> Anchor:
    kind, _, idx = link
    return model.bs_anchors[idx] if kind == "ub" else model.ris_anchors[idx]


class SlotEngine:
    """One tracking slot of the estimator."""

    def __init__(self, model: EstimatorModel, observations: list, priors: SlotPriors,
                 schedule: RisSchedule, cfg: HvmpConfig):
        self.model = model
        self.cfg = cfg
        self.priors = priors
        self.n_users = len(priors.pos)
        self.n_bs = len(model.bs_anchors)
        self.n_ris = len(model.ris_anchors)
        self.grid = model.grid
        self.schedule = schedule
        self.obs = [b.samples if isinstance(b, ReceivedBlock) else np.asarray(b)
                    for b in observations]
        self.sigma2 = model.sigma_z ** 2
        self.links = model.ub_links(self.n_users) + model.ui_links(self.n_users)
        self._build_ris_geometry()
        self._build_columns()
        self.doppler_coeff = self.grid.zeta_t_bar / model.wavelength

    # -- static structure -------------------------------------------------
    def _build_ris_geometry(self):
        from ..scenario import ris_to_bs_geometry
        self.ib = {}
        for g, bs in enumerate(self.model.bs_anchors):
            for r, ris in enumerate(self.model.ris_anchors):
                self.ib[(g, r)] = ris_to_bs_geometry(ris, bs)

    def _build_columns(self):
        grid, zs = self.grid, self.model.zeta_s

        def ctr(length):
            return (length - 1) // 2

        self.columns = []
        for g, bs in enumerate(self.model.bs_anchors):
            cols = []
            for k in range(self.n_users):
                intragroup = (vmp.AxisSpec("fixed", grid.q1, fixed=np.ones(grid.q1, complex))
                              if self.cfg.a_t_approx else
                              vmp.AxisSpec("harm", grid.q1, var="nu",
                                           mult=1.0 / grid.delta_q, center=ctr(grid.q1)))
                cols.append(vmp.ColumnModel(axes=[
                    vmp.AxisSpec("harm", grid.n_i, var="tau", center=ctr(grid.n_i)),
                    vmp.AxisSpec("harm", grid.groups, var="nu", center=ctr(grid.groups)),
                    intragroup,
                    vmp.AxisSpec("harm", bs.element_count, var="theta",
                                 center=ctr(bs.element_count)),
                ], link=("ub", k, g)))
                for r in range(self.n_ris):
                    bs_side, ris_side = self.ib[(g, r)]
                    cascade_off = -grid.zeta_f_bar * bs_side.delay
                    beam_off = -zs * np.cos(ris_side.aoa)
                    m_i = self.schedule.matrices[r].shape[0]
                    beam_kwargs = {} if self.cfg.a_t_approx else \
                        {"mod_var": "nu", "mod_mult": 1.0 / grid.delta_q,
                         "mod_center": ctr(grid.q1)}
                    cols.append(vmp.ColumnModel(axes=[
                        vmp.AxisSpec("harm", grid.n_i, var="tau", offset=cascade_off,
                                     center=ctr(grid.n_i)),
                        vmp.AxisSpec("harm", grid.groups, var="nu", center=ctr(grid.groups)),
                        vmp.AxisSpec("beam", grid.q1, var="theta", offset=beam_off,
                                     psi=self.schedule.matrices[r], center=ctr(m_i),
                                     **beam_kwargs),
                        vmp.AxisSpec("fixed", bs.element_count,
                                     fixed=steering(bs_side.aoa, bs.element_count, zs).entries),
                    ], link=("ui", k, r)))
            self.columns.append(cols)

    # -- conversions -------------------------------------------------------
    def v_theta(self, cos_aoa: float) -> float:
        return float(wrap_angle(-self.model.zeta_s * cos_aoa))

    def v_tau(self, distance: float) -> float:
        return float(wrap_angle(-self.grid.zeta_f_bar * distance / SPEED_OF_LIGHT))

    def v_nu(self, doppler: float) -> float:
        return float(wrap_angle(-self.grid.zeta_t_bar * doppler))

    # -- predictions -------------------------------------------------------
    def geometry_prediction(self, pos_belief: GaussianBelief, anchor: Anchor) -> dict:
        """Von Mises predictions on (v_theta, v_tau) from a position belief."""
        rel = pos_belief.mean - anchor.position
        d = float(np.linalg.norm(rel))
        if d < 1e-9 or not pos_belief.is_proper():
            return {"theta": VonMisesBelief.uniform(), "tau": VonMisesBelief.uniform()}
        e = rel / d
        cos_a = float(np.clip(anchor.array_normal @ e, -1.0, 1.0))
        jac_cos = (anchor.array_normal - cos_a * e) / d
        var_cos = float(jac_cos @ pos_belief.cov @ jac_cos)
        var_d = float(e @ pos_belief.cov @ e)
        zs, zf = self.model.zeta_s, self.grid.zeta_f_bar
        theta_vm = (VonMisesBelief(self.v_theta(cos_a), 1.0 / (zs ** 2 * var_cos))
                    if var_cos > 0 else VonMisesBelief(self.v_theta(cos_a), 0.0))
        var_vtau = zf ** 2 * var_d / SPEED_OF_LIGHT ** 2
        tau_vm = (VonMisesBelief(self.v_tau(d), 1.0 / var_vtau)
                  if var_vtau > 0 else VonMisesBelief(self.v_tau(d), 0.0))
        return {"theta": theta_vm, "tau": tau_vm}

    def _per_link_pos_predictions(self, k: int, pos_msgs: dict) -> dict:
        """Leave-one-out fused position prediction per link of user k."""
        out = {}
        user_links = [ln for ln in self.links if ln[1] == k]
        for link in user_links:
            parts = [self.priors.pos[k]]
            parts += [pos_msgs[ln] for ln in user_links
                      if ln != link and pos_msgs.get(ln) is not None]
            out[link] = gaussian_fuse(parts)
        return out

    def _directions(self, k: int, pos_msgs: dict, pred_pos: dict) -> dict:
        """Unit anchor-to-user direction per link, from the freshest belief."""
        dirs = {}
        for link in (ln for ln in self.links if ln[1] == k):
            anchor = _link_anchor(self.model, link)
            src = pos_msgs.get(link)
            mean = src.mean if src is not None else pred_pos[link].mean
            rel = mean - anchor.position
            d = np.linalg.norm(rel)
            dirs[link] = rel / d if d > 1e-9 else np.array([1.0, 0.0])
        return dirs

    def build_predictions(self, pos_msgs: dict, nu_evidence: dict) -> tuple[dict, dict, dict]:
        """All per-link VM predictions for one outer iteration."""
        predictions, pred_pos_all, dirs_all = {}, {}, {}
        for k in range(self.n_users):
            pred_pos = self._per_link_pos_predictions(k, pos_msgs)
            dirs = self._directions(k, pos_msgs, pred_pos)
            pred_pos_all.update(pred_pos)
            dirs_all.update(dirs)
            user_links = [ln for ln in self.links if ln[1] == k]
            for link in user_links:
                anchor = _link_anchor(self.model, link)
                geo = self.geometry_prediction(pred_pos[link], anchor)
                predictions[(link, "theta")] = geo["theta"]
                predictions[(link, "tau")] = geo["tau"]
                # leave-one-out velocity refinement, then project on the link
                others = [nu_evidence[ln] for ln in user_links
                          if ln != link and nu_evidence.get(ln) is not None]
                vel = velocity_fusion(others, self.priors.vel[k],
                                      max_steps=self.cfg.newton_max_steps,
                                      kappa_min=self.cfg.kappa_min)
                predictions[(link, "nu")] = doppler_prediction_message(
                    vel, dirs[link], self.doppler_coeff)
        return predictions, pred_pos_all, dirs_all

    # -- amplitude priors ---------------------------------------------------
    def beta_breve(self) -> list:
        """Per-column prior precision of w from nominal predicted gains."""
        lam, p = self.model.wavelength, self.model.power
        out = []
        for g in range(self.n_bs):
            vals = []
            for cm in self.columns[g]:
                kind, k, idx = cm.link
                d_user = np.linalg.norm(self.priors.pos[k].mean
                                        - _link_anchor(self.model, cm.link).position)
                d_user = max(d_user, 1.0)
                beta = lam / (4 * np.pi * d_user)
                if kind == "ui":
                    bs_side, _ = self.ib[(g, idx)]
                    beta *= lam / (4 * np.pi * bs_side.distance) * self.model.ris_efficiency
                vals.append(1.0 / (p * beta ** 2))
            out.append(np.array(vals))
        return out

    # -- estimator gain model (symbol fusion) -------------------------------
    def _gain_estimate(self, link, g: int, pos_mean: np.ndarray) -> complex:
        lam = self.model.wavelength
        kind, _, idx = link
        anchor = _link_anchor(self.model, link)
        d_user = max(float(np.linalg.norm(pos_mean - anchor.position)), 1e-3)
        mag = lam / (4 * np.pi * d_user)
        total_d = d_user
        if kind == "ui":
            bs_side, _ = self.ib[(g, idx)]
            mag *= lam / (4 * np.pi * bs_side.distance) * self.model.ris_efficiency
            total_d += bs_side.distance
        if self.model.gain_phase_mode == "geometric":
            return mag * np.exp(-2j * np.pi * total_d / lam)
        return complex(mag)  # unknown phase: estimates are up to a rotation

    def symbol_fusion(self, k: int, state: vmp.VmpState, problem: vmp.VmpProblem,
                      pos_mean: np.ndarray) -> ComplexGaussianBelief:
        p = self.model.power
        parts = []
        for g in range(self.n_bs):
            for c, cm in enumerate(self.columns[g]):
                if cm.link[1] != k or state.alpha[g][c] == 0:
                    continue
                beta = self._gain_estimate(cm.link, g, pos_mean)
                denom = np.sqrt(p) * beta
                # undo the centroid phase folded into the amplitude estimate
                vhat = {v: state.vm[(cm.link, v)].mean_direction for v in VARS}
                w_phys = state.w_hat[g][c] * np.exp(-1j * cm.absorbed_phase(vhat))
                var = state.w_cov[g][c, c].real / (p * abs(beta) ** 2)
                parts.append(ComplexGaussianBelief(w_phys / denom, max(var, 1e-300)))
        prior = ComplexGaussianBelief(0.0, 1.0)
        if not parts:
            return prior
        fused = complex_gaussian_fuse(parts)
        if self.model.symbol_prior == "gaussian":
            return complex_gaussian_fuse([fused, prior])
        # discrete prior: exact posterior over the constellation
        const = psk_constellation(int(self.model.symbol_prior[3:]))
        logw = -np.abs(const - fused.mean) ** 2 / fused.var
        logw -= logw.max()
        wts = np.exp(logw)
        wts /= wts.sum()
        mean = complex(np.sum(wts * const))
        var = float(np.sum(wts * np.abs(const - mean) ** 2)) + 1e-12
        return ComplexGaussianBelief(mean, var)

    # -- main loop -----------------------------------------------------------
    def run(self, pilot_symbols: np.ndarray | None = None) -> SlotEstimates:
        cfg = self.cfg
        problem = vmp.VmpProblem(obs=self.obs, sigma2=self.sigma2, columns=self.columns,
                                 beta_breve=self.beta_breve(),
                                 llr_threshold=cfg.llr_threshold)
        pos_msgs = {link: None for link in self.links}
        nu_evidence = {link: None for link in self.links}
        extrinsics = {(link, v): VonMisesBelief.uniform()
                      for link in self.links for v in VARS}
        predictions, pred_pos, dirs = self.build_predictions(pos_msgs, nu_evidence)
        state = vmp.VmpState(
            vm={(link, v): predictions[(link, v)] for link in self.links for v in VARS},
            w_hat=[np.zeros(len(self.columns[g]), complex) for g in range(self.n_bs)],
            w_cov=[np.zeros((len(self.columns[g]),) * 2, complex) for g in range(self.n_bs)],
            alpha=[np.ones(len(self.columns[g]), int) for g in range(self.n_bs)],
        )
        pos_post = list(self.priors.pos)
        vel_post = list(self.priors.vel)
        prev_pos = np.array([b.mean for b in pos_post])
        update_norms = []
        trace = []
        converged = diverged = False
        n_outer = 0
        for j in range(1, cfg.outer_iters + 1):
            n_outer = j
            if j > 1:
                predictions, pred_pos, dirs = self.build_predictions(pos_msgs, nu_evidence)
            vmp.vmp_inner(problem, predictions, state, cfg.inner_iters,
                          kappa_floor=cfg.kappa_min)
            # extrinsic circular messages (damped in natural parameters)
            for link in self.links:
                active = any(state.alpha[g][c] for g, c in problem.link_cols[link])
                for v in VARS:
                    if not active:
                        extrinsics[(link, v)] = VonMisesBelief.uniform()
                        state.vm[(link, v)] = predictions[(link, v)]
                        continue
                    fresh = state.vm[(link, v)].natural - predictions[(link, v)].natural
                    blended = cfg.damping * fresh \
                        + (1.0 - cfg.damping) * extrinsics[(link, v)].natural
                    extrinsics[(link, v)] = VonMisesBelief.from_natural(blended)
            # per-link position evidence and fusion
            for link in self.links:
                msg = per_link_position_message(
                    extrinsics[(link, "theta")], extrinsics[(link, "tau")],
                    _link_anchor(self.model, link), pred_pos[link],
                    self.model.zeta_s, self.grid.zeta_f_bar, cfg.kappa_min)
                pos_msgs[link] = msg
                ext_nu = extrinsics[(link, "nu")]
                nu_evidence[link] = DopplerEvidence(
                    direction=dirs[link], mu=ext_nu.mean_direction,
                    kappa=ext_nu.concentration, coeff=self.doppler_coeff) \
                    if ext_nu.is_informative(cfg.kappa_min) else None
            new_pos_post, new_vel_post = [], []
            for k in range(self.n_users):
                user_links = [ln for ln in self.links if ln[1] == k]
                msgs = [pos_msgs[ln] for ln in user_links if pos_msgs[ln] is not None]
                new_pos_post.append(position_fusion(msgs, self.priors.pos[k]))
                if cfg.position_only:
                    new_vel_post.append(self.priors.vel[k])
                else:
                    evid = [nu_evidence[ln] for ln in user_links
                            if nu_evidence[ln] is not None]
                    new_vel_post.append(velocity_fusion(
                        evid, self.priors.vel[k], max_steps=cfg.newton_max_steps,
                        kappa_min=cfg.kappa_min))
            pos_post, vel_post = new_pos_post, new_vel_post
            cur = np.array([b.mean for b in pos_post])
            delta = float(np.max(np.linalg.norm(cur - prev_pos, axis=1)))
            update_norms.append(delta)
            prev_pos = cur
            active_count = int(sum(int(a.sum()) for a in state.alpha))
            row = {"outer": j, "update_norm": delta, "active_links": active_count,
                   "positions": cur.copy()}
            if cfg.track_elbo:
                row["elbo"] = vmp.evidence_bound(problem, state, predictions)
            trace.append(row)
            if delta < cfg.outer_tol_m:
                converged = True
                break
            if len(update_norms) >= 4 and update_norms[-1] > 10.0 * update_norms[-4] \
                    and update_norms[-1] > update_norms[-2] > update_norms[-3]:
                log.warning("slot diverged after %d outer iterations", j)
                diverged = True
                pos_post = list(self.priors.pos)
                vel_post = list(self.priors.vel)
                break
        # symbols
        symbol_post = []
        for k in range(self.n_users):
            if cfg.pilot:
                if pilot_symbols is None:
                    raise ValueError("pilot mode needs the true symbols")
                symbol_post.append(ComplexGaussianBelief(complex(pilot_symbols[k]), 1e-30))
            else:
                symbol_post.append(self.symbol_fusion(k, state, problem, pos_post[k].mean))
        return SlotEstimates(
            positions=np.array([b.mean for b in pos_post]),
            velocities=np.array([b.mean for b in vel_post]),
            symbols=np.array([b.mean for b in symbol_post]),
            pos_post=pos_post, vel_post=vel_post, symbol_post=symbol_post,
            alpha=[a.copy() for a in state.alpha],
            vm_post=dict(state.vm), converged=converged, diverged=diverged,
            n_outer=n_outer, trace=trace)


def run_slot(model: EstimatorModel, observations: list, priors: SlotPriors,
             cfg: HvmpConfig, schedule: RisSchedule,
             pilot_symbols: np.ndarray | None = None) -> SlotEstimates:
    for b in priors.pos + priors.vel:
        if not b.is_proper():
            raise ValueError("slot priors must be proper")
    return SlotEngine(model, observations, priors, schedule, cfg).run(pilot_symbols)


def predict_next(estimates: SlotEstimates, priors: SlotPriors, model: EstimatorModel,
                 cfg: HvmpConfig) -> SlotPriors:
    """Forward messages to slot t+1."""
    q = model.mobility.process_noise_cov
    dt = model.mobility.dt
    pos_priors, vel_priors = [], []
    for k in range(len(estimates.pos_post)):
        pos_b = estimates.pos_post[k]
        vel_b = estimates.vel_post[k]
        if cfg.position_only and priors.prev_pos_post is not None:
            prev = priors.prev_pos_post[k]
            diff_mean = (pos_b.mean - prev.mean) / dt
            diff_cov = (pos_b.cov + prev.cov) / dt ** 2
            vel_b = GaussianBelief(diff_mean, diff_cov)
        pos_prior, vel_prior = forward_predict(pos_b, vel_b, q, dt)
        pos_priors.append(pos_prior)
        vel_priors.append(vel_prior)
    return SlotPriors(pos=pos_priors, vel=vel_priors,
                      prev_pos_post=list(estimates.pos_post))
