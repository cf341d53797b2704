"""Experiment orchestration: seeded end-to-end runs, baseline modes,
metrics, and CSV output.

Each realization re-draws trajectory process noise, blockage, receiver
noise, symbols, and the initial prior error from named substreams of the
master seed, so one (config, seed) pair determines every output byte.
Wall-clock timings go to a separate file to keep metrics.csv bit-stable.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bcrb as bcrb_mod
from . import risopt
from .beliefs import GaussianBelief
from .channel import BlockageProcess, BlockageSampler, complex_gain
from .config import RunConfig
from .hvmp import EstimatorModel, HvmpConfig, SlotPriors, run_slot
from .hvmp.engine import predict_next
from .protocol import TransmitSchedule, build_grid, dft_ris_schedule, draw_symbols, random_ris_schedule
from .scenario import (
    Anchor, AnchorKind, MobilityModel, UserState, link_geometry, step_state,
)
from .synth import assemble_observation, build_slot_channel

SCHEMA_COMMENT = "# isac-mp-sim schema v1"
METRIC_COLUMNS = ["realization", "slot", "user", "position_rmse_m",
                  "velocity_rmse_mps", "symbol_mse", "bcrb_position_m",
                  "active_link_accuracy"]

_STREAMS = ("trajectory", "blockage", "noise", "symbols", "init", "schedule", "gains")


@dataclass
class MetricsRow:
    realization: int
    slot: int
    user: int
    position_rmse_m: float
    velocity_rmse_mps: float
    symbol_mse: float
    bcrb_position_m: float
    active_link_accuracy: float
    wall_clock_ms: float = 0.0
    diverged: bool = False


@dataclass
class ExperimentResult:
    rows: list
    diverged_realizations: int
    realizations: int
    trace_rows: list = field(default_factory=list)

    def summary(self) -> list:
        """Per-user aggregates: RMS errors, means, and bound columns."""
        users = sorted({r.user for r in self.rows})
        out = []
        for u in users + ["all"]:
            rows = [r for r in self.rows if u == "all" or r.user == u]
            pos2 = np.array([r.position_rmse_m ** 2 for r in rows])
            vel2 = np.array([r.velocity_rmse_mps ** 2 for r in rows])
            sym = np.array([r.symbol_mse for r in rows])
            bound2 = np.array([r.bcrb_position_m ** 2 for r in rows])
            acc = np.array([r.active_link_accuracy for r in rows])
            out.append({
                "user": u,
                "position_rmse_m": float(np.sqrt(pos2.mean())),
                "position_mean_err_m": float(np.mean(np.sqrt(pos2))),
                "velocity_rmse_mps": float(np.sqrt(vel2.mean())),
                "symbol_mse": float(sym.mean()),
                "bcrb_position_m": float(np.sqrt(bound2.mean())),
                "active_link_accuracy": float(acc.mean()),
            })
        return out


class _Scene:
    """Static objects shared by all realizations of one config."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        sc = cfg.scenario
        self.bss = [Anchor(np.array(p), np.array(n), sc.bs_elements,
                           AnchorKind.BASE_STATION)
                    for p, n in zip(sc.bs_positions_m, sc.bs_normals)]
        self.riss = [Anchor(np.array(p), np.array(n), sc.ris_elements, AnchorKind.RIS)
                     for p, n in zip(sc.ris_positions_m, sc.ris_normals)]
        pr = cfg.protocol
        self.grid = build_grid(q1=pr.q1, groups=pr.groups, delta_q=pr.delta_q,
                               n_i=pr.n_active, delta_n=pr.delta_n,
                               subcarrier_spacing=pr.subcarrier_spacing_hz,
                               n_total=pr.n_subcarriers, cp_fraction=pr.cp_fraction)
        self.mobility = MobilityModel(dt=sc.dt_s, q=sc.process_noise_q)
        self.model = EstimatorModel(
            bs_anchors=self.bss, ris_anchors=self.riss, grid=self.grid,
            wavelength=cfg.wavelength, zeta_s=cfg.zeta_s, power=cfg.power_w,
            sigma_z=cfg.sigma_z, mobility=self.mobility,
            gain_phase_mode=cfg.channel.gain_phase,
            ris_efficiency=cfg.channel.ris_efficiency,
            symbol_prior=cfg.protocol.symbol_prior)
        self.hvmp_cfg = HvmpConfig(
            outer_iters=cfg.hvmp.outer_iters, inner_iters=cfg.hvmp.inner_iters,
            outer_tol_m=cfg.hvmp.outer_tol_m, newton_max_steps=cfg.hvmp.newton_max_steps,
            damping=cfg.hvmp.damping, llr_threshold=cfg.hvmp.llr_threshold,
            a_t_approx=cfg.hvmp.a_t_approx, kappa_min=cfg.hvmp.kappa_min,
            pilot=cfg.run.mode == "pilot",
            position_only=cfg.run.mode == "position-only")
        self.k_users = cfg.n_users
        self.n_bs = len(self.bss)
        self.n_ris = len(self.riss)


def _alpha_arrays(sampler: BlockageSampler, scene: _Scene, slot: int):
    k, g_n, r_n = scene.k_users, scene.n_bs, scene.n_ris
    a_ub = np.array([[sampler.alpha("ub", (k_, g), slot) for g in range(g_n)]
                     for k_ in range(k)])
    a_ui = np.array([[sampler.alpha("ui", (k_, r), slot) for r in range(r_n)]
                     for k_ in range(k)])
    a_ib = np.array([[sampler.alpha("ib", (g, r), slot) for r in range(r_n)]
                     for g in range(g_n)])
    return a_ub, a_ui, a_ib


def _column_truth(scene: _Scene, a_ub, a_ui, a_ib):
    """Per-BS true activity of every estimator column."""
    out = []
    for g in range(scene.n_bs):
        cols = []
        for k in range(scene.k_users):
            cols.append(int(a_ub[k, g]))
            for r in range(scene.n_ris):
                cols.append(int(a_ib[g, r] * a_ui[k, r]))
        out.append(np.array(cols))
    return out


def _predicted_aoas(priors: SlotPriors, scene: _Scene):
    aoas = np.zeros((scene.k_users, scene.n_ris))
    for k in range(scene.k_users):
        state = UserState(priors.pos[k].mean, priors.vel[k].mean)
        for r, ris in enumerate(scene.riss):
            aoas[k, r] = link_geometry(state, ris, scene.cfg.wavelength).aoa
    return aoas


def _build_schedule(scene: _Scene, priors: SlotPriors, rng_sched,
                    planning: dict | None):
    cfg = scene.cfg
    mode = cfg.run.profile
    if mode == "random":
        return random_ris_schedule(rng_sched, cfg.scenario.ris_elements,
                                   scene.grid.q1, scene.n_ris)
    bs_aods = np.array([[scene_geometry_aod(scene, g, r) for g in range(scene.n_bs)]
                        for r in range(scene.n_ris)])
    dft = dft_ris_schedule(scene.riss, bs_aods, _predicted_aoas(priors, scene),
                           scene.grid.q1, cfg.zeta_s)
    if mode == "dft":
        return dft
    # optimized: descend the weighted bound from the matched codebook,
    # linearized at the predicted trajectory with the last known link set
    ctx = _planning_context(scene, priors, planning)
    weights = _bound_weights(scene)
    init = risopt.PhaseProfile([np.angle(m) for m in dft.matrices])
    prof, _ = risopt.optimize(init, ctx, weights, eps=cfg.risopt.eps,
                              max_iters=cfg.risopt.max_iters,
                              fd_step=cfg.risopt.fd_step)
    planning["bim"] = bcrb_mod.bim_recursion(
        planning["bim"],
        ctx.ub_information() + ctx.ui_information(prof.matrices()),
        planning["blocks"])
    return risopt._RawSchedule(prof.matrices())


def scene_geometry_aod(scene: _Scene, g: int, r: int) -> float:
    from .scenario import ris_to_bs_geometry
    _, ris_side = ris_to_bs_geometry(scene.riss[r], scene.bss[g])
    return ris_side.aoa


def _bound_weights(scene: _Scene) -> np.ndarray:
    k = scene.k_users
    w = np.zeros(bcrb_mod.state_dim(k))
    if scene.cfg.risopt.weights == "all":
        w[:] = 1.0
    else:
        for k_ in range(k):
            w[bcrb_mod.position_indices(k_)] = 1.0
    return w


def _planning_context(scene: _Scene, priors: SlotPriors, planning: dict):
    cfg = scene.cfg
    users = [UserState(priors.pos[k].mean, priors.vel[k].mean)
             for k in range(scene.k_users)]
    a_ub, a_ui, a_ib = planning["alphas"]
    chan = build_slot_channel(users, scene.bss, scene.riss, cfg.wavelength,
                              a_ub, a_ui, a_ib,
                              lambda d: complex_gain(d, cfg.wavelength, "none"))
    tx = TransmitSchedule(symbols=np.ones(scene.k_users, complex), power=cfg.power_w)
    return risopt.BoundContext(
        chan=chan, tx=tx, grid=scene.grid, bs_anchors=scene.bss,
        ris_anchors=scene.riss, users=users, zeta_s=cfg.zeta_s,
        wavelength=cfg.wavelength, sigma_z=cfg.sigma_z,
        prev_bim=planning["bim"], blocks=planning["blocks"])


def run_realization(cfg: RunConfig, scene: _Scene, idx: int,
                    seed_seq: np.random.SeedSequence, collect_trace=False):
    streams = {name: np.random.default_rng(child)
               for name, child in zip(_STREAMS, seed_seq.spawn(len(_STREAMS)))}
    sc = cfg.scenario
    k_users = scene.k_users
    # trajectory over all slots
    states = [[UserState(np.array(p), np.array(v))
               for p, v in zip(sc.user_positions_m, sc.user_velocities_mps)]]
    chol = np.linalg.cholesky(scene.mobility.process_noise_cov
                              + 1e-18 * np.eye(4))
    for _ in range(cfg.run.slots - 1):
        nxt = [step_state(s, scene.mobility, chol @ streams["trajectory"].standard_normal(4))
               for s in states[-1]]
        states.append(nxt)
    # initial prior: truth plus a draw from the configured uncertainty
    priors = SlotPriors(
        pos=[GaussianBelief(states[0][k].position
                            + sc.init_pos_std_m * streams["init"].standard_normal(2),
                            sc.init_pos_std_m ** 2 * np.eye(2)) for k in range(k_users)],
        vel=[GaussianBelief(states[0][k].velocity
                            + sc.init_vel_std_mps * streams["init"].standard_normal(2),
                            sc.init_vel_std_mps ** 2 * np.eye(2)) for k in range(k_users)],
    )
    sampler = BlockageSampler(
        BlockageProcess(p_block_ub=cfg.channel.p_block_ub,
                        p_block_ui=cfg.channel.p_block_ui,
                        p_block_ib=cfg.channel.p_block_ib,
                        hold_slots=cfg.channel.hold_slots,
                        window=tuple(cfg.channel.window_slots)
                        if cfg.channel.window_slots else None),
        seed_seq.spawn(1)[0])
    bim = bcrb_mod.initial_bim(k_users, sc.init_pos_std_m, sc.init_vel_std_mps,
                               cfg.bcrb.symbol_prior_var)
    blocks = bcrb_mod.transition_blocks(scene.mobility, k_users,
                                        cfg.bcrb.symbol_prior_var)
    planning = {"bim": bim, "blocks": blocks,
                "alphas": (np.ones((k_users, scene.n_bs)),
                           np.ones((k_users, scene.n_ris)),
                           np.ones((scene.n_bs, scene.n_ris)))}

    def gain_fn(d):
        return complex_gain(d, cfg.wavelength, cfg.channel.gain_phase,
                            streams["gains"])

    rows = []
    trace_rows = []
    diverged = False
    for t in range(1, cfg.run.slots + 1):
        start = time.perf_counter()
        users_t = states[t - 1]
        a_ub, a_ui, a_ib = _alpha_arrays(sampler, scene, t)
        chan = build_slot_channel(users_t, scene.bss, scene.riss, cfg.wavelength,
                                  a_ub, a_ui, a_ib, gain_fn)
        symbols = draw_symbols(streams["symbols"], k_users, cfg.protocol.symbol_prior)
        tx = TransmitSchedule(symbols=symbols, power=cfg.power_w,
                              prior=cfg.protocol.symbol_prior)
        schedule = _build_schedule(scene, priors, streams["schedule"], planning)
        obs = assemble_observation(chan, tx, scene.grid, schedule, scene.bss,
                                   k_users, scene.n_ris, cfg.zeta_s, cfg.sigma_z,
                                   streams["noise"])
        est = run_slot(scene.model, obs, priors, scene.hvmp_cfg, schedule,
                       pilot_symbols=symbols if scene.hvmp_cfg.pilot else None)
        if cfg.bcrb.enabled:
            mea = bcrb_mod.measurement_bim(chan, tx, scene.grid, schedule,
                                           scene.bss, scene.riss, users_t,
                                           cfg.zeta_s, cfg.wavelength, cfg.sigma_z)
            bim = bcrb_mod.bim_recursion(bim, mea, blocks)
        wall_ms = (time.perf_counter() - start) * 1e3
        truth_cols = _column_truth(scene, a_ub, a_ui, a_ib)
        for k in range(k_users):
            matches, total = 0, 0
            for g in range(scene.n_bs):
                base = k * (1 + scene.n_ris)
                est_cols = est.alpha[g][base:base + 1 + scene.n_ris]
                true_cols = truth_cols[g][base:base + 1 + scene.n_ris]
                matches += int(np.sum(est_cols == true_cols))
                total += est_cols.size
            rows.append(MetricsRow(
                realization=idx, slot=t, user=k,
                position_rmse_m=float(np.linalg.norm(est.positions[k]
                                                     - users_t[k].position)),
                velocity_rmse_mps=float(np.linalg.norm(est.velocities[k]
                                                       - users_t[k].velocity)),
                symbol_mse=float(np.abs(est.symbols[k] - symbols[k]) ** 2),
                bcrb_position_m=float(np.sqrt(bcrb_mod.position_bound(bim, k, k_users)))
                if cfg.bcrb.enabled else 0.0,
                active_link_accuracy=matches / total,
                wall_clock_ms=wall_ms, diverged=est.diverged))
        if collect_trace:
            for row in est.trace:
                for k in range(k_users):
                    err = float(np.linalg.norm(row["positions"][k]
                                               - users_t[k].position))
                    trace_rows.append({"realization": idx, "slot": t,
                                       "outer": row["outer"], "user": k,
                                       "position_error_m": err,
                                       "update_norm_m": row["update_norm"],
                                       "active_links": row["active_links"],
                                       "elbo": row.get("elbo", float("nan"))})
        diverged = diverged or est.diverged
        # the planner only ever sees estimated link activity
        est_ub = np.array([[est.alpha[g][k * (1 + scene.n_ris)]
                            for g in range(scene.n_bs)] for k in range(k_users)])
        est_ui = np.zeros((k_users, scene.n_ris))
        for k in range(k_users):
            for r in range(scene.n_ris):
                est_ui[k, r] = max(est.alpha[g][k * (1 + scene.n_ris) + 1 + r]
                                   for g in range(scene.n_bs))
        planning["alphas"] = (est_ub, est_ui,
                              np.ones((scene.n_bs, scene.n_ris)))
        priors = predict_next(est, priors, scene.model, scene.hvmp_cfg)
    return rows, diverged, trace_rows


def run_experiment(cfg: RunConfig, collect_trace: bool = False) -> ExperimentResult:
    cfg.validate()
    scene = _Scene(cfg)
    root = np.random.SeedSequence(cfg.run.seed)
    children = root.spawn(cfg.run.realizations)
    all_rows = []
    all_trace = []
    diverged_count = 0
    for idx, child in enumerate(children):
        rows, diverged, trace_rows = run_realization(cfg, scene, idx, child,
                                                     collect_trace)
        all_rows.extend(rows)
        all_trace.extend(trace_rows)
        if diverged:
            diverged_count += 1
    return ExperimentResult(rows=all_rows, diverged_realizations=diverged_count,
                            realizations=cfg.run.realizations, trace_rows=all_trace)


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".12g")
    return str(x)


def write_metrics(result: ExperimentResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        fh.write(SCHEMA_COMMENT + "\n")
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS + ["diverged"])
        for r in result.rows:
            writer.writerow([_fmt(v) for v in
                             [r.realization, r.slot, r.user, r.position_rmse_m,
                              r.velocity_rmse_mps, r.symbol_mse, r.bcrb_position_m,
                              r.active_link_accuracy, int(r.diverged)]])
    with open(out / "summary.csv", "w", newline="") as fh:
        fh.write(SCHEMA_COMMENT + "\n")
        writer = csv.writer(fh)
        cols = ["user", "position_rmse_m", "position_mean_err_m",
                "velocity_rmse_mps", "symbol_mse", "bcrb_position_m",
                "active_link_accuracy"]
        writer.writerow(cols)
        for row in result.summary():
            writer.writerow([_fmt(row[c]) for c in cols])
    # timings are non-deterministic by nature: keep them out of metrics.csv
    with open(out / "timing.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["realization", "slot", "user", "wall_clock_ms"])
        for r in result.rows:
            writer.writerow([r.realization, r.slot, r.user, f"{r.wall_clock_ms:.3f}"])
    if result.trace_rows:
        with open(out / "trace.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            cols = ["realization", "slot", "outer", "user", "position_error_m",
                    "update_norm_m", "active_links", "elbo"]
            writer.writerow(cols)
            for row in result.trace_rows:
                writer.writerow([_fmt(row[c]) for c in cols])
