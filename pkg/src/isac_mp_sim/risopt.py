"""Gradient-based RIS phase-profile optimization.

Minimizes the weighted recursive bound of `bcrb` over the per-element
phase angles of every RIS column, with forward-difference gradients and
Armijo backtracking. The direct-link part of the measurement information
does not depend on the profile and is computed once per context.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .bcrb import BimMatrix, bim_recursion, measurement_bim, weighted_bcrb
from .protocol import IsacGrid, TransmitSchedule
from .synth import SlotChannel


@dataclass
class PhaseProfile:
    """Unconstrained per-RIS angle matrices (M_I x Q1, radians)."""

    angles: list  # one (M_I, Q1) float array per RIS

    def __post_init__(self):
        self.angles = [np.array(a, dtype=float) for a in self.angles]

    def matrices(self) -> list:
        return [np.exp(1j * a) for a in self.angles]

    def copy(self) -> "PhaseProfile":
        return PhaseProfile([a.copy() for a in self.angles])


class _RawSchedule:
    """Schedule shim without the distinctness validation (the optimizer may
    pass through degenerate profiles)."""

    def __init__(self, matrices):
        self.matrices = list(matrices)


@dataclass
class BoundContext:
    """Everything needed to evaluate the slot bound for a candidate profile."""

    chan: SlotChannel
    tx: TransmitSchedule
    grid: IsacGrid
    bs_anchors: list
    ris_anchors: list
    users: list
    zeta_s: float
    wavelength: float
    sigma_z: float
    prev_bim: BimMatrix
    blocks: tuple
    _ub_part: np.ndarray = field(default=None, repr=False)

    def ub_information(self) -> np.ndarray:
        if self._ub_part is None:
            self._ub_part = measurement_bim(
                self.chan, self.tx, self.grid, _RawSchedule([]), self.bs_anchors,
                self.ris_anchors, self.users, self.zeta_s, self.wavelength,
                self.sigma_z, link_filter=lambda kind, *a: kind == "ub")
        return self._ub_part

    def ui_information_r(self, r: int, matrices) -> np.ndarray:
        """Information carried by the links through RIS r alone."""
        return measurement_bim(
            self.chan, self.tx, self.grid, _RawSchedule(matrices), self.bs_anchors,
            self.ris_anchors, self.users, self.zeta_s, self.wavelength, self.sigma_z,
            link_filter=lambda kind, k, g, rr: kind == "ui" and rr == r)

    def ui_information(self, matrices) -> np.ndarray:
        out = np.zeros_like(self.ub_information())
        for r in range(len(self.ris_anchors)):
            out += self.ui_information_r(r, matrices)
        return out

    def bound_from_parts(self, parts, weights) -> float:
        mea = sum(parts)
        bim = bim_recursion(self.prev_bim, mea, self.blocks)
        return weighted_bcrb(bim, weights)

    def bound(self, matrices, weights) -> float:
        parts = [self.ub_information()] + \
            [self.ui_information_r(r, matrices) for r in range(len(self.ris_anchors))]
        return self.bound_from_parts(parts, weights)


def objective(profile: PhaseProfile, ctx: BoundContext, weights: np.ndarray) -> float:
    """Weighted bound induced by the profile at the context's slot."""
    return ctx.bound(profile.matrices(), weights)


def gradient(profile: PhaseProfile, ctx: BoundContext, weights: np.ndarray,
             h: float = 1e-5) -> list:
    """Central-difference gradient, one matrix per RIS.

    Central rather than forward differences: the objective is flat along
    the per-column phase null direction, and first-order truncation would
    leak curvature into it.
    """
    mats = profile.matrices()
    base_parts = [ctx.ub_information()] + \
        [ctx.ui_information_r(r, mats) for r in range(len(ctx.ris_anchors))]
    grads = []
    for r, ang in enumerate(profile.angles):
        g = np.zeros_like(ang)
        for m in range(ang.shape[0]):
            for q in range(ang.shape[1]):
                vals = []
                for sign in (1.0, -1.0):
                    pert = ang.copy()
                    pert[m, q] += sign * h
                    mats_p = list(mats)
                    mats_p[r] = np.exp(1j * pert)
                    parts = list(base_parts)
                    parts[1 + r] = ctx.ui_information_r(r, mats_p)
                    vals.append(ctx.bound_from_parts(parts, weights))
                g[m, q] = (vals[0] - vals[1]) / (2.0 * h)
        grads.append(g)
    return grads


@dataclass
class OptimizerReport:
    iterations: int
    objective_trajectory: list
    final_gradient_norm: float
    step_sizes: list
    stalled: bool = False


def armijo_descent(value_fn, grad_fn, x0: list, c1: float = 1e-4,
                   shrink: float = 0.5, max_backtracks: int = 30,
                   eps: float = 1e-4, max_iters: int = 100) -> tuple:
    """Backtracked gradient descent over a list of angle arrays.

    Stops when the accepted move sum_r ||alpha grad_r|| drops below eps,
    when no backtracked step satisfies the Armijo condition (stalled), or
    at max_iters.
    """
    x = [np.array(a, dtype=float) for a in x0]
    f0 = value_fn(x)
    trajectory = [f0]
    steps = []
    stalled = False
    step0 = None
    grads = grad_fn(x)
    for _ in range(max_iters):
        gnorm2 = sum(float(np.sum(g ** 2)) for g in grads)
        gmax = max((float(np.max(np.abs(g))) for g in grads), default=0.0)
        if gmax == 0.0:
            break
        alpha = step0 if step0 is not None else 0.1 / gmax
        accepted = False
        for _ in range(max_backtracks):
            candidate = [a - alpha * g for a, g in zip(x, grads)]
            f_new = value_fn(candidate)
            if f_new <= f0 - c1 * alpha * gnorm2:
                accepted = True
                break
            alpha *= shrink
        if not accepted:
            stalled = True
            break
        decrease = f0 - f_new
        x, f0 = candidate, f_new
        trajectory.append(f0)
        steps.append(alpha)
        step0 = alpha * 2.0  # warm-start the next search
        move = sum(float(np.linalg.norm(alpha * g)) for g in grads)
        if move < eps or decrease <= 1e-12 * max(abs(f0), 1.0):
            break
        grads = grad_fn(x)
    gnorm = np.sqrt(sum(float(np.sum(g ** 2)) for g in grads))
    report = OptimizerReport(iterations=len(steps), objective_trajectory=trajectory,
                             final_gradient_norm=gnorm, step_sizes=steps,
                             stalled=stalled)
    return x, report


def optimize(init: PhaseProfile, ctx: BoundContext, weights: np.ndarray,
             c1: float = 1e-4, shrink: float = 0.5, max_backtracks: int = 30,
             eps: float = 1e-4, max_iters: int = 100,
             fd_step: float = 1e-5) -> tuple:
    """Armijo-backtracked descent of the weighted bound over the angles."""
    angles, report = armijo_descent(
        lambda x: objective(PhaseProfile(x), ctx, weights),
        lambda x: gradient(PhaseProfile(x), ctx, weights, fd_step),
        init.angles, c1=c1, shrink=shrink, max_backtracks=max_backtracks,
        eps=eps, max_iters=max_iters)
    return PhaseProfile(angles), report


def save_profile(profile: PhaseProfile, paths: list) -> None:
    """One CSV per RIS: rows are elements, columns are the Q1 patterns."""
    for ang, path in zip(profile.angles, paths):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in ang:
                writer.writerow([f"{x:.17g}" for x in row])


def load_profile(paths: list) -> PhaseProfile:
    angles = []
    for path in paths:
        with open(path, newline="") as fh:
            rows = [[float(x) for x in row] for row in csv.reader(fh) if row]
        angles.append(np.array(rows))
    return PhaseProfile(angles)
