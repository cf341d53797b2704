"""Message computations around the kinematic state variables.

Doppler evidence reaches the velocity through the circular variable
x = -zeta * nu with nu = v . e / lambda, so each link contributes a term
kappa * cos((zeta / lambda) v . e + mu) to the velocity log-evidence; the
fused velocity is found by a safeguarded Newton ascent and Laplace-matched
to a Gaussian. Angle/delay evidence converts to a per-link 2D position
Gaussian through the polar map around the anchor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..beliefs import (
    KAPPA_MIN, DiffuseBeliefError, GaussianBelief, VonMisesBelief, gaussian_fuse,
    vm_to_gaussian, wrap_angle,
)
from ..scenario import SPEED_OF_LIGHT, Anchor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DopplerEvidence:
    """One link's circular Doppler message pulled back to velocity space."""

    direction: np.ndarray  # unit vector anchor -> user, shape (2,)
    mu: float  # [rad] circular mean of the message on x = -zeta nu
    kappa: float
    coeff: float  # [s/m] zeta / lambda


def f1_value(v: np.ndarray, evidence: list[DopplerEvidence]) -> float:
    total = 0.0
    for ev in evidence:
        total += ev.kappa * np.cos(ev.coeff * float(ev.direction @ v) + ev.mu)
    return total


def f1_gradient(v: np.ndarray, evidence: list[DopplerEvidence]) -> np.ndarray:
    g = np.zeros(2)
    for ev in evidence:
        arg = ev.coeff * float(ev.direction @ v) + ev.mu
        g -= ev.kappa * ev.coeff * np.sin(arg) * ev.direction
    return g


def f1_hessian(v: np.ndarray, evidence: list[DopplerEvidence]) -> np.ndarray:
    h = np.zeros((2, 2))
    for ev in evidence:
        arg = ev.coeff * float(ev.direction @ v) + ev.mu
        h -= ev.kappa * ev.coeff ** 2 * np.cos(arg) * np.outer(ev.direction, ev.direction)
    return h


def velocity_fusion(evidence: list[DopplerEvidence], prior: GaussianBelief,
                    max_steps: int = 30, kappa_min: float = KAPPA_MIN) -> GaussianBelief:
    """Posterior velocity: maximize Doppler log-evidence plus log-prior.

    Returns the prior untouched when no informative Doppler message exists
    or when the curvature at the solution is not usable.
    """
    live = [ev for ev in evidence if ev.kappa > kappa_min]
    if not live or not prior.is_proper():
        return prior
    prec0 = np.linalg.inv(prior.cov)
    m0 = prior.mean

    def objective(v):
        d = v - m0
        return f1_value(v, live) - 0.5 * d @ prec0 @ d

    v = m0.copy()
    fv = objective(v)
    for _ in range(max_steps):
        grad = f1_gradient(v, live) - prec0 @ (v - m0)
        hess = f1_hessian(v, live) - prec0
        step = None
        w = np.linalg.eigvalsh(hess)
        if np.max(w) < -1e-300:
            step = -np.linalg.solve(hess, grad)
        if step is None:
            # indefinite curvature: damped gradient ascent
            step = grad / max(np.max(np.abs(np.diag(prec0))), 1.0)
        scale = 1.0
        for _ in range(20):
            cand = v + scale * step
            fc = objective(cand)
            if fc >= fv:
                v, fv = cand, fc
                break
            scale *= 0.5
        else:
            break
        if np.linalg.norm(scale * step) < 1e-12 * (1.0 + np.linalg.norm(v)):
            break
    curv = prec0 - f1_hessian(v, live)
    w = np.linalg.eigvalsh(curv)
    if np.min(w) <= 0:
        log.warning("velocity fusion: indefinite curvature at solution, keeping prior")
        return prior
    cov = np.linalg.inv(curv)
    return GaussianBelief(v, 0.5 * (cov + cov.T))


def doppler_prediction_message(vel_belief: GaussianBelief, direction: np.ndarray,
                               coeff: float) -> VonMisesBelief:
    """Project a velocity Gaussian onto one link: VM on x = -zeta nu.

    mu = -coeff * mean . e, kappa = 1 / (coeff^2 e^T Q e).
    """
    if not vel_belief.is_proper():
        return VonMisesBelief.uniform()
    mu = wrap_angle(-coeff * float(direction @ vel_belief.mean))
    var = coeff ** 2 * float(direction @ vel_belief.cov @ direction)
    if var <= 0 or not np.isfinite(var):
        return VonMisesBelief.uniform()
    return VonMisesBelief(float(mu), 1.0 / var)


def position_fusion(messages: list[GaussianBelief], prior: GaussianBelief | None = None
                    ) -> GaussianBelief:
    """Precision-weighted combination of per-link position evidence.

    The forward prior enters only when supplied (it travels on its own edge).
    Returns diffuse when every message is diffuse.
    """
    parts = list(messages)
    if prior is not None:
        parts.append(prior)
    if not parts:
        return GaussianBelief.diffuse(2)
    return gaussian_fuse(parts)


def _rotate(vec: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([c * vec[0] - s * vec[1], s * vec[0] + c * vec[1]])


def per_link_position_message(theta_vm: VonMisesBelief, tau_vm: VonMisesBelief,
                              anchor: Anchor, reference: GaussianBelief,
                              zeta_s: float, zeta_f_bar: float,
                              kappa_min: float = KAPPA_MIN) -> GaussianBelief | None:
    """Convert circular (angle, delay) evidence into a 2D position Gaussian.

    The circular variables are x_theta = -zeta_s cos(aoa) and
    x_tau = -zeta_f_bar tau; branch and half-plane ambiguities resolve
    against the reference belief. Returns None when the evidence is too
    diffuse or implies a nonpositive range.
    """
    if not (theta_vm.is_informative(kappa_min) and tau_vm.is_informative(kappa_min)):
        return None
    ref_pos = reference.mean
    rel = ref_pos - anchor.position
    d_ref = float(np.linalg.norm(rel))
    if d_ref < 1e-9:
        return None
    try:
        g_tau = vm_to_gaussian(tau_vm, scale=-zeta_f_bar, reference=d_ref / SPEED_OF_LIGHT,
                               kappa_min=kappa_min)
    except DiffuseBeliefError:
        return None
    d_hat = float(g_tau.mean[0]) * SPEED_OF_LIGHT
    if d_hat <= 0:
        return None
    var_d = float(g_tau.cov[0, 0]) * SPEED_OF_LIGHT ** 2
    # cos(aoa) branch: with half-wavelength spacing the map is one-to-one
    cos_ref = float(np.clip(anchor.array_normal @ (rel / d_ref), -1.0, 1.0))
    try:
        g_cos = vm_to_gaussian(theta_vm, scale=-zeta_s, reference=cos_ref,
                               kappa_min=kappa_min)
    except DiffuseBeliefError:
        return None
    cos_hat = float(np.clip(g_cos.mean[0], -1.0, 1.0))
    var_cos = float(g_cos.cov[0, 0])
    theta_hat = float(np.arccos(cos_hat))
    sin2 = max(1.0 - cos_hat ** 2, 1e-6)
    var_theta = var_cos / sin2
    # half-plane choice: the candidate nearer the reference direction
    u_plus = _rotate(anchor.array_normal, theta_hat)
    u_minus = _rotate(anchor.array_normal, -theta_hat)
    u = u_plus if float(u_plus @ rel) >= float(u_minus @ rel) else u_minus
    u_perp = np.array([-u[1], u[0]])
    mean = anchor.position + d_hat * u
    cov = var_d * np.outer(u, u) + d_hat ** 2 * var_theta * np.outer(u_perp, u_perp)
    return GaussianBelief(mean, cov)


def forward_predict(pos_post: GaussianBelief, vel_post: GaussianBelief,
                    process_noise_cov: np.ndarray, dt: float
                    ) -> tuple[GaussianBelief, GaussianBelief]:
    """Forward messages to the next slot: (position prior, velocity prior)."""
    q_pp = process_noise_cov[:2, :2]
    q_vv = process_noise_cov[2:, 2:]
    vel_prior = GaussianBelief(vel_post.mean, vel_post.cov + q_vv)
    pos_prior = GaussianBelief(pos_post.mean + dt * vel_post.mean,
                               pos_post.cov + dt ** 2 * vel_post.cov + q_pp)
    return pos_prior, vel_prior
