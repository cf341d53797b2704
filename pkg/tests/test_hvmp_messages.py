"""State-side message computations: Doppler-to-velocity fusion, polar
position evidence, prediction projections, forward prediction."""

import numpy as np
import pytest

from isac_mp_sim.beliefs import GaussianBelief, VonMisesBelief
from isac_mp_sim.hvmp.messages import (
    DopplerEvidence, doppler_prediction_message, f1_gradient, f1_hessian, f1_value,
    forward_predict, per_link_position_message, position_fusion, velocity_fusion,
)
from isac_mp_sim.scenario import SPEED_OF_LIGHT, Anchor, AnchorKind, white_acceleration_cov

ZETA_S = np.pi
ZETA_F_BAR = 2 * np.pi * 833.333e3
COEFF = 2 * np.pi * 1.5e-6 * 50 / 0.0107  # zeta_t_bar / lambda


def random_evidence(rng, n):
    out = []
    for _ in range(n):
        phi = rng.uniform(0, 2 * np.pi)
        out.append(DopplerEvidence(direction=np.array([np.cos(phi), np.sin(phi)]),
                                   mu=rng.uniform(-np.pi, np.pi),
                                   kappa=rng.uniform(0.5, 200.0),
                                   coeff=COEFF * rng.uniform(0.5, 2.0)))
    return out


class TestF1Derivatives:
    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(0)
        h = 1e-6
        for _ in range(100):
            ev = random_evidence(rng, rng.integers(1, 5))
            v = rng.uniform(-20, 20, 2)
            g = f1_gradient(v, ev)
            for i in range(2):
                d = np.zeros(2)
                d[i] = h
                num = (f1_value(v + d, ev) - f1_value(v - d, ev)) / (2 * h)
                assert num == pytest.approx(g[i], rel=1e-5, abs=1e-7)

    def test_hessian_matches_central_differences(self):
        rng = np.random.default_rng(1)
        h = 3e-3  # curvature scale is kappa * coeff^2 with coeff ~ 0.04
        for _ in range(100):
            ev = random_evidence(rng, rng.integers(1, 5))
            v = rng.uniform(-20, 20, 2)
            hess = f1_hessian(v, ev)
            num = np.zeros((2, 2))
            for i in range(2):
                for j in range(2):
                    di, dj = np.zeros(2), np.zeros(2)
                    di[i], dj[j] = h, h
                    num[i, j] = (f1_value(v + di + dj, ev) - f1_value(v + di - dj, ev)
                                 - f1_value(v - di + dj, ev) + f1_value(v - di - dj, ev)) / (4 * h * h)
            assert np.linalg.norm(num - hess) / max(np.linalg.norm(hess), 1e-12) < 1e-5


class TestVelocityFusion:
    def test_two_orthogonal_links_exact_recovery(self):
        v_true = np.array([7.0, -3.0])
        dirs = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        evid = [DopplerEvidence(e, float(-COEFF * (v_true @ e)), 1e9, COEFF) for e in dirs]
        prior = GaussianBelief(v_true + np.array([0.3, -0.2]), np.eye(2) * 1.0)
        post = velocity_fusion(evid, prior)
        # oracle: two exact linear readings -> 2x2 solve
        a = np.stack(dirs)
        b = np.array([v_true @ e for e in dirs])
        assert np.allclose(post.mean, np.linalg.solve(a, b), atol=1e-6)

    def test_single_link_perp_direction_prior_dominated(self):
        e = np.array([1.0, 0.0])
        prior_var = 4.0
        prior = GaussianBelief(np.zeros(2), np.eye(2) * prior_var)
        evid = [DopplerEvidence(e, 0.0, 1e8, COEFF)]
        post = velocity_fusion(evid, prior)
        perp = np.array([0.0, 1.0])
        assert float(perp @ post.cov @ perp) == pytest.approx(prior_var, rel=1e-6)
        # radial precision = prior + kappa coeff^2
        expected = 1.0 / (1.0 / prior_var + 1e8 * COEFF ** 2)
        assert float(e @ post.cov @ e) == pytest.approx(expected, rel=1e-6)

    def test_no_informative_messages_returns_prior(self):
        prior = GaussianBelief(np.array([1.0, 2.0]), np.eye(2))
        post = velocity_fusion([DopplerEvidence(np.array([1.0, 0.0]), 0.1, 1e-6, COEFF)], prior)
        assert np.allclose(post.mean, prior.mean)
        assert np.allclose(post.cov, prior.cov)

    def test_posterior_improves_on_prior(self):
        rng = np.random.default_rng(3)
        v_true = np.array([5.0, 2.0])
        prior = GaussianBelief(v_true + rng.normal(0, 0.5, 2), np.eye(2) * 0.5)
        evid = []
        for phi in [0.3, 1.4, 2.2]:
            e = np.array([np.cos(phi), np.sin(phi)])
            evid.append(DopplerEvidence(e, float(-COEFF * (v_true @ e)), 5e5, COEFF))
        post = velocity_fusion(evid, prior)
        assert np.linalg.norm(post.mean - v_true) < np.linalg.norm(prior.mean - v_true)


class TestDopplerPrediction:
    def test_diffuse_velocity(self):
        vm = doppler_prediction_message(GaussianBelief.diffuse(2), np.array([1.0, 0.0]), COEFF)
        assert vm.concentration == 0.0

    def test_deterministic_velocity_mode(self):
        v = np.array([4.0, 1.0])
        e = np.array([0.6, 0.8])
        vm = doppler_prediction_message(GaussianBelief(v, np.eye(2) * 1e-12), e, COEFF)
        expected = -COEFF * float(v @ e)
        assert np.cos(vm.mean_direction - expected) == pytest.approx(1.0, abs=1e-9)

    def test_projected_variance_matches_sampling(self):
        rng = np.random.default_rng(4)
        cov = np.array([[0.3, 0.1], [0.1, 0.5]])
        mean = np.array([2.0, -1.0])
        e = np.array([0.8, 0.6])
        vm = doppler_prediction_message(GaussianBelief(mean, cov), e, COEFF)
        samples = rng.multivariate_normal(mean, cov, size=400_000)
        proj = -COEFF * samples @ e
        assert 1.0 / vm.concentration == pytest.approx(np.var(proj), rel=0.02)


def anchor_at(pos, normal, kind=AnchorKind.BASE_STATION, count=4):
    return Anchor(np.array(pos, float), np.array(normal, float), count, kind)


def vm_for(theta, d, kappa_theta, kappa_tau):
    v_theta = -ZETA_S * np.cos(theta)
    v_tau = -ZETA_F_BAR * d / SPEED_OF_LIGHT
    wrap = lambda x: np.mod(x + np.pi, 2 * np.pi) - np.pi
    return (VonMisesBelief(wrap(v_theta), kappa_theta),
            VonMisesBelief(wrap(v_tau), kappa_tau))


class TestPerLinkPositionMessage:
    def test_point_mass_limit(self):
        theta, d = 0.7, 40.0
        tvm, dvm = vm_for(theta, d, 1e14, 1e14)
        ref = GaussianBelief(np.array([d * np.cos(theta), d * np.sin(theta)]), np.eye(2))
        msg = per_link_position_message(tvm, dvm, anchor_at([0, 0], [1, 0]), ref,
                                        ZETA_S, ZETA_F_BAR)
        expected = d * np.array([np.cos(theta), np.sin(theta)])
        assert np.linalg.norm(msg.mean - expected) < 1e-4
        assert np.trace(msg.cov) < 1e-6

    def test_broadside_geometry(self):
        tvm, dvm = vm_for(np.pi / 2, 10.0, 1e8, 1e8)
        ref = GaussianBelief(np.array([0.5, 9.0]), np.eye(2) * 4.0)
        msg = per_link_position_message(tvm, dvm, anchor_at([0, 0], [1, 0]), ref,
                                        ZETA_S, ZETA_F_BAR)
        assert np.allclose(msg.mean, [0.0, 10.0], atol=1e-3)

    def test_half_plane_follows_reference(self):
        tvm, dvm = vm_for(np.pi / 2, 10.0, 1e8, 1e8)
        ref = GaussianBelief(np.array([0.5, -9.0]), np.eye(2) * 4.0)
        msg = per_link_position_message(tvm, dvm, anchor_at([0, 0], [1, 0]), ref,
                                        ZETA_S, ZETA_F_BAR)
        assert np.allclose(msg.mean, [0.0, -10.0], atol=1e-3)

    def test_covariance_against_monte_carlo(self):
        rng = np.random.default_rng(7)
        theta, d = 1.1, 35.0
        kt, kd = 300.0, 150.0
        tvm, dvm = vm_for(theta, d, kt, kd)
        anchor = anchor_at([5.0, -3.0], [np.cos(0.2), np.sin(0.2)])
        truth = anchor.position + d * np.array([np.cos(0.2 + theta), np.sin(0.2 + theta)])
        ref = GaussianBelief(truth, np.eye(2))
        msg = per_link_position_message(tvm, dvm, anchor, ref, ZETA_S, ZETA_F_BAR)
        n = 300_000
        v_t = rng.vonmises(tvm.mean_direction, tvm.concentration, n)
        v_d = rng.vonmises(dvm.mean_direction, dvm.concentration, n)
        cos_s = np.clip(-v_t / ZETA_S, -1, 1)
        th_s = np.arccos(cos_s)
        # unwrap delays onto the branch of the true range
        v_ref = -ZETA_F_BAR * d / SPEED_OF_LIGHT
        v_d = v_d + 2 * np.pi * np.round((v_ref - v_d) / (2 * np.pi))
        d_s = -v_d * SPEED_OF_LIGHT / ZETA_F_BAR
        ang = 0.2 + th_s  # anchor axis angle plus aoa (positive side)
        pts = anchor.position + d_s[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        sample_cov = np.cov(pts.T)
        num = np.linalg.norm(sample_cov - msg.cov)
        assert num / np.linalg.norm(sample_cov) < 0.05
        assert np.linalg.norm(pts.mean(axis=0) - msg.mean) < 0.05

    def test_diffuse_returns_none(self):
        tvm = VonMisesBelief(0.1, 1e-6)
        dvm = VonMisesBelief(0.1, 100.0)
        ref = GaussianBelief(np.array([10.0, 0.0]), np.eye(2))
        assert per_link_position_message(tvm, dvm, anchor_at([0, 0], [1, 0]), ref,
                                         ZETA_S, ZETA_F_BAR) is None

    def test_nonpositive_range_dropped(self):
        tvm = VonMisesBelief(0.0, 1e6)
        dvm = VonMisesBelief(0.0, 1e6)  # v_tau = 0 -> d = 0
        ref = GaussianBelief(np.array([0.5, 0.0]), np.eye(2))
        assert per_link_position_message(tvm, dvm, anchor_at([0, 0], [1, 0]), ref,
                                         ZETA_S, ZETA_F_BAR) is None


class TestPositionFusion:
    def test_all_diffuse(self):
        out = position_fusion([], None)
        assert not out.is_proper()

    def test_matches_gaussian_fuse(self):
        a = GaussianBelief(np.array([1.0, 0.0]), np.eye(2))
        b = GaussianBelief(np.array([0.0, 1.0]), 2 * np.eye(2))
        f = position_fusion([a], b)
        lam = np.linalg.inv(a.cov) + np.linalg.inv(b.cov)
        cov = np.linalg.inv(lam)
        mean = cov @ (np.linalg.inv(a.cov) @ a.mean + np.linalg.inv(b.cov) @ b.mean)
        assert np.allclose(f.mean, mean)
        assert np.allclose(f.cov, cov)


class TestForwardPredict:
    def test_zero_noise_mean_propagation(self):
        pos = GaussianBelief(np.array([1.0, 2.0]), np.eye(2) * 0.1)
        vel = GaussianBelief(np.array([3.0, -1.0]), np.eye(2) * 0.2)
        p, v = forward_predict(pos, vel, np.zeros((4, 4)), dt=0.5)
        assert np.allclose(p.mean, [2.5, 1.5])
        assert np.allclose(v.mean, vel.mean)

    def test_matches_kalman_predict_oracle(self):
        dt = 0.02
        q = white_acceleration_cov(dt, 1.3)
        pos = GaussianBelief(np.array([1.0, 2.0]), np.array([[0.3, 0.05], [0.05, 0.4]]))
        vel = GaussianBelief(np.array([3.0, -1.0]), np.array([[0.2, -0.02], [-0.02, 0.15]]))
        p, v = forward_predict(pos, vel, q, dt)
        # KF predict on the joint state with zero cross-covariance
        f0 = np.block([[np.eye(2), dt * np.eye(2)], [np.zeros((2, 2)), np.eye(2)]])
        joint_cov = np.block([[pos.cov, np.zeros((2, 2))], [np.zeros((2, 2)), vel.cov]])
        pred_cov = f0 @ joint_cov @ f0.T + q
        pred_mean = f0 @ np.concatenate([pos.mean, vel.mean])
        assert np.allclose(p.mean, pred_mean[:2], atol=1e-10)
        assert np.allclose(v.mean, pred_mean[2:], atol=1e-10)
        assert np.allclose(p.cov, pred_cov[:2, :2], atol=1e-10)
        assert np.allclose(v.cov, pred_cov[2:, 2:], atol=1e-10)

    def test_covariance_grows_with_process_noise(self):
        dt = 0.02
        q = white_acceleration_cov(dt, 2.0)
        pos = GaussianBelief(np.zeros(2), np.eye(2) * 0.01)
        vel = GaussianBelief(np.zeros(2), np.eye(2) * 0.01)
        p, v = forward_predict(pos, vel, q, dt)
        assert np.all(np.linalg.eigvalsh(p.cov - pos.cov) > 0)
        assert np.all(np.linalg.eigvalsh(v.cov - vel.cov) > 0)
