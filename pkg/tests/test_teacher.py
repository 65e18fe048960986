"""Toy datasets, pretraining objective, and the point-mass analytic velocity."""

import math

import numpy as np
import pytest

from trajdistill.engine import ShapeError
from trajdistill.schedules import HALF_PI, DomainError
from trajdistill.teacher import (
    Dataset2D,
    TeacherConfig,
    TrainingError,
    analytic_velocity_pointmass,
    logit_normal_times,
    train_teacher,
    trigflow_target,
)


class TestDatasets:
    def test_unknown_tag(self):
        with pytest.raises(ValueError):
            Dataset2D(tag="Spiral")

    def test_condition_vocabulary(self):
        assert Dataset2D("GaussianMixture8").num_conditions == 8
        assert Dataset2D("TwoMoons").num_conditions == 2
        assert Dataset2D("SwissRoll2D").num_conditions == 1
        assert Dataset2D("PointMass").num_conditions == 1

    def test_invalid_count(self):
        with pytest.raises(ValueError):
            Dataset2D("PointMass").sample(0, np.random.default_rng(0))

    @pytest.mark.parametrize("tag", ["GaussianMixture8", "TwoMoons", "SwissRoll2D"])
    def test_normalized_scale(self, tag):
        ds = Dataset2D(tag, sigma_d=0.5)
        x, _ = ds.sample(40_000, np.random.default_rng(1))
        # mean per-coordinate second moment should match sigma_d^2
        assert np.mean(x**2) == pytest.approx(0.25, rel=0.05)

    def test_gm8_conditions_match_modes(self):
        ds = Dataset2D("GaussianMixture8", sigma_d=0.5)
        x, y = ds.sample(4000, np.random.default_rng(2))
        assert set(np.unique(y)) <= set(range(8))
        # points with the same id cluster around their mode center
        for mode in range(8):
            pts = x[y == mode]
            center = pts.mean(axis=0)
            angle = math.atan2(center[1], center[0]) % (2 * math.pi)
            assert angle == pytest.approx(mode * math.pi / 4 % (2 * math.pi), abs=0.15)

    def test_point_mass_is_constant(self):
        ds = Dataset2D("PointMass", point=(2.0, -1.0))
        x, y = ds.sample(10, np.random.default_rng(0))
        np.testing.assert_array_equal(x, np.tile([2.0, -1.0], (10, 1)))
        assert np.all(y == 0)

    def test_sampling_is_seeded(self):
        ds = Dataset2D("TwoMoons")
        a, _ = ds.sample(100, np.random.default_rng(7))
        b, _ = ds.sample(100, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)


def test_logit_normal_times_in_range():
    t = logit_normal_times(np.random.default_rng(0), 10_000, 0.2, 1.6, 0.5)
    assert np.all((t > 0.0) & (t < HALF_PI))
    # wide proposal should cover both ends of the time range
    assert t.min() < 0.2 and t.max() > 1.4


class TestTarget:
    def test_scalar_time_value(self):
        x0 = np.array([[1.0, 0.0]])
        z = np.array([[0.0, 1.0]])
        out = trigflow_target(x0, z, math.pi / 3)
        np.testing.assert_allclose(
            out, [[-math.sin(math.pi / 3), 0.5]], atol=1e-15
        )

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            trigflow_target(np.zeros((2, 2)), np.zeros((3, 2)), 0.5)

    def test_per_sample_times(self):
        rng = np.random.default_rng(3)
        x0, z = rng.standard_normal((2, 4, 2))
        t = rng.uniform(0.1, 1.4, 4)
        out = trigflow_target(x0, z, t)
        for i in range(4):
            np.testing.assert_allclose(
                out[i], trigflow_target(x0[i], z[i], float(t[i])), atol=1e-15
            )


class TestPointMassVelocity:
    def test_matches_trajectory_derivative(self):
        # closed trajectory x(t) = cos(t) x* + sin(t) z has velocity
        # -sin(t) x* + cos(t) z; sigma_d * F must reproduce it exactly.
        sigma_d = 0.5
        x_star = np.array([2.0, -1.0])
        rng = np.random.default_rng(4)
        z = rng.standard_normal(2)
        for t in np.linspace(0.05, HALF_PI, 30):
            x_t = math.cos(t) * x_star + math.sin(t) * z
            v = sigma_d * analytic_velocity_pointmass(x_t, t, x_star, sigma_d)
            np.testing.assert_allclose(
                v, -math.sin(t) * x_star + math.cos(t) * z, atol=1e-12
            )

    def test_singular_at_zero(self):
        with pytest.raises(DomainError):
            analytic_velocity_pointmass(np.zeros(2), 0.0, np.zeros(2), 1.0)


class TestTraining:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            TeacherConfig(steps=-1)
        with pytest.raises(ValueError):
            TeacherConfig(lr=0.0)

    def test_default_net_matches_vocabulary(self):
        cfg = TeacherConfig(dataset=Dataset2D("TwoMoons"))
        assert cfg.net.num_conditions == 2

    def test_short_run_reduces_loss(self):
        cfg = TeacherConfig(
            dataset=Dataset2D("PointMass", point=(0.4, -0.2), sigma_d=0.5),
            steps=400,
            batch=64,
            seed=0,
        )
        params, losses = train_teacher(cfg)
        assert len(losses) == 400
        assert np.mean(losses[-50:]) < 0.25 * np.mean(losses[:50])

    def test_divergence_reports_step(self):
        cfg = TeacherConfig(
            dataset=Dataset2D("PointMass", sigma_d=0.5), steps=50, lr=1e160
        )
        with pytest.raises(TrainingError) as err:
            train_teacher(cfg)
        assert err.value.step >= 0

    def test_training_is_deterministic(self):
        cfg = TeacherConfig(
            dataset=Dataset2D("PointMass", sigma_d=0.5), steps=30, batch=16, seed=5
        )
        p1, l1 = train_teacher(cfg)
        p2, l2 = train_teacher(cfg)
        assert l1 == l2
        for name in p1:
            np.testing.assert_array_equal(p1[name], p2[name])
