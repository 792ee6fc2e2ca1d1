"""Closed-loop behaviour of the adaptive impedance controller on the simulated arm."""

import numpy as np
import pytest

from autosand import dynamics as dyn
from autosand import harness
from autosand.config import PipelineConfig


def block_disturbance(seed, magnitude=5.0, dwell=0.25):
    """Piecewise-constant random-sign torque on every joint.

    The switching pattern is not a function of the state, so the adaptive
    network cannot learn it away; only the robust term can suppress it.
    """
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=(400, 4))
    return lambda t: magnitude * signs[min(int(t / dwell), 399)]


def free_space_setup(config, duration=6.0, robust_gain=None, disturbance=None):
    """Regulation of a pose offset with no contact and zero desired force.

    Joint limits are opened up: with the robust term removed the gravity
    transient sags far before the adaptation catches it, which is exactly the
    behaviour the comparison wants to expose rather than abort on.
    """
    setup = harness.nominal_setup(config, duration=duration, force_noise=0.0)
    setup.model = dyn.RobotModel(joint_limits=((-5.0, 5.0),) * 4)
    x0 = dyn.forward_kinematics(setup.model, setup.start.q)
    setup.contact = None
    setup.x_d = x0 + np.array([-0.03, 0.02, 0.05])
    setup.f_d = np.zeros(3)
    setup.disturbance = disturbance
    if robust_gain is not None:
        gains = harness.build_gains(config)
        gains.robust_gain = robust_gain
        setup.gains = gains
    return setup


@pytest.fixture(scope="module")
def config():
    return PipelineConfig()


@pytest.fixture(scope="module")
def nominal_run(config):
    """The headline regulation scenario, 10 s, noise-free sensor."""
    setup = harness.nominal_setup(config, duration=10.0, force_noise=0.0)
    return harness.simulate_sanding(setup)


class TestForceRegulation:
    def test_steady_force_within_band(self, nominal_run):
        assert abs(nominal_run.steady_force - (-25.0)) < 0.05 * 25.0

    def test_reaches_band_inside_five_seconds(self, nominal_run):
        t = nominal_run.times
        f = nominal_run.forces[:, 0]
        window = (t >= 4.0) & (t <= 5.0)
        assert np.abs(f[window] + 25.0).max() < 1.25

    def test_with_sensor_noise(self, config):
        setup = harness.nominal_setup(config, duration=5.0, force_noise=0.1)
        result = harness.simulate_sanding(setup)
        assert abs(result.steady_force - (-25.0)) < 1.25

    def test_stiffer_belt_converges_with_same_gains(self, config, nominal_run):
        # ten times stiffer belt pad; damping scales with stiffness as in a
        # hysteretic (loss-factor) contact model
        setup = harness.nominal_setup(config, duration=6.0, force_noise=0.0)
        scale = 10.0
        setup.contact = dyn.BeltContact(
            plane_offset=setup.contact.plane_offset,
            stiffness=scale * config.contact.stiffness,
            damping=scale * config.contact.damping,
            drag=config.contact.drag)
        result = harness.simulate_sanding(setup)
        assert abs(result.steady_force - (-25.0)) < 1.25
        # the commanded penetration overshoots the stiffer surface, so the
        # steady position error is larger than in the nominal run
        x_err_stiff = abs(result.log[-1, 9] - setup.x_d[0])
        x_err_nominal = abs(nominal_run.log[-1, 9] - 0.0515)
        assert x_err_stiff > 10 * x_err_nominal


class TestImpedanceVectorConvergence:
    def test_error_settles_below_threshold(self, nominal_run):
        t = nominal_run.times
        norms = np.linalg.norm(nominal_run.vel_errors, axis=1)
        tail = t >= 0.7 * t[-1]
        assert norms[tail].max() < 1e-2
        assert nominal_run.monitor.settle_time is not None

    def test_adaptation_disabled_floor_is_larger(self, config, nominal_run):
        setup = harness.nominal_setup(config, duration=6.0, force_noise=0.0)
        setup.net = harness.build_network(config)
        setup.net.learn_rates[:] = 0.0
        frozen = harness.simulate_sanding(setup)
        assert frozen.mean_zq_tail > 100 * nominal_run.mean_zq_tail
        assert frozen.mean_zq_tail > 1e-2

    def test_robust_gain_suppresses_disturbance(self, config):
        with_gain = harness.simulate_sanding(
            free_space_setup(config, disturbance=block_disturbance(3)))
        without = harness.simulate_sanding(
            free_space_setup(config, robust_gain=0.0,
                             disturbance=block_disturbance(3)))
        assert without.mean_zq_tail > with_gain.mean_zq_tail
        assert without.mean_zq_tail > 3 * with_gain.mean_zq_tail

    def test_task_error_is_jacobian_image_along_trajectory(self, config,
                                                           nominal_run):
        worst = 0.0
        for i in range(0, len(nominal_run.times), 100):
            q = nominal_run.log[i, 1:5]
            jac = dyn.jacobian(config.robot, q)
            worst = max(worst, np.abs(jac @ nominal_run.vel_errors[i]
                                      - nominal_run.task_errors[i]).max())
        assert worst < 1e-8


class TestTargetImpedanceRealization:
    def test_filtered_residual_small_after_transient(self, config, nominal_run):
        t = nominal_run.times
        z = nominal_run.task_errors
        zdot = np.gradient(z, t, axis=0)
        residual = np.linalg.norm(zdot + config.impedance.filter_rate * z, axis=1)
        assert residual[t >= 2.0].max() < 0.05


class TestLyapunovDescent:
    def test_monitor_passes_on_nominal_run(self, nominal_run):
        assert nominal_run.monitor.passed

    def test_observable_storage_decays(self, nominal_run):
        smoothed = nominal_run.monitor.smoothed
        assert smoothed[-1] < 1e-6 * smoothed.max()


class TestFreeSpaceTracking:
    def test_pure_motion_tracking(self, config):
        result = harness.simulate_sanding(free_space_setup(config))
        x_err = np.linalg.norm(result.log[-1, 9:12] - free_space_setup(config).x_d)
        assert x_err < 1e-3

    def test_forces_stay_zero(self, config):
        result = harness.simulate_sanding(free_space_setup(config, duration=3.0))
        assert np.abs(result.forces).max() == 0.0

    def test_time_varying_reference(self, config):
        """A slow task-space orbit is followed once the feedforward kicks in."""
        from autosand.impedance import ReferenceTrajectory
        setup = free_space_setup(config, duration=8.0)
        x0 = setup.x_d
        omega = 0.8
        amp = np.array([0.02, 0.015, 0.1])

        def pos(t):
            return x0 + amp * np.sin(omega * t)

        def vel(t):
            return amp * omega * np.cos(omega * t)

        def acc(t):
            return -amp * omega ** 2 * np.sin(omega * t)

        setup.trajectory = ReferenceTrajectory(pos, vel, acc,
                                               lambda t: np.zeros(3))
        result = harness.simulate_sanding(setup)
        t = result.times
        tail = t >= 5.0
        x_ref = np.stack([pos(ti) for ti in t[tail]])
        err = np.linalg.norm(result.log[tail, 9:12] - x_ref, axis=1)
        assert err.max() < 2e-3
