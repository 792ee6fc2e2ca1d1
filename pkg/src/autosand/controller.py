"""Joint-space adaptive impedance controller.

A Gaussian RBF network with linear-in-weight adaptation absorbs the unknown
arm dynamics online; a diagonal velocity-error gain plus a robust switching
term drive the joint-space impedance error to zero.  The descent monitor
checks the observable consequence of the stability argument (the quadratic
form 0.5 z^T M z must not grow once the transient has died out).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .impedance import ImpedanceSpec, ForceFilterState


class InsufficientData(Exception):
    """Descent monitoring needs at least two samples."""


@dataclass
class RbfNetwork:
    """Gaussian radial-basis network over the 16-dim controller input.

    weights holds one output row per joint; learn_rates are the diagonal
    entries of the per-joint positive-definite adaptation gains.
    """

    centers: np.ndarray
    widths: np.ndarray
    weights: np.ndarray = None
    learn_rates: np.ndarray = 50.0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        n = len(self.centers)
        self.widths = np.broadcast_to(np.asarray(self.widths, dtype=float), (n,)).copy()
        if self.weights is None:
            self.weights = np.zeros((4, n))
        self.weights = np.asarray(self.weights, dtype=float).reshape(4, n)
        self.learn_rates = np.broadcast_to(
            np.asarray(self.learn_rates, dtype=float), (4, n)).copy()
        if (self.widths <= 0).any():
            raise ValueError("widths must be positive")
        if (self.learn_rates < 0).any():
            raise ValueError("learn rates must be non-negative")
        if not np.isfinite(self.weights).all():
            raise ValueError("weights must be finite")

    @classmethod
    def latin_hypercube(cls, low, high, n_centers: int = 64, seed: int = 0,
                        learn_rate: float = 50.0, width_scale: float = 1.0) -> "RbfNetwork":
        """Spread centers over the operating box by Latin-hypercube sampling.

        Widths are set to the median inter-center distance (scaled), which keeps
        every basis function active somewhere in the box.
        """
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        d = len(low)
        rng = np.random.default_rng(seed)
        u = (rng.permuted(np.tile(np.arange(n_centers), (d, 1)), axis=1).T
             + rng.uniform(size=(n_centers, d))) / n_centers
        centers = low + u * (high - low)
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        width = width_scale * np.median(dist[np.triu_indices(n_centers, 1)])
        return cls(centers, width, learn_rates=learn_rate)


@dataclass
class ControllerGains:
    """vel_gain is the diagonal of the velocity-error gain matrix; robust_gain
    scales the switching term.  boundary=None selects the exact sign function,
    otherwise the switching term saturates linearly inside |z| < boundary."""

    vel_gain: np.ndarray = 10.0
    robust_gain: float = 20.0
    boundary: float | None = 0.05

    def __post_init__(self):
        self.vel_gain = np.broadcast_to(
            np.asarray(self.vel_gain, dtype=float), (4,)).copy()
        if (self.vel_gain <= 0).any():
            raise ValueError("velocity-error gains must be positive")
        if self.robust_gain < 0:
            raise ValueError("robust gain must be non-negative")
        if self.boundary is not None and self.boundary <= 0:
            raise ValueError("boundary layer must be positive")


def reference_velocity(j_pinv: np.ndarray, xd_dot: np.ndarray, pos_error: np.ndarray,
                       filt: ForceFilterState, spec: ImpedanceSpec) -> np.ndarray:
    """Joint reference velocity: pseudo-inverse image of the corrected task rate."""
    return j_pinv @ (np.asarray(xd_dot, dtype=float)
                     - spec.track_rate * np.asarray(pos_error, dtype=float)
                     + filt.value)


def velocity_error(qdot: np.ndarray, qdot_ref: np.ndarray) -> np.ndarray:
    """Joint-space impedance error: deviation from the reference velocity."""
    return np.asarray(qdot, dtype=float) - np.asarray(qdot_ref, dtype=float)


def rbf_activation(net: RbfNetwork, q, qdot, qdot_ref, qddot_ref) -> np.ndarray:
    """Gaussian activations of the stacked input (q, qdot, qdot_ref, qddot_ref)."""
    inp = np.concatenate([np.asarray(v, dtype=float).reshape(-1)
                          for v in (q, qdot, qdot_ref, qddot_ref)])
    d2 = ((net.centers - inp) ** 2).sum(axis=1)
    return np.exp(-d2 / (2.0 * net.widths ** 2))


def _switch(vel_err: np.ndarray, boundary: float | None) -> np.ndarray:
    if boundary is None:
        return np.sign(vel_err)
    return np.clip(vel_err / boundary, -1.0, 1.0)


def control_law(gains: ControllerGains, net: RbfNetwork, vel_err: np.ndarray,
                theta: np.ndarray, tau_ext: np.ndarray) -> np.ndarray:
    """Adaptive impedance control torque.

    Feedback on the velocity error, the network's feedforward estimate, a
    robust switching term, and cancellation of the measured interaction torque.
    """
    vel_err = np.asarray(vel_err, dtype=float)
    return (-gains.vel_gain * vel_err
            + net.weights @ theta
            - gains.robust_gain * _switch(vel_err, gains.boundary)
            - np.asarray(tau_ext, dtype=float))


def weight_update(net: RbfNetwork, theta: np.ndarray, vel_err: np.ndarray,
                  dt: float) -> RbfNetwork:
    """Explicit Euler step of the row-wise adaptation law.

    Row j moves against theta scaled by its own error component only, so
    adaptation stops exactly when the error vanishes.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    vel_err = np.asarray(vel_err, dtype=float)
    new_w = net.weights - dt * (net.learn_rates * theta[None, :]) * vel_err[:, None]
    return replace(net, weights=new_w)


@dataclass
class DescentReport:
    passed: bool
    settle_time: float | None
    max_rise: float
    v_obs: np.ndarray
    smoothed: np.ndarray


def lyapunov_monitor(times, vel_errors, mass_matrices, window: float = 0.5,
                     transient: float = 1.0, settle_threshold: float = 1e-2,
                     rise_tol: float = 1e-3) -> DescentReport:
    """Check the observable descent condition along a closed-loop run.

    Computes v = 0.5 z^T M z per sample, smooths it with a moving average of
    the given window, and requires the smoothed curve never to climb more than
    rise_tol times its post-transient peak above its running minimum.  The
    weight-error part of the full storage function is unobservable (the ideal
    weights are unknown), so only this necessary consequence is tested.
    Also reports the first time |z| settles below settle_threshold for good.
    """
    times = np.asarray(times, dtype=float)
    if len(times) < 2:
        raise InsufficientData("need at least two samples")
    zq = np.asarray(vel_errors, dtype=float).reshape(len(times), -1)
    mm = np.asarray(mass_matrices, dtype=float)
    v_obs = 0.5 * np.einsum("ti,tij,tj->t", zq, mm, zq)

    dt = float(np.median(np.diff(times)))
    win = max(1, int(round(window / dt)))
    kernel = np.ones(win) / win
    smoothed = np.convolve(v_obs, kernel, mode="valid")
    t_smooth = times[win - 1:]

    after = smoothed[t_smooth >= times[0] + transient]
    if len(after) < 2:
        after = smoothed
    tol = rise_tol * max(smoothed.max(), np.finfo(float).tiny)
    running_min = np.minimum.accumulate(after)
    rises = after - running_min
    max_rise = float(rises.max())
    passed = max_rise <= tol

    norms = np.linalg.norm(zq, axis=1)
    below = norms < settle_threshold
    settle_time = None
    if below[-1]:
        idx = len(below) - 1
        while idx > 0 and below[idx - 1]:
            idx -= 1
        settle_time = float(times[idx])
    return DescentReport(passed, settle_time, max_rise, v_obs, smoothed)
