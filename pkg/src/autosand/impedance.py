"""Desired-impedance target and its factorization into two first-order rates.

The target behaviour  M_d dxdd + C_d dxd + K_d dx = df  is split per axis into
a fast tracking rate and a slow filter rate (the two real roots of the
characteristic polynomial).  The filter rate drives a first-order low-pass of
the force error; the composite error

    z = dxdot + track_rate * dx - filtered_force_error

then obeys  zdot + filter_rate * z = (impedance residual), so driving z to zero
realizes the target impedance in the low-frequency range.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ComplexRoots(Exception):
    """The requested impedance target is under-damped and cannot be factored."""


def _diag3(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = np.full(3, float(arr))
    return arr.reshape(3)


def factor_rates(inertia, damping, stiffness):
    """Split the per-axis second-order target into (track_rate, filter_rate).

    The rates are the two real roots of s^2 - (C/M) s + (K/M) = 0 with
    track_rate taking the larger root.  Raises ComplexRoots on a negative
    discriminant (under-damped target).
    """
    inertia = _diag3(inertia)
    damping = _diag3(damping)
    stiffness = _diag3(stiffness)
    p = damping / inertia
    r = stiffness / inertia
    disc = p * p - 4.0 * r
    if (disc < 0.0).any():
        raise ComplexRoots(f"negative discriminant on axes {np.nonzero(disc < 0)[0]}")
    root = np.sqrt(disc)
    return 0.5 * (p + root), 0.5 * (p - root)


@dataclass
class ImpedanceSpec:
    """Diagonal desired inertia / damping / stiffness plus the derived rates."""

    inertia: np.ndarray = 1.0
    damping: np.ndarray = 12.5
    stiffness: np.ndarray = 11.5
    track_rate: np.ndarray = field(init=False)
    filter_rate: np.ndarray = field(init=False)

    def __post_init__(self):
        self.inertia = _diag3(self.inertia)
        self.damping = _diag3(self.damping)
        self.stiffness = _diag3(self.stiffness)
        if (self.inertia <= 0).any() or (self.damping <= 0).any() or (self.stiffness <= 0).any():
            raise ValueError("impedance diagonals must be strictly positive")
        self.track_rate, self.filter_rate = factor_rates(
            self.inertia, self.damping, self.stiffness)


@dataclass
class ForceFilterState:
    """State of the first-order force-error filter (velocity units)."""

    value: np.ndarray = None

    def __post_init__(self):
        self.value = np.zeros(3) if self.value is None else _diag3(self.value)

    @classmethod
    def zero(cls) -> "ForceFilterState":
        return cls()


def filter_force_step(state: ForceFilterState, force_error: np.ndarray,
                      spec: ImpedanceSpec, dt: float) -> ForceFilterState:
    """Advance the force filter by dt with a zero-order hold on the force error.

    The filter is diagonal and linear, so the exact exponential update is used
    instead of an Euler step.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    decay = np.exp(-spec.filter_rate * dt)
    gain = (1.0 - decay) / (spec.filter_rate * spec.inertia)
    return ForceFilterState(decay * state.value + gain * _diag3(force_error))


def impedance_error(pos_error: np.ndarray, vel_error: np.ndarray,
                    spec: ImpedanceSpec, state: ForceFilterState) -> np.ndarray:
    """Composite task-space impedance error z."""
    return _diag3(vel_error) + spec.track_rate * _diag3(pos_error) - state.value


@dataclass
class ReferenceTrajectory:
    """Time-varying task-space setpoint: position, its derivatives, and force."""

    position: Callable
    velocity: Callable
    acceleration: Callable
    force: Callable

    @classmethod
    def constant(cls, x_d, f_d) -> "ReferenceTrajectory":
        x_d = _diag3(x_d)
        f_d = _diag3(f_d)
        zero = np.zeros(3)
        return cls(lambda t: x_d, lambda t: zero, lambda t: zero, lambda t: f_d)

    @classmethod
    def from_samples(cls, times, positions, forces=None) -> "ReferenceTrajectory":
        """Uniformly sampled setpoint; velocities/accelerations by central differences."""
        times = np.asarray(times, dtype=float)
        positions = np.asarray(positions, dtype=float).reshape(len(times), 3)
        vel = np.gradient(positions, times, axis=0)
        acc = np.gradient(vel, times, axis=0)
        if forces is None:
            forces = np.zeros_like(positions)
        forces = np.asarray(forces, dtype=float).reshape(len(times), 3)

        def interp(samples):
            return lambda t: np.array([np.interp(t, times, samples[:, k]) for k in range(3)])

        return cls(interp(positions), interp(vel), interp(acc), interp(forces))

    def sample(self, t: float):
        return self.position(t), self.velocity(t), self.acceleration(t), self.force(t)
