"""Human-driver surrogate: Intelligent Driver Model car-following plus the
lead-vehicle trajectory derived from a drive cycle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cycles import DriveCycle


class CollisionError(RuntimeError):
    """Ego closed the gap to (or past) the lead vehicle; episode aborts."""


class CycleEnded(RuntimeError):
    """Query past the end of the drive cycle."""


@dataclass(frozen=True)
class IdmParams:
    """IDM constants.  Heavy-vehicle defaults; accel limit doubles as the
    driver-request bound used in reward normalization."""

    desired_speed: float = 30.0   # m/s
    headway_time: float = 3.0     # s
    max_accel: float = 2.0        # m/s^2
    comfort_decel: float = 1.5    # m/s^2
    accel_exponent: float = 4.0
    jam_distance: float = 4.0     # m
    max_decel: float = 3.0        # m/s^2, clamp on commanded deceleration

    def __post_init__(self):
        fields = (self.desired_speed, self.headway_time, self.max_accel,
                  self.comfort_decel, self.jam_distance, self.max_decel)
        if any(not (f > 0.0) for f in fields):
            raise ValueError("IDM parameters must be positive")
        if self.accel_exponent < 1.0:
            raise ValueError("IDM acceleration exponent must be >= 1")


@dataclass(frozen=True)
class LeadState:
    position: float  # m
    velocity: float  # m/s


def desired_acceleration(ego_v: float, gap: float, lead_v: float,
                         p: IdmParams) -> float:
    """IDM desired acceleration, clamped to [-max_decel, max_accel].

    s* = s0 + v*T + v*(v - v_lead) / (2*sqrt(a*b));
    a  = a_max * (1 - (v/v0)^delta - (s*/gap)^2).
    """
    if gap <= 0.0:
        raise CollisionError(f"gap {gap:.3f} m <= 0")
    s_star = p.jam_distance + ego_v * p.headway_time \
        + ego_v * (ego_v - lead_v) / (2.0 * math.sqrt(p.max_accel * p.comfort_decel))
    accel = p.max_accel * (1.0 - (ego_v / p.desired_speed) ** p.accel_exponent
                           - (s_star / gap) ** 2)
    return min(max(accel, -p.max_decel), p.max_accel)


class LeadVehicle:
    """Lead-vehicle kinematics along a drive cycle.

    Speed is linearly interpolated between the 1 s samples and position is the
    exact integral of that interpolant (trapezoidal over whole samples plus
    the partial segment), so repeated queries are mutually consistent.
    """

    def __init__(self, cycle: DriveCycle):
        self.cycle = cycle
        self._positions = cycle.cumulative_positions()

    def at(self, t: float) -> LeadState:
        cyc = self.cycle
        if t < 0.0 or t > cyc.duration + 1e-9:
            raise CycleEnded(f"t={t:.3f} outside cycle [0, {cyc.duration:.1f}]")
        t = min(t, cyc.duration)
        i = min(int(np.searchsorted(cyc.times, t, side="right")) - 1,
                cyc.times.size - 2)
        i = max(i, 0)
        frac = t - cyc.times[i]
        seg = cyc.times[i + 1] - cyc.times[i]
        v0, v1 = cyc.speeds[i], cyc.speeds[i + 1]
        v = v0 + (v1 - v0) * frac / seg
        pos = self._positions[i] + 0.5 * (v0 + v) * frac
        return LeadState(position=float(pos), velocity=float(v))


def lead_trajectory(cycle: DriveCycle, t: float) -> LeadState:
    """One-shot lead lookup (builds the integral each call; prefer LeadVehicle
    inside loops)."""
    return LeadVehicle(cycle).at(t)


def equilibrium_gap(ego_v: float, p: IdmParams) -> float:
    """Steady-state following gap at matched speeds below the desired speed."""
    free = 1.0 - (ego_v / p.desired_speed) ** p.accel_exponent
    if free <= 0.0:
        raise ValueError("no equilibrium at or above the desired speed")
    return (p.jam_distance + ego_v * p.headway_time) / math.sqrt(free)
