"""Longitudinal vehicle and powertrain physics.

Deterministic plant for a conventional commercial vehicle: quadratic road
loads, a torque-limited diesel engine with a tabulated fuel map, a 10-speed
stepped transmission, and an engine-brake/service-brake split for negative
torque.  Engine speeds are rad/s internally; the CSV data files use rpm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

RADS_PER_RPM = math.pi / 30.0
N_GEARS = 10


class PlantError(RuntimeError):
    """A plant invariant was violated (bad input or corrupted state)."""


@dataclass(frozen=True)
class VehicleParams:
    """Chassis-level constants for the longitudinal force balance."""

    mass: float                      # kg
    rotating_mass_factor: np.ndarray  # per gear, effective mass = factor * mass
    frontal_area: float              # m^2
    drag_coeff: float
    rolling_coeff: float
    wheel_radius: float              # m
    air_density: float = 1.2         # kg/m^3
    gravity: float = 9.81            # m/s^2

    def __post_init__(self):
        object.__setattr__(self, "rotating_mass_factor",
                           np.asarray(self.rotating_mass_factor, dtype=float))
        scalars = (self.mass, self.frontal_area, self.drag_coeff,
                   self.rolling_coeff, self.wheel_radius, self.air_density,
                   self.gravity)
        if any(not (s > 0.0) for s in scalars):
            raise ValueError("vehicle parameters must be strictly positive")
        f = self.rotating_mass_factor
        if f.shape != (N_GEARS,):
            raise ValueError(f"need one rotating-mass factor per gear, got {f.shape}")
        if np.any(f < 1.0):
            raise ValueError("rotating-mass factors must be >= 1")
        if np.any(np.diff(f) > 0.0):
            raise ValueError("rotating-mass factors must not increase with gear")

    def effective_mass(self, gear: int) -> float:
        return self.mass * float(self.rotating_mass_factor[gear - 1])


class Curve1D:
    """Piecewise-linear table y(x), clamped to its end values outside the grid."""

    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.x.ndim != 1 or self.x.shape != self.y.shape:
            raise ValueError("curve needs matching 1-D abscissae and ordinates")
        if np.any(np.diff(self.x) <= 0.0):
            raise ValueError("curve abscissae must be strictly increasing")

    def __call__(self, x):
        return np.interp(x, self.x, self.y)


class FuelMap:
    """Rectangular fuel-rate grid over (engine speed rad/s, engine torque N·m)."""

    def __init__(self, speeds, torques, rates):
        self.speeds = np.asarray(speeds, dtype=float)
        self.torques = np.asarray(torques, dtype=float)
        self.rates = np.asarray(rates, dtype=float)
        if self.rates.shape != (self.speeds.size, self.torques.size):
            raise ValueError("fuel map grid shape mismatch")
        if np.any(np.diff(self.speeds) <= 0) or np.any(np.diff(self.torques) <= 0):
            raise ValueError("fuel map breakpoints must be strictly increasing")
        if np.any(self.rates < 0.0):
            raise ValueError("fuel rates must be non-negative")
        if np.any(np.diff(self.rates, axis=1) < -1e-12):
            raise ValueError("fuel rate must be non-decreasing in torque")

    def rate(self, speed: float, torque: float) -> float:
        """Bilinear interpolation; speed outside the grid is a hard error."""
        s, t = self.speeds, self.torques
        if speed < s[0] - 1e-9 or speed > s[-1] + 1e-9:
            raise PlantError(f"engine speed {speed:.2f} rad/s outside fuel map "
                             f"[{s[0]:.2f}, {s[-1]:.2f}]")
        speed = min(max(speed, s[0]), s[-1])
        torque = min(max(torque, t[0]), t[-1])
        i = min(int(np.searchsorted(s, speed, side="right")) - 1, s.size - 2)
        j = min(int(np.searchsorted(t, torque, side="right")) - 1, t.size - 2)
        i = max(i, 0)
        j = max(j, 0)
        fs = (speed - s[i]) / (s[i + 1] - s[i])
        ft = (torque - t[j]) / (t[j + 1] - t[j])
        r = self.rates
        return ((1 - fs) * (1 - ft) * r[i, j] + fs * (1 - ft) * r[i + 1, j]
                + (1 - fs) * ft * r[i, j + 1] + fs * ft * r[i + 1, j + 1])


@dataclass(frozen=True)
class EngineSpec:
    """Engine operating envelope, braking capability, and fuel consumption."""

    idle_speed: float          # rad/s
    max_speed: float           # rad/s
    max_torque_curve: Curve1D  # rad/s -> N·m
    max_brake_torque_curve: Curve1D  # rad/s -> N·m, values <= 0
    fuel_map: FuelMap
    idle_fuel_rate: float      # g/s

    def __post_init__(self):
        if not self.idle_speed < self.max_speed:
            raise ValueError("idle speed must be below max speed")
        if np.any(self.max_brake_torque_curve.y > 0.0):
            raise ValueError("engine-brake torque curve must be <= 0")
        fm = self.fuel_map
        if fm.speeds[0] > self.idle_speed + 1e-9 or fm.speeds[-1] < self.max_speed - 1e-9:
            raise ValueError("fuel map must cover [idle_speed, max_speed]")


@dataclass(frozen=True)
class TransmissionSpec:
    """Stepped gearbox: 10 ratios, a final drive, and a driveline efficiency."""

    gear_ratios: np.ndarray
    final_drive_ratio: float
    driveline_efficiency: float

    def __post_init__(self):
        object.__setattr__(self, "gear_ratios",
                           np.asarray(self.gear_ratios, dtype=float))
        if self.gear_ratios.shape != (N_GEARS,):
            raise ValueError(f"expected {N_GEARS} gear ratios")
        if np.any(np.diff(self.gear_ratios) >= 0.0):
            raise ValueError("gear ratios must be strictly decreasing")
        if not 0.0 < self.driveline_efficiency <= 1.0:
            raise ValueError("driveline efficiency must be in (0, 1]")
        if np.any(self.gear_ratios * self.final_drive_ratio <= 0.0):
            raise ValueError("overall ratios must be positive")

    def overall_ratio(self, gear: int) -> float:
        return float(self.gear_ratios[gear - 1]) * self.final_drive_ratio


@dataclass(frozen=True)
class PowertrainSpec:
    vehicle: VehicleParams
    engine: EngineSpec
    transmission: TransmissionSpec


@dataclass(frozen=True)
class PlantState:
    """Full physical state of the ego vehicle."""

    position: float      # m
    velocity: float      # m/s, >= 0
    acceleration: float  # m/s^2 (realized on the previous step)
    gear: int            # 1..10
    engine_speed: float  # rad/s
    fuel_used: float     # g
    time: float          # s


@dataclass(frozen=True)
class RoadProfile:
    """Road grade angle (rad) as a piecewise-linear function of position."""

    grade_table: Curve1D

    def __post_init__(self):
        if np.any(np.abs(self.grade_table.y) >= math.pi / 2):
            raise ValueError("grade angle must satisfy |psi| < pi/2")

    def grade(self, position: float) -> float:
        return float(self.grade_table(position))


FLAT_ROAD = RoadProfile(Curve1D([0.0, 1.0], [0.0, 0.0]))


@dataclass(frozen=True)
class StepOutputs:
    """Signals produced by one plant step, for rewards and logging."""

    fuel_rate: float            # g/s
    accel: float                # m/s^2, realized
    wheel_torque: float         # N·m applied at the wheel after saturation
    engine_torque: float        # N·m at the crankshaft
    engine_brake_torque: float  # N·m at the wheel, <= 0
    service_brake_torque: float  # N·m at the wheel, <= 0


def resistances(velocity: float, position: float, params: VehicleParams,
                road: RoadProfile) -> tuple[float, float, float]:
    """Rolling, aerodynamic, and grade forces (N) at the given operating point."""
    psi = road.grade(position)
    weight = params.mass * params.gravity
    r_roll = weight * params.rolling_coeff * math.cos(psi)
    r_aero = 0.5 * params.air_density * params.drag_coeff * params.frontal_area \
        * velocity * velocity
    r_grade = weight * math.sin(psi)
    return r_roll, r_aero, r_grade


def raw_engine_speed(velocity: float, gear: int, trans: TransmissionSpec,
                     params: VehicleParams) -> float:
    """Kinematic engine speed with no idle floor (used for feasibility checks)."""
    return velocity / params.wheel_radius * trans.overall_ratio(gear)


def engine_speed_for(velocity: float, gear: int, trans: TransmissionSpec,
                     params: VehicleParams, engine: EngineSpec) -> float:
    """Engine speed in a gear, floored at idle (torque-converter abstraction)
    and capped at the engine's maximum speed."""
    w = raw_engine_speed(velocity, gear, trans, params)
    return min(max(w, engine.idle_speed), engine.max_speed)


def gear_feasible(velocity: float, gear: int, spec: PowertrainSpec) -> bool:
    """A gear is engageable when its kinematic engine speed sits inside the
    engine envelope.  The current gear is always retained as a fallback."""
    w = raw_engine_speed(velocity, gear, spec.transmission, spec.vehicle)
    return spec.engine.idle_speed <= w <= spec.engine.max_speed


def fuel_rate(engine_speed: float, engine_torque: float,
              engine: EngineSpec) -> float:
    """Instantaneous fuel rate (g/s).

    Positive torque interpolates the map.  Non-positive torque is fuel-cut
    on overrun; at the idle floor with no load the engine burns its idle rate.
    """
    if engine_torque > 0.0:
        return engine.fuel_map.rate(engine_speed, engine_torque)
    if engine_speed <= engine.idle_speed + 1e-9:
        return engine.idle_fuel_rate
    return 0.0


def split_negative_torque(wheel_torque_request: float, engine_speed: float,
                          gear: int, spec: PowertrainSpec) -> tuple[float, float]:
    """Split a negative wheel-torque request between engine braking and the
    service brakes.

    Engine braking saturates first at the brake-torque curve reflected to the
    wheel; the remainder goes to the service brakes.  The two wheel-level
    contributions sum to the request exactly.  Negative torque is reflected
    through the driveline without an efficiency factor.
    """
    if wheel_torque_request >= 0.0:
        raise PlantError("negative-torque split called with non-negative request")
    ratio = spec.transmission.overall_ratio(gear)
    capacity = float(spec.engine.max_brake_torque_curve(engine_speed)) * ratio
    engine_part = max(wheel_torque_request, capacity)
    service_part = wheel_torque_request - engine_part
    return engine_part, service_part


def apply_gear_command(gear: int, gear_cmd_mixed: int, velocity: float,
                       spec: PowertrainSpec) -> int:
    """Resolve a (possibly summed) shift command into the applied gear.

    The command is clamped to one step, the candidate gear to [1, 10], and the
    candidate is walked back toward the current gear until its engine speed is
    feasible at the current vehicle speed.
    """
    cmd = max(-1, min(1, int(gear_cmd_mixed)))
    candidate = max(1, min(N_GEARS, gear + cmd))
    step_back = 1 if candidate < gear else -1
    while candidate != gear and not gear_feasible(velocity, candidate, spec):
        candidate += step_back
    return candidate


def power_reserve(velocity: float, gear: int, delivered_power: float,
                  spec: PowertrainSpec) -> tuple[float, float]:
    """Unused engine power in the current gear, and the best-gear maximum.

    The reserve is the full-throttle power at the current operating point
    minus the (non-negative) delivered power, floored at zero.  The maximum
    scans every engine-speed-feasible gear; the current gear is always
    included so the reserve never exceeds the maximum.
    """
    engine, trans, veh = spec.engine, spec.transmission, spec.vehicle

    def available(g: int) -> float:
        w = engine_speed_for(velocity, g, trans, veh, engine)
        return float(engine.max_torque_curve(w)) * w

    current = available(gear)
    best = current
    for g in range(1, N_GEARS + 1):
        if g != gear and gear_feasible(velocity, g, spec):
            best = max(best, available(g))
    reserve = max(0.0, current - max(0.0, delivered_power))
    return min(reserve, best), best


def step(state: PlantState, wheel_torque_request: float, gear_cmd_mixed: int,
         dt: float, spec: PowertrainSpec, road: RoadProfile = FLAT_ROAD
         ) -> tuple[PlantState, StepOutputs]:
    """Advance the plant one explicit-Euler step.

    The gear command is applied first; a positive torque request is saturated
    by the engine's maximum torque reflected to the wheel at the post-shift
    engine speed; a negative request is split between engine and service
    brakes.  Velocity is floored at zero and the realized acceleration is the
    actual velocity change over dt.
    """
    if not all(map(math.isfinite, (wheel_torque_request, dt, state.velocity,
                                   state.position))):
        raise PlantError("non-finite plant step input")
    if dt <= 0.0:
        raise PlantError("dt must be positive")

    veh, engine, trans = spec.vehicle, spec.engine, spec.transmission
    v = state.velocity
    gear = apply_gear_command(state.gear, gear_cmd_mixed, v, spec)
    w = engine_speed_for(v, gear, trans, veh, engine)
    ratio = trans.overall_ratio(gear)
    eff = trans.driveline_efficiency

    if wheel_torque_request >= 0.0:
        t_engine_req = wheel_torque_request / (ratio * eff)
        t_engine = min(t_engine_req, float(engine.max_torque_curve(w)))
        t_wheel = t_engine * ratio * eff
        engine_brake = 0.0
        service_brake = 0.0
    else:
        engine_brake, service_brake = split_negative_torque(
            wheel_torque_request, w, gear, spec)
        t_wheel = engine_brake + service_brake
        t_engine = engine_brake / ratio

    mf = fuel_rate(w, t_engine, engine)

    r_roll, r_aero, r_grade = resistances(v, state.position, veh, road)
    accel = (t_wheel / veh.wheel_radius - r_roll - r_aero - r_grade) \
        / veh.effective_mass(gear)
    v_next = max(0.0, v + accel * dt)
    accel_realized = (v_next - v) / dt

    next_state = replace(
        state,
        position=state.position + v * dt,
        velocity=v_next,
        acceleration=accel_realized,
        gear=gear,
        engine_speed=engine_speed_for(v_next, gear, trans, veh, engine),
        fuel_used=state.fuel_used + mf * dt,
        time=state.time + dt,
    )
    outputs = StepOutputs(fuel_rate=mf, accel=accel_realized,
                          wheel_torque=t_wheel, engine_torque=t_engine,
                          engine_brake_torque=engine_brake,
                          service_brake_torque=service_brake)
    return next_state, outputs


def initial_state(spec: PowertrainSpec, velocity: float = 0.0,
                  gear: int = 1) -> PlantState:
    """A vehicle at rest (or rolling) with no fuel consumed yet."""
    return PlantState(
        position=0.0, velocity=velocity, acceleration=0.0, gear=gear,
        engine_speed=engine_speed_for(velocity, gear, spec.transmission,
                                      spec.vehicle, spec.engine),
        fuel_used=0.0, time=0.0)
