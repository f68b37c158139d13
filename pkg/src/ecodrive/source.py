"""OEM-style source controller: inverse-dynamics torque from the driver's
desired acceleration, and an instantaneous fuel-optimal gear policy.

Used three ways: as the standalone baseline controller, as the source policy
whose actions a residual agent corrects, and as extra state inputs for that
agent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .powertrain import (N_GEARS, PlantState, PowertrainSpec, RoadProfile,
                         FLAT_ROAD, engine_speed_for, fuel_rate, gear_feasible,
                         resistances)


@dataclass(frozen=True)
class SourceAction:
    torque: float    # N·m, wheel level
    gear_cmd: int    # -1, 0, +1

    def __post_init__(self):
        if self.gear_cmd not in (-1, 0, 1):
            raise ValueError("source gear command must be -1, 0, or +1")


def source_torque(a_des: float, state: PlantState, spec: PowertrainSpec,
                  road: RoadProfile = FLAT_ROAD) -> float:
    """Wheel torque that exactly inverts the plant's force balance for the
    desired acceleration in the current gear."""
    if not math.isfinite(a_des):
        raise ValueError("desired acceleration must be finite")
    veh = spec.vehicle
    r_roll, r_aero, r_grade = resistances(state.velocity, state.position,
                                          veh, road)
    force = veh.effective_mass(state.gear) * a_des + r_roll + r_aero + r_grade
    return veh.wheel_radius * force


def _candidate_cost(gear: int, torque: float, velocity: float,
                    spec: PowertrainSpec) -> float | None:
    """Fuel rate of delivering the wheel torque in a gear, or None when the
    gear cannot deliver it within the engine's torque capability."""
    engine, trans = spec.engine, spec.transmission
    w = engine_speed_for(velocity, gear, trans, spec.vehicle, engine)
    ratio = trans.overall_ratio(gear)
    if torque >= 0.0:
        t_engine = torque / (ratio * trans.driveline_efficiency)
        if t_engine > float(engine.max_torque_curve(w)):
            return None
    else:
        t_engine = torque / ratio  # engine braking handles what it can
    return fuel_rate(w, t_engine, engine)


def source_gear(state: PlantState, torque: float, spec: PowertrainSpec,
                shift_cost: float = 0.05) -> int:
    """Instantaneous fuel-optimal shift command in {-1, 0, +1}.

    Evaluates the fuel rate of delivering the requested wheel torque in each
    reachable gear and returns the command minimizing fuel + shift_cost*|u|.
    Candidates outside the engine-speed envelope or beyond the engine's
    torque capability are excluded; staying in gear is always feasible.
    Ties break toward holding the gear, then toward the upshift.
    """
    best_cmd = 0
    best_cost = None
    for cmd in (0, 1, -1):  # evaluation order implements the tie-break
        gear = state.gear + cmd
        if not 1 <= gear <= N_GEARS:
            continue
        if cmd != 0 and not gear_feasible(state.velocity, gear, spec):
            continue
        cost = _candidate_cost(gear, torque, state.velocity, spec)
        if cost is None:
            if cmd == 0:
                cost = float("inf")  # plant will saturate; still a valid hold
            else:
                continue
        cost += shift_cost * abs(cmd)
        if best_cost is None or cost < best_cost:
            best_cost = cost
            best_cmd = cmd
    return best_cmd


def source_action(a_des: float, state: PlantState, spec: PowertrainSpec,
                  road: RoadProfile = FLAT_ROAD,
                  shift_cost: float = 0.05) -> SourceAction:
    torque = source_torque(a_des, state, spec, road)
    return SourceAction(torque=torque,
                        gear_cmd=source_gear(state, torque, spec, shift_cost))
