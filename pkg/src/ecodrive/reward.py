"""Multi-objective step reward.

Five penalty terms, each normalized by its maximum so the weights compare
like with like: acceleration-tracking error, applied-torque magnitude, fuel
rate, gear-shift activity, and forfeited power reserve.  The reward is
always <= 0; a perfect step scores 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class RewardWeights:
    accel: float = 1.0
    torque: float = 0.1
    fuel: float = 0.5
    shift: float = 0.05
    reserve: float = 0.1

    def __post_init__(self):
        if any(w < 0.0 for w in (self.accel, self.torque, self.fuel,
                                 self.shift, self.reserve)):
            raise ValueError("reward weights must be non-negative")

    def scaled(self, c: float) -> "RewardWeights":
        return RewardWeights(self.accel * c, self.torque * c, self.fuel * c,
                             self.shift * c, self.reserve * c)


@dataclass(frozen=True)
class RewardNorms:
    accel_error_max: float  # m/s^2
    torque_max: float       # N·m (wheel level)
    fuel_rate_max: float    # g/s

    def __post_init__(self):
        if any(not (n > 0.0) for n in (self.accel_error_max, self.torque_max,
                                       self.fuel_rate_max)):
            raise ValueError("reward norms must be strictly positive")


def reward(a_des: float, a_next: float, torque: float, fuel_rate_next: float,
           gear_prev: int, gear_next: int, reserve_next: float,
           reserve_max_next: float, w: RewardWeights, norms: RewardNorms
           ) -> float:
    """Scalar reward for one transition.

    `a_des` is the driver request at the step start, `a_next` the realized
    acceleration after it; `torque` is the applied (post-saturation) wheel
    torque; the reserve pair comes from the post-step operating point.
    """
    values = (a_des, a_next, torque, fuel_rate_next, reserve_next,
              reserve_max_next)
    if not all(map(math.isfinite, values)):
        raise ValueError(f"non-finite reward input: {values}")
    if reserve_max_next <= 0.0:
        raise ValueError("maximum power reserve must be positive")
    return -(w.accel * abs(a_des - a_next) / norms.accel_error_max
             + w.torque * abs(torque) / norms.torque_max
             + w.fuel * fuel_rate_next / norms.fuel_rate_max
             + w.shift * abs(gear_next - gear_prev)
             + w.reserve * (reserve_max_next - reserve_next) / reserve_max_next)
