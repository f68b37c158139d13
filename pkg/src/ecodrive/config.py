"""Run configuration: one flat key = value text file drives everything.

Defaults reproduce the documented setup for the bundled synthetic vehicle;
any key can be overridden in the file or programmatically.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

AGENT_KINDS = ("baseline", "rl", "rpl")


@dataclass
class RunConfig:
    # run identity
    agent: str = "baseline"
    seed: int = 0
    cycle: str = ""              # cycle CSV path; empty = bundled urban cycle
    data_dir: str = ""           # powertrain dataset dir; empty = bundled

    # vehicle model
    mass: float = 9070.0         # kg
    frontal_area: float = 7.71   # m^2
    drag_coeff: float = 0.8
    rolling_coeff: float = 0.015
    wheel_radius: float = 0.498  # m
    air_density: float = 1.2     # kg/m^3
    gravity: float = 9.81        # m/s^2
    dt: float = 0.2              # s

    # driver model
    a_max: float = 2.0           # m/s^2: IDM accel limit and accel-error norm
    headway_time: float = 3.0    # s
    desired_speed: float = 30.0  # m/s
    comfort_decel: float = 1.5   # m/s^2
    accel_exponent: float = 4.0
    jam_distance: float = 4.0    # m
    max_decel: float = 3.0       # m/s^2
    shift_cost: float = 0.05     # g/s equivalent per shift in the source policy

    # reward
    w_accel: float = 1.0
    w_torque: float = 0.1
    w_fuel: float = 0.5
    w_shift: float = 0.05
    w_reserve: float = 0.1
    torque_term: str = "applied"  # applied | commanded wheel torque in reward

    # learner
    actor_lr: float = 5e-5
    critic_lr: float = 1e-4
    gamma: float = 0.99
    lam: float = 0.90
    beta: float = 0.1            # critic-loss gate threshold (residual agent)
    retrace_steps: int = 15
    eps_mu: float = 0.1
    eps_sigma: float = 0.001
    eps_disc: float = 0.1
    eps_e_step: float = 0.1
    batch_size: int = 3072
    action_samples: int = 40
    retrace_torque_samples: int = 8
    learn_every: int = 250       # environment steps per learning trigger
    critic_updates: int = 1
    policy_updates: int = 1
    mstep_iterations: int = 5
    target_refresh: int = 200    # critic updates per hard target refresh
    buffer_capacity: int = 1048576
    gate_ema_decay: float = 0.99

    # networks
    hidden_units: int = 256
    hidden_layers: int = 3
    activation: str = "elu"
    residual_torque_frac: float = 0.5  # residual head range / full range
    sigma_min_frac: float = 0.01
    sigma_max_frac: float = 0.5

    # protocol
    train_cycles: int = 300
    eval_reps: int = 25
    noise_amplitude: float = 1.5  # m/s
    noise_period: float = 60.0    # s
    checkpoint_every: int = 25    # cycles
    fuel_density: float = 0.85    # g/mL, for MPG conversion

    def __post_init__(self):
        if self.agent not in AGENT_KINDS:
            raise ValueError(f"agent must be one of {AGENT_KINDS}")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.torque_term not in ("applied", "commanded"):
            raise ValueError("torque_term must be 'applied' or 'commanded'")

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def _convert(raw: str, target_type: type):
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"bad boolean {raw!r}")
    return target_type(raw)


def load_config(path: Path | str, **overrides) -> RunConfig:
    """Parse a flat key = value file; later keys win, then overrides."""
    fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    types = {name: type(getattr(RunConfig(), name)) for name in fields}
    values: dict = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in fields:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _convert(raw, types[key])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad value for {key}") from exc
    values.update(overrides)
    return RunConfig(**values)


def save_config(cfg: RunConfig, path: Path | str) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}"
             for f in dataclasses.fields(RunConfig)]
    Path(path).write_text("\n".join(lines) + "\n")
