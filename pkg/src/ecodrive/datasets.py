"""Powertrain dataset files and the bundled synthetic diesel powertrain.

File formats (all plain decimal CSV, no locale formatting):

* ``fuel_map.csv``   — header row of engine-torque breakpoints (N·m); each
  body row is an engine-speed breakpoint (rpm) followed by fuel rates (g/s).
* ``torque_curve.csv`` — two columns per row: rpm, max engine torque (N·m).
* ``gears.csv``      — ten gear ratios (one per line), then the final-drive
  ratio, then the driveline efficiency.

The bundled dataset is synthetic: real engine maps and gear sets are OEM
confidential, so a documented stand-in with the same qualitative structure
(a bowl-shaped efficiency island, a torque plateau, a wide-span 10-speed
gearbox) is generated here and shipped under ``ecodrive/data``.  Any real
dataset in the same formats can be swapped in through the run config.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

import numpy as np

from .powertrain import (RADS_PER_RPM, Curve1D, EngineSpec, FuelMap, N_GEARS,
                         PowertrainSpec, TransmissionSpec, VehicleParams)

DATA_PACKAGE = "ecodrive.data"

# Synthetic engine constants (documented; see generate_dataset below).
IDLE_RPM = 600.0
MAX_RPM = 2400.0
PEAK_TORQUE = 1600.0          # N·m, plateau 1200-1600 rpm
FUEL_LHV = 42.8e3             # J per gram of diesel
ENGINE_BRAKE_BASE = 100.0     # N·m drag at zero speed
ENGINE_BRAKE_SLOPE = 180.0    # N·m additional drag at max speed


def _torque_curve_points() -> tuple[np.ndarray, np.ndarray]:
    rpm = np.array([600.0, 800.0, 1000.0, 1200.0, 1600.0,
                    1800.0, 2000.0, 2200.0, 2400.0])
    torque = np.array([950.0, 1150.0, 1350.0, 1600.0, 1600.0,
                       1430.0, 1230.0, 990.0, 700.0])
    return rpm, torque


def _friction_torque(rpm: np.ndarray) -> np.ndarray:
    # Rubbing/pumping losses grow quadratically with speed.
    return 70.0 + 45.0 * (rpm / MAX_RPM) ** 2


def _indicated_efficiency(rpm: np.ndarray, torque: np.ndarray,
                          torque_cap: np.ndarray) -> np.ndarray:
    # Bowl in speed, flat in load up to ~70% then derating toward full load.
    # Grid cells above the torque cap are unreachable in operation but must
    # stay valid and monotone, hence the efficiency floor.
    eta = 0.435 - 0.06 * ((rpm - 1400.0) / 1000.0) ** 2
    load = np.divide(torque, torque_cap, out=np.zeros_like(torque),
                     where=torque_cap > 0)
    derate = 1.0 - 0.10 * np.clip(load - 0.7, 0.0, None) ** 2 / 0.09
    return np.maximum(eta * derate, 0.12)


def _fuel_grid() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Willans-style fuel map: fuel power = (brake + friction torque) * speed
    / indicated efficiency.  Positive at zero load, monotone in torque, and
    the implied brake efficiency peaks near 0.40 around 1400 rpm / 70% load.
    """
    rpm = np.arange(600.0, 2401.0, 100.0)
    torque = np.arange(0.0, 1601.0, 100.0)
    curve_rpm, curve_tq = _torque_curve_points()
    cap = np.interp(rpm, curve_rpm, curve_tq)

    r, t = np.meshgrid(rpm, torque, indexing="ij")
    t_reachable = np.minimum(t, cap[:, None])  # clamp cells beyond capability
    eta = _indicated_efficiency(r, t_reachable, cap[:, None])
    omega = r * RADS_PER_RPM
    fuel_power = (t_reachable + _friction_torque(r)) * omega / eta
    rates = fuel_power / FUEL_LHV                          # g/s
    return rpm, torque, rates


def _gear_ratios() -> np.ndarray:
    # Geometric ladder from a deep crawler gear to an overdrive.
    return 12.0 * (0.75 / 12.0) ** (np.arange(N_GEARS) / (N_GEARS - 1))


FINAL_DRIVE = 3.9
DRIVELINE_EFFICIENCY = 0.96


def generate_dataset(out_dir: Path) -> None:
    """Write the synthetic powertrain CSVs (fuel map, torque curve, gears)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rpm, torque, rates = _fuel_grid()
    lines = [",".join(f"{t:.1f}" for t in torque)]
    for i, r in enumerate(rpm):
        lines.append(f"{r:.1f}," + ",".join(f"{x:.6f}" for x in rates[i]))
    (out_dir / "fuel_map.csv").write_text("\n".join(lines) + "\n")

    curve_rpm, curve_tq = _torque_curve_points()
    rows = [f"{r:.1f},{t:.1f}" for r, t in zip(curve_rpm, curve_tq)]
    (out_dir / "torque_curve.csv").write_text("\n".join(rows) + "\n")

    gears = [f"{g:.6f}" for g in _gear_ratios()]
    gears.append(f"{FINAL_DRIVE:.6f}")
    gears.append(f"{DRIVELINE_EFFICIENCY:.6f}")
    (out_dir / "gears.csv").write_text("\n".join(gears) + "\n")


def _parse_csv_rows(text: str, path: str) -> list[list[float]]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rows.append([float(tok) for tok in line.split(",")])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed numeric row") from exc
    return rows


def load_fuel_map(path: Path) -> FuelMap:
    rows = _parse_csv_rows(Path(path).read_text(), str(path))
    if len(rows) < 3:
        raise ValueError(f"{path}: fuel map needs a torque header and >= 2 speed rows")
    torques = np.array(rows[0])
    body = np.array(rows[1:])
    if body.shape[1] != torques.size + 1:
        raise ValueError(f"{path}: body rows must carry rpm plus one rate per torque")
    speeds = body[:, 0] * RADS_PER_RPM
    return FuelMap(speeds, torques, body[:, 1:])


def load_torque_curve(path: Path) -> Curve1D:
    rows = _parse_csv_rows(Path(path).read_text(), str(path))
    arr = np.array(rows)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{path}: torque curve needs two columns (rpm, N·m)")
    return Curve1D(arr[:, 0] * RADS_PER_RPM, arr[:, 1])


def load_gears(path: Path) -> TransmissionSpec:
    rows = _parse_csv_rows(Path(path).read_text(), str(path))
    values = [row[0] for row in rows]
    if len(values) != N_GEARS + 2:
        raise ValueError(f"{path}: expected {N_GEARS} ratios, final drive, efficiency")
    return TransmissionSpec(gear_ratios=np.array(values[:N_GEARS]),
                            final_drive_ratio=values[N_GEARS],
                            driveline_efficiency=values[N_GEARS + 1])


def engine_brake_curve(max_rpm: float = MAX_RPM) -> Curve1D:
    rpm = np.linspace(IDLE_RPM, max_rpm, 10)
    drag = -(ENGINE_BRAKE_BASE + ENGINE_BRAKE_SLOPE * (rpm / max_rpm) ** 2)
    return Curve1D(rpm * RADS_PER_RPM, drag)


def load_engine(data_dir: Path) -> EngineSpec:
    data_dir = Path(data_dir)
    fuel_map = load_fuel_map(data_dir / "fuel_map.csv")
    curve = load_torque_curve(data_dir / "torque_curve.csv")
    idle = fuel_map.speeds[0]
    top = fuel_map.speeds[-1]
    return EngineSpec(
        idle_speed=idle,
        max_speed=top,
        max_torque_curve=curve,
        max_brake_torque_curve=engine_brake_curve(top / RADS_PER_RPM),
        fuel_map=fuel_map,
        idle_fuel_rate=fuel_map.rate(idle, 0.0),
    )


def default_vehicle(mass: float = 9070.0, frontal_area: float = 7.71,
                    drag_coeff: float = 0.8, rolling_coeff: float = 0.015,
                    wheel_radius: float = 0.498, air_density: float = 1.2,
                    gravity: float = 9.81,
                    trans: TransmissionSpec | None = None) -> VehicleParams:
    """Commercial-vehicle chassis constants with per-gear rotating mass.

    The rotating-mass factor scales with the square of the overall ratio,
    from 1.6 in the crawler gear down to 1.1 in overdrive.
    """
    if trans is None:
        ratios = _gear_ratios() * FINAL_DRIVE
    else:
        ratios = trans.gear_ratios * trans.final_drive_ratio
    factor = 1.10 + 0.50 * (ratios / ratios[0]) ** 2
    return VehicleParams(mass=mass, rotating_mass_factor=factor,
                         frontal_area=frontal_area, drag_coeff=drag_coeff,
                         rolling_coeff=rolling_coeff, wheel_radius=wheel_radius,
                         air_density=air_density, gravity=gravity)


def bundled_data_dir() -> Path:
    return Path(resources.files(DATA_PACKAGE))


def load_powertrain(data_dir: Path | None = None, mass: float = 9070.0,
                    frontal_area: float = 7.71, drag_coeff: float = 0.8,
                    rolling_coeff: float = 0.015, wheel_radius: float = 0.498,
                    air_density: float = 1.2, gravity: float = 9.81
                    ) -> PowertrainSpec:
    """Assemble the full powertrain from a dataset directory (default: bundled)."""
    data_dir = bundled_data_dir() if data_dir is None else Path(data_dir)
    trans = load_gears(data_dir / "gears.csv")
    engine = load_engine(data_dir)
    vehicle = default_vehicle(mass=mass, frontal_area=frontal_area,
                              drag_coeff=drag_coeff, rolling_coeff=rolling_coeff,
                              wheel_radius=wheel_radius, air_density=air_density,
                              gravity=gravity, trans=trans)
    return PowertrainSpec(vehicle=vehicle, engine=engine, transmission=trans)


if __name__ == "__main__":  # regenerate the bundled dataset in place
    target = Path(__file__).parent / "data"
    generate_dataset(target)
    print(f"wrote synthetic powertrain dataset to {target}")
