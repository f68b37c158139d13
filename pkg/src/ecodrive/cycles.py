"""Drive cycles: loading, validation, noise perturbation, and the bundled
synthetic urban cycle used by the tests.

A cycle file is a two-column CSV (time s, speed m/s) sampled at 1 s.  Loaders
for user-supplied standard cycles (FTP, HUDDS, Artemis, WLTP exports in the
same format) resample onto the 1 s grid when needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

BUNDLED_CYCLE = "urban_900s.csv"


class CycleError(ValueError):
    """Malformed or out-of-range drive-cycle data."""


@dataclass(frozen=True)
class DriveCycle:
    """Lead-vehicle speed profile on a uniform 1 s time grid."""

    name: str
    times: np.ndarray   # s, strictly increasing from 0
    speeds: np.ndarray  # m/s, >= 0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.speeds, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "speeds", v)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise CycleError("cycle needs matching time/speed arrays (>= 2 samples)")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0.0):
            raise CycleError("cycle times must increase strictly from 0")
        if np.any(v < 0.0):
            raise CycleError("cycle speeds must be non-negative")

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def speed_at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.speeds))

    def cumulative_positions(self) -> np.ndarray:
        """Trapezoidal running integral of speed at the sample times."""
        dt = np.diff(self.times)
        seg = 0.5 * (self.speeds[1:] + self.speeds[:-1]) * dt
        return np.concatenate([[0.0], np.cumsum(seg)])


def load_cycle(path: Path | str) -> DriveCycle:
    """Parse and validate a cycle CSV; resample to the 1 s grid if needed."""
    path = Path(path)
    times, speeds = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise CycleError(f"{path}:{lineno}: expected 'time,speed'")
        try:
            t, v = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise CycleError(f"{path}:{lineno}: malformed number") from exc
        if v < 0.0:
            raise CycleError(f"{path}:{lineno}: negative speed {v}")
        if times and t <= times[-1]:
            raise CycleError(f"{path}:{lineno}: non-increasing time {t}")
        times.append(t)
        speeds.append(v)
    if len(times) < 2:
        raise CycleError(f"{path}: cycle needs at least two samples")

    times_arr = np.asarray(times) - times[0]
    speeds_arr = np.asarray(speeds)
    if np.any(np.diff(times_arr) != 1.0):
        grid = np.arange(0.0, times_arr[-1] + 0.5, 1.0)
        speeds_arr = np.interp(grid, times_arr, speeds_arr)
        times_arr = grid
    return DriveCycle(name=path.stem, times=times_arr, speeds=speeds_arr)


@dataclass(frozen=True)
class NoisePolicy:
    """Piecewise-constant speed offset, re-drawn every resample period."""

    amplitude: float = 1.5      # m/s
    resample_period: float = 60.0  # s

    def __post_init__(self):
        if self.amplitude < 0.0:
            raise ValueError("noise amplitude must be >= 0")


def perturb_cycle(cycle: DriveCycle, noise: NoisePolicy,
                  rng: np.random.Generator) -> DriveCycle:
    """Add a per-block uniform speed offset, flooring speeds at zero.

    One independent offset is drawn per resample-period block, emulating
    randomized traffic around the same route.  The rng always advances by the
    number of blocks, even at zero amplitude.
    """
    n_blocks = int(np.ceil(cycle.duration / noise.resample_period))
    offsets = rng.uniform(-noise.amplitude, noise.amplitude, size=max(n_blocks, 1))
    block = np.minimum((cycle.times // noise.resample_period).astype(int),
                       len(offsets) - 1)
    speeds = np.maximum(cycle.speeds + offsets[block], 0.0)
    return DriveCycle(name=f"{cycle.name}+noise", times=cycle.times.copy(),
                      speeds=speeds)


def synthetic_urban_cycle(duration: float = 900.0) -> DriveCycle:
    """Deterministic stop-and-go urban cycle, 0-60 mph, 1 s samples.

    Eight micro-trips of increasing speed with idle periods between them;
    starts and ends at rest.  Acceleration stays within what a loaded
    commercial vehicle can follow.
    """
    # (segment duration s, end speed m/s) waypoints; linear in between.
    segments = [
        (10, 0.0),                                # initial idle
        (14, 9.0), (20, 9.0), (12, 0.0), (8, 0.0),      # trip 1: 20 mph
        (18, 13.0), (30, 13.0), (6, 9.0), (14, 11.5), (14, 0.0), (8, 0.0),
        (22, 16.0), (40, 16.0), (10, 12.0), (16, 16.5), (16, 0.0), (10, 0.0),
        (16, 11.0), (24, 11.0), (12, 0.0), (6, 0.0),    # trip 4: short hop
        (26, 20.0), (50, 20.0), (12, 15.0), (20, 21.0), (30, 21.0), (20, 0.0),
        (10, 0.0),
        (20, 13.5), (28, 13.5), (14, 0.0), (8, 0.0),    # trip 6
        (34, 26.8), (60, 26.8), (16, 20.0), (24, 24.0), (40, 24.0), (26, 0.0),
        (12, 0.0),                                       # trip 7: 60 mph leg
        (18, 12.0), (26, 12.0), (8, 8.0), (12, 10.0), (16, 0.0),
    ]
    times = [0.0]
    speeds = [0.0]
    for seg_dur, end_speed in segments:
        times.append(times[-1] + seg_dur)
        speeds.append(end_speed)
    total = times[-1]
    # close with idle to hit the requested duration exactly
    if total < duration:
        times.append(duration)
        speeds.append(0.0)
    grid = np.arange(0.0, times[-1] + 0.5, 1.0)
    v = np.interp(grid, times, speeds)
    keep = grid <= duration
    return DriveCycle(name="urban_synthetic", times=grid[keep], speeds=v[keep])


def bundled_cycle_path() -> Path:
    return Path(resources.files("ecodrive.data")) / BUNDLED_CYCLE


def write_cycle(cycle: DriveCycle, path: Path) -> None:
    rows = [f"{t:.1f},{v:.6f}" for t, v in zip(cycle.times, cycle.speeds)]
    Path(path).write_text("\n".join(rows) + "\n")


if __name__ == "__main__":  # regenerate the bundled cycle in place
    target = Path(__file__).parent / "data" / BUNDLED_CYCLE
    target.parent.mkdir(parents=True, exist_ok=True)
    write_cycle(synthetic_urban_cycle(), target)
    print(f"wrote {target}")
