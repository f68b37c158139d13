"""Drive-cycle loading, validation, perturbation, and the bundled cycle."""

import numpy as np
import pytest
import scipy.stats

from ecodrive.cycles import (CycleError, DriveCycle, NoisePolicy,
                             bundled_cycle_path, load_cycle, perturb_cycle,
                             synthetic_urban_cycle, write_cycle)


class TestLoadCycle:
    def test_two_line_cycle(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("0,0\n1,1\n")
        cycle = load_cycle(p)
        assert cycle.times.size == 2
        assert cycle.speeds[1] == 1.0

    def test_negative_speed_names_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0,0\n1,2\n2,-1\n")
        with pytest.raises(CycleError, match="3"):
            load_cycle(p)

    def test_non_monotone_time_names_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0,0\n2,2\n1,3\n")
        with pytest.raises(CycleError, match="3"):
            load_cycle(p)

    def test_malformed_number_names_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0,0\nx,2\n")
        with pytest.raises(CycleError, match="2"):
            load_cycle(p)

    def test_resamples_coarse_grid(self, tmp_path):
        p = tmp_path / "coarse.csv"
        p.write_text("0,0\n2,4\n4,0\n")
        cycle = load_cycle(p)
        assert np.array_equal(cycle.times, np.arange(5.0))
        assert cycle.speeds[1] == pytest.approx(2.0)

    def test_bundled_cycle_stats(self):
        # stats frozen at dataset creation
        cycle = load_cycle(bundled_cycle_path())
        assert cycle.duration == 900.0
        assert cycle.speeds.min() == 0.0
        assert cycle.speeds[0] == 0.0 and cycle.speeds[-1] == 0.0
        assert cycle.speeds.max() == pytest.approx(26.8)   # 60 mph
        assert cycle.speeds.mean() == pytest.approx(12.24, abs=0.01)
        assert cycle.cumulative_positions()[-1] == pytest.approx(11031.5,
                                                                 abs=0.5)
        regen = synthetic_urban_cycle()
        assert np.array_equal(regen.speeds, cycle.speeds)


class TestValidation:
    def test_speeds_non_negative(self):
        with pytest.raises(CycleError):
            DriveCycle("x", [0.0, 1.0], [0.0, -0.1])

    def test_times_strictly_increasing_from_zero(self):
        with pytest.raises(CycleError):
            DriveCycle("x", [1.0, 2.0], [0.0, 0.0])
        with pytest.raises(CycleError):
            DriveCycle("x", [0.0, 0.0], [0.0, 0.0])


class TestPerturb:
    def test_zero_amplitude_identity(self):
        cycle = synthetic_urban_cycle()
        noisy = perturb_cycle(cycle, NoisePolicy(amplitude=0.0),
                              np.random.default_rng(0))
        assert np.array_equal(noisy.speeds, cycle.speeds)

    def test_one_draw_per_block(self):
        cycle = DriveCycle("c", np.arange(0.0, 121.0), np.full(121, 10.0))
        rng = np.random.default_rng(1)
        noisy = perturb_cycle(cycle, NoisePolicy(amplitude=1.5,
                                                 resample_period=60.0), rng)
        offsets = noisy.speeds - cycle.speeds
        # exactly two blocks: [0, 60) and [60, 120]; constant within each
        assert np.unique(offsets[:60]).size == 1
        assert np.unique(offsets[61:]).size == 1
        assert offsets[0] != offsets[-1]

    def test_floored_at_zero(self):
        cycle = DriveCycle("c", np.arange(0.0, 61.0), np.full(61, 0.5))
        rng = np.random.default_rng(2)
        for _ in range(20):
            noisy = perturb_cycle(cycle, NoisePolicy(amplitude=2.0), rng)
            assert np.all(noisy.speeds >= 0.0)

    def test_offset_distribution_uniform(self):
        # KS oracle over 10^4 independent first-block offsets
        cycle = DriveCycle("c", np.arange(0.0, 61.0), np.full(61, 50.0))
        rng = np.random.default_rng(3)
        amp = 1.5
        offsets = np.array([
            perturb_cycle(cycle, NoisePolicy(amplitude=amp), rng).speeds[0]
            - 50.0 for _ in range(10_000)])
        result = scipy.stats.kstest(offsets,
                                    scipy.stats.uniform(-amp, 2 * amp).cdf)
        assert result.pvalue > 0.001


class TestRoundTrip:
    def test_write_then_load(self, tmp_path):
        cycle = synthetic_urban_cycle()
        p = tmp_path / "rt.csv"
        write_cycle(cycle, p)
        again = load_cycle(p)
        assert np.allclose(again.speeds, cycle.speeds, atol=1e-6)
        assert np.array_equal(again.times, cycle.times)
