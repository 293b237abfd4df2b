import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridlab.core import (CRate, CurrentProfile, Dataset, SimTrace, common_prefix, current_at,
                            dataset_to_csv, read_dataset_csv, read_profile_csv, rer, rmse,
                            scale_profile, step_grid, write_dataset_csv)
from hybridlab.exceptions import (AlignmentError, DegenerateProfileError, ParseError,
                                  ProfileRangeError)


def prof(samples):
    return CurrentProfile.from_samples(samples)


class TestCurrentProfile:
    def test_zero_order_hold(self):
        p = prof([(0, 5.0), (10, 0.0)])
        assert current_at(p, 3) == 5.0
        assert current_at(p, 10) == 0.0

    def test_hold_between_samples(self):
        assert current_at(prof([(0, 1.0), (2, 2.0), (4, 3.0)]), 2.5) == 2.0

    def test_right_continuous_at_sample(self):
        p = prof([(0, 1.0), (2, 2.0), (4, 3.0)])
        assert current_at(p, 2.0) == 2.0
        assert current_at(p, 2.0 - 1e-9) == 1.0

    @pytest.mark.parametrize("t", [-0.1, 4.0001])
    def test_out_of_range(self, t):
        with pytest.raises(ProfileRangeError):
            current_at(prof([(0, 1.0), (4, 3.0)]), t)

    @pytest.mark.parametrize("samples", [[(0, 1.0)], [(1, 1.0), (2, 1.0)], [(0, 1.0), (0, 2.0)],
                                         [(0, 1.0), (2, 1.0), (1, 1.0)]])
    def test_invalid_time_axis(self, samples):
        with pytest.raises(ValueError):
            prof(samples)

    def test_arrays_are_read_only(self):
        p = prof([(0, 1.0), (1, 2.0)])
        with pytest.raises(ValueError):
            p.currents[0] = 3.0

    def test_crate(self):
        assert CRate(2.0).amperes(2.5) == 5.0
        with pytest.raises(ValueError):
            CRate(-1.0)


class TestScaleProfile:
    def test_scale_factor(self):
        p = prof([(0, 2.5), (1, -1.0), (2, 0.5)])
        np.testing.assert_array_equal(scale_profile(p, 20.0).currents, p.currents * 8.0)

    def test_identity(self):
        p = prof([(0, 2.5), (1, -1.0)])
        assert scale_profile(p, 2.5) is p

    def test_sign_preserved(self):
        s = scale_profile(prof([(0, -1.0), (1, 2.0)]), 4.0)
        np.testing.assert_array_equal(s.currents, [-2.0, 4.0])
        np.testing.assert_array_equal(s.times, [0.0, 1.0])

    def test_degenerate(self):
        with pytest.raises(DegenerateProfileError):
            scale_profile(prof([(0, 0.0), (1, 0.0)]), 1.0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=20).filter(
        lambda c: max(abs(x) for x in c) > 1e-3), st.floats(0.01, 100))
    def test_round_trip(self, currents, target):
        p = CurrentProfile(np.arange(len(currents), dtype=float), np.array(currents))
        back = scale_profile(scale_profile(p, target), p.max_abs_current)
        np.testing.assert_allclose(back.currents, p.currents, rtol=1e-12, atol=1e-12 * p.max_abs_current)


class TestMetrics:
    def test_rmse_examples(self):
        assert rmse([4.0, 3.9], [4.0, 3.9]) == 0.0
        assert rmse([4.00, 3.90], [3.99, 3.92]) * 1e3 == pytest.approx(15.811388, abs=1e-5)
        assert rmse([4.0], [4.1]) == pytest.approx(0.1, abs=1e-15)

    @pytest.mark.parametrize("a,b", [([1.0], [1.0, 2.0]), ([], [])])
    def test_rmse_bad_lengths(self, a, b):
        with pytest.raises(ValueError):
            rmse(a, b)

    def test_rer_table_values(self):
        assert round(rer(20.34, 4.29), 2) == 78.91
        assert round(rer(157.58, 4.24), 2) == 97.31

    def test_rer_identities(self):
        assert rer(3.0, 3.0) == 0.0
        assert rer(3.0, 0.0) == 100.0
        with pytest.raises(ZeroDivisionError):
            rer(0.0, 1.0)

    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=30), st.randoms())
    def test_rmse_properties(self, pairs, rnd):
        a, b = map(np.array, zip(*pairs))
        r = rmse(a, b)
        assert r >= 0
        assert (r == 0) == bool(np.all(a == b))
        idx = list(range(len(a)))
        rnd.shuffle(idx)
        assert rmse(a[idx], b[idx]) == pytest.approx(r, rel=1e-12, abs=1e-300)

    @given(st.floats(1e-6, 1e3), st.floats(0, 1e3))
    def test_rer_formula(self, a, b):
        assert rer(a, b) == pytest.approx(100.0 * (1.0 - b / a), rel=1e-12, abs=1e-9)


class TestGrid:
    def test_step_grid(self):
        p = CurrentProfile.constant(1.0, 10.0)
        np.testing.assert_array_equal(step_grid(p, 1.0), np.arange(11.0))
        assert step_grid(p, 0.3)[-1] == pytest.approx(9.9)

    def test_common_prefix(self):
        ds = Dataset(np.arange(5.0), np.ones(5), np.full(5, 3.7))
        tr = SimTrace(np.arange(3.0), np.ones(3), np.full(3, 3.6), {"x": np.zeros(3)})
        assert common_prefix(tr, ds) == 3
        bad = SimTrace(np.array([0.0, 1.0, 2.5]), np.ones(3), np.full(3, 3.6), {"x": np.zeros(3)})
        with pytest.raises(AlignmentError, match="2.5"):
            common_prefix(bad, ds)


class TestDataset:
    def test_validation(self):
        with pytest.raises(ValueError):
            Dataset(np.array([0.0, 0.0]), np.ones(2), np.full(2, 3.7))
        with pytest.raises(ValueError):
            Dataset(np.arange(2.0), np.ones(2), np.array([3.7, 12.0]))
        with pytest.raises(ValueError):
            Dataset(np.arange(2.0), np.ones(2), np.full(2, 3.7), soh=np.array([1.0, 1.2]))

    def test_csv_round_trip(self, tmp_path):
        ds = Dataset(np.arange(4.0), np.array([1.0, 2.0, -1.0, 0.1]), np.array([4.0, 3.9, 3.95, 3.91]),
                     np.array([25.0, 25.1, 25.3, 25.2]), np.full(4, 0.9), label="x")
        path = tmp_path / "d.csv"
        write_dataset_csv(ds, path)
        back = read_dataset_csv(path)
        for name in ("time", "current", "voltage", "temperature", "soh"):
            np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))
        assert dataset_to_csv(back) == path.read_text()

    def test_parse_error_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time_s,current_a,voltage_v\n0,1,3.7\n1,abc,3.7\n")
        with pytest.raises(ParseError, match=r"bad\.csv:3:"):
            read_dataset_csv(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time_s,voltage_v\n0,3.7\n")
        with pytest.raises(ParseError, match="current_a"):
            read_profile_csv(path)

    def test_profile_from_dataset(self):
        ds = Dataset(np.arange(3.0), np.array([1.0, 2.0, 3.0]), np.full(3, 3.8))
        p = ds.to_profile()
        assert current_at(p, 1.5) == 2.0
        assert math.isclose(p.duration, 2.0)
