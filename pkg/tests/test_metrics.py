import json
import statistics
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fslload.errors import InvalidArgument
from fslload.metrics import EvalReport, mrmse, rmse, trim_outliers

vals = st.lists(st.floats(0, 1e3, allow_subnormal=False), min_size=2, max_size=40)


class TestRmse:
    def test_examples(self):
        assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
        assert rmse([1, 2], [2, 3]) == 1.0
        assert rmse([1, 2], [2, 3], "literal") == 1.0
        assert rmse([0, 0], [3, -3]) == 3.0
        assert rmse([0, 0], [3, -3], "literal") == 3.0

    def test_conventions_differ(self):
        t, p = [0.0, 0.0], [1.0, 3.0]
        assert rmse(t, p) == pytest.approx(np.sqrt(5.0))
        assert rmse(t, p, "literal") == pytest.approx(2.0)

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            rmse([1, 2], [1])
        with pytest.raises(InvalidArgument):
            rmse([], [])
        with pytest.raises(InvalidArgument):
            rmse([1], [1], "mape")

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30), st.floats(-100, 100))
    @settings(max_examples=80, deadline=None)
    def test_properties(self, xs, c):
        x = np.asarray(xs)
        y = x[::-1].copy()
        assert rmse(x, x) == 0.0
        assert rmse(x, y) == rmse(y, x)
        for conv in ("rmse", "literal"):
            assert rmse(x, x + c, conv) == pytest.approx(abs(c), abs=1e-9)


class TestMrmse:
    def test_examples(self):
        assert mrmse([0.7]) == 0.7
        assert mrmse([1, 1, 1]) == 1.0
        assert mrmse([0.5, 1.5]) == 1.0
        with pytest.raises(InvalidArgument):
            mrmse([])

    @given(vals, st.integers(0, 100))
    @settings(max_examples=50, deadline=None)
    def test_permutation(self, xs, seed):
        perm = np.random.default_rng(seed).permutation(xs)
        assert mrmse(perm) == pytest.approx(mrmse(xs), rel=1e-12, abs=1e-12)


class TestTrim:
    def test_outlier(self):
        assert trim_outliers([1.0] * 9 + [200.0]) == (1.0, 0.0, 1)

    def test_equal(self):
        assert trim_outliers([2.0] * 5) == (2.0, 0.0, 0)

    def test_nothing_removed(self):
        m, s, removed = trim_outliers([1.0, 2.0, 3.0])
        assert removed == 0 and m == 2.0 and s == pytest.approx(np.std([1, 2, 3]))

    def test_constant_std_is_exact(self):
        # a rounded mean would leave a ~1e-14 std here
        assert trim_outliers([85.67108560294017] * 3) == (85.67108560294017, 0.0, 0)

    def test_tie_at_two_std_is_kept(self):
        # four equal values and one other: the odd one sits at exactly z = 2
        assert trim_outliers([1.5] * 4 + [872.728515625])[2] == 0

    def test_non_finite(self):
        with pytest.raises(InvalidArgument):
            trim_outliers([1.0, float("nan")])

    def test_too_short(self):
        with pytest.raises(InvalidArgument):
            trim_outliers([1.0])

    @given(vals)
    @settings(max_examples=100, deadline=None)
    def test_oracle_and_std(self, xs):
        # exact rational bounds: |v - mu| <= 2 s  <=>  (v - mu)^2 <= 4 var
        exact = [Fraction(v) for v in xs]
        mu, var = statistics.mean(exact), statistics.pvariance(exact)
        kept = [v for v, q in zip(xs, exact) if (q - mu) ** 2 <= 4 * var]
        s = float(var) ** 0.5
        m, sd, removed = trim_outliers(xs)
        assert removed == len(xs) - len(kept)
        assert m == pytest.approx(np.mean(kept), rel=1e-12, abs=1e-12)
        assert sd <= s * (1 + 1e-9) + 1e-300

    @given(st.lists(st.floats(0, 10), min_size=5, max_size=20), st.floats(0, 100), st.floats(0, 100))
    @settings(max_examples=80, deadline=None)
    def test_moved_entry_stays_removed(self, xs, d1, d2):
        # once an entry is trimmed, moving it further from the rest keeps it trimmed
        near, far = sorted((d1, d2))
        def removed(d):
            v = np.array(list(xs) + [10.0 + d])
            mu, s = v.mean(), v.std()
            return not (mu - 2 * s <= v[-1] <= mu + 2 * s)
        if removed(near):
            assert removed(far)
            assert trim_outliers(list(xs) + [10.0 + far])[2] >= 1

    def test_total_count_not_monotone(self):
        # pushing one outlier further inflates the spread and can readmit others
        xs = [0.0] * 18 + [5.0, 6.0]
        assert trim_outliers(xs)[2] == 2
        assert trim_outliers(xs[:-1] + [600.0])[2] == 1

    def test_subnormal_inputs(self):
        assert trim_outliers([0.0, 2.2250738585e-313])[2] == 0


class TestReport:
    def test_fields(self):
        r = EvalReport.from_values([1.0] * 9 + [200.0])
        assert r.mrmse == pytest.approx(20.9)
        assert (r.trimmed_mrmse, r.trimmed_std, r.removed_count) == (1.0, 0.0, 1)
        assert r.cell() == "1.000±0.000"
        data = json.loads(r.to_json())
        assert data["convention"] == "rmse" and data["removed_count"] == 1

    def test_single(self):
        r = EvalReport.from_values([0.5], "literal")
        assert r.trimmed_mrmse == 0.5 and r.convention == "literal"
