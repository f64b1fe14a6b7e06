import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fslload.errors import DegenerateSeriesError, InvalidArgument, UndefinedEntropyError
from fslload.features import (
    FeatureConfig,
    decompose,
    dwe,
    effective_level,
    extract_features,
    feature_matrix,
    hurst_k,
    lwe,
    pca_fit,
    pca_transform,
    sample_entropy,
    sample_entropy_cap,
    skewness,
    stl_degrees,
    wcc,
    write_features_csv,
)
from fslload.series import Series
from fslload.wavelet import dwpt

from oracles import dct2_ortho_loop, haar_packet_energies, hurst_loop, sampen_counts_loop, skewness_loop


class TestWaveletDescriptors:
    def test_dwe_examples(self):
        np.testing.assert_allclose(dwe(dwpt([1, 1, 1, 1], 1, "haar")), [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(dwe(dwpt([1, -1, 1, -1], 1, "haar")), [0.0, 1.0], atol=1e-12)

    def test_dwe_zero_energy(self):
        with pytest.raises(DegenerateSeriesError):
            dwe(dwpt(np.zeros(8), 2, "haar"))

    def test_dwe_matches_haar_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.normal(size=64)
            e = np.array(haar_packet_energies(x, 3))
            np.testing.assert_allclose(dwe(dwpt(x, 3, "haar")), e / e.sum(), atol=1e-12)

    def test_lwe_examples(self):
        np.testing.assert_allclose(lwe([1.0]), [0.0])
        np.testing.assert_allclose(lwe([0.1, 0.9]), [-1.0, -0.0458], atol=1e-3)
        np.testing.assert_allclose(lwe([0.0]), [-12.0])
        with pytest.raises(InvalidArgument):
            lwe([-0.1])

    def test_wcc_examples(self):
        c = 0.7
        out = wcc(np.full(8, c))
        assert out[0] == pytest.approx(c * np.sqrt(8))
        np.testing.assert_allclose(out[1:], 0, atol=1e-10)
        np.testing.assert_array_equal(wcc(np.zeros(4)), np.zeros(4))
        with pytest.raises(InvalidArgument):
            wcc([])

    @given(st.lists(st.floats(-20, 5), min_size=1, max_size=32))
    @settings(max_examples=60, deadline=None)
    def test_wcc_is_orthonormal_dct(self, xs):
        v = np.asarray(xs)
        out = wcc(v)
        np.testing.assert_allclose(out, dct2_ortho_loop(xs), atol=1e-9)
        assert abs(np.linalg.norm(out) - np.linalg.norm(v)) < 1e-9


class TestDecomposition:
    def test_linear_ramp(self):
        _, t_deg = stl_degrees(np.arange(100.0), 12)
        assert t_deg == pytest.approx(1.0, abs=1e-6)

    def test_sinusoid(self):
        t = np.arange(96)
        s_deg, _ = stl_degrees(np.sin(2 * np.pi * t / 24), 24)
        assert s_deg >= 0.99

    def test_short_fallback(self):
        x = np.arange(10.0) + np.random.default_rng(0).normal(0, 0.1, 10)
        s_deg, t_deg = stl_degrees(x, 24)
        assert s_deg == 0.0
        assert 0.0 <= t_deg <= 1.0
        _, trend, seasonal, resid = decompose(x, 24)
        np.testing.assert_array_equal(seasonal, 0.0)
        # trend-only fit is least-squares linear
        np.testing.assert_allclose(trend, np.polyval(np.polyfit(np.arange(10), x, 1), np.arange(10)))

    def test_additive(self):
        x = np.random.default_rng(1).normal(size=120)
        core, trend, seasonal, resid = decompose(x, 12)
        # the centered average leaves half a window off each end
        np.testing.assert_array_equal(core, x[6:-6])
        np.testing.assert_allclose(trend + seasonal + resid, core, atol=1e-12)
        # seasonal component repeats with the period and sums to zero over one cycle
        np.testing.assert_allclose(seasonal[12:], seasonal[:-12], atol=1e-12)
        assert abs(seasonal[:12].sum()) < 1e-10

    def test_constant(self):
        assert stl_degrees(np.full(50, 3.0), 10) == (0.0, 0.0)

    @given(st.integers(0, 1000), st.integers(2, 30), st.integers(10, 200))
    @settings(max_examples=40, deadline=None)
    def test_bounds(self, seed, period, n):
        x = np.random.default_rng(seed).normal(size=n)
        s, t = stl_degrees(x, period)
        assert 0.0 <= s <= 1.0 and 0.0 <= t <= 1.0


class TestSkewness:
    def test_examples(self):
        assert skewness([1, 2, 3]) == pytest.approx(0.0, abs=1e-12)
        assert skewness([0, 0, 0, 0, 4]) == pytest.approx(1.5)
        assert skewness([5, 5, 5]) == 0.0

    def test_oracles(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            x = rng.gamma(2.0, size=rng.integers(3, 60))
            assert skewness(x) == pytest.approx(skewness_loop(list(x)), abs=1e-9)
            assert skewness(x) == pytest.approx(stats.skew(x, bias=True), abs=1e-9)


class TestSampleEntropy:
    def test_alternating_example(self):
        # comparable counts over i <= N-m-1 give N_m = N_m+1 = 2, so the value is 0
        x = [1, 2, 1, 2, 1, 2]
        assert sampen_counts_loop(x, 2, 0.1) == (2, 2)
        assert sample_entropy(x, 2, 0.1) == 0.0

    def test_constant(self):
        assert sample_entropy([5, 5, 5, 5, 5, 5]) == 0.0

    def test_undefined(self):
        with pytest.raises(UndefinedEntropyError) as info:
            sample_entropy([0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 2, 0.5)
        assert info.value.n_m == 0

    def test_strict_is_negation(self):
        x = np.sin(np.arange(60) / 3.0) + np.random.default_rng(0).normal(0, 0.2, 60)
        assert sample_entropy(x, strict=True) == pytest.approx(-sample_entropy(x))

    def test_short(self):
        with pytest.raises(InvalidArgument):
            sample_entropy([1.0, 2.0, 3.0], 2)

    def test_ternary_exhaustive(self):
        alphabet = (0.0, 1.0, 2.0)
        checked = 0
        for xs in __import__("itertools").product(alphabet, repeat=7):
            x = np.array(xs)
            if x.std() == 0:
                continue
            r = 0.2 * x.std()
            n_m, n_m1 = sampen_counts_loop(xs, 2, r)
            if n_m == 0 or n_m1 == 0:
                with pytest.raises(UndefinedEntropyError):
                    sample_entropy(x, 2)
            else:
                assert sample_entropy(x, 2) == pytest.approx(-np.log(n_m1 / n_m), abs=1e-12)
            checked += 1
        assert checked == 3**7 - 3

    def test_periodic_below_shuffled(self):
        t = np.arange(200)
        x = np.sin(2 * np.pi * t / 20)
        for seed in range(20):
            y = np.random.default_rng(seed).permutation(x)
            assert sample_entropy(x) <= sample_entropy(y)

    def test_cap(self):
        assert sample_entropy_cap(12, 2) == pytest.approx(np.log(45))


class TestHurst:
    def test_examples(self):
        assert hurst_k([1, -1, 1, -1]) == pytest.approx(0.0, abs=1e-12)
        assert hurst_k([0, 1, 2, 3]) == pytest.approx(0.2908, abs=1e-3)
        assert hurst_k([5, 5]) == 0.0

    def test_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            x = rng.normal(size=rng.integers(2, 80))
            assert hurst_k(x) == pytest.approx(hurst_loop(list(x)), abs=1e-9)


class TestScaleInvariance:
    @given(st.integers(0, 500), st.floats(0.01, 100), st.floats(-50, 50))
    @settings(max_examples=40, deadline=None)
    def test_affine(self, seed, a, c):
        x = np.random.default_rng(seed).normal(size=64)
        assert skewness(a * x + c) == pytest.approx(skewness(x), abs=1e-6)
        assert hurst_k(a * x + c) == pytest.approx(hurst_k(x), abs=1e-6)
        try:
            ref = sample_entropy(x)
        except UndefinedEntropyError:
            with pytest.raises(UndefinedEntropyError):
                sample_entropy(a * x + c)
        else:
            assert sample_entropy(a * x + c) == pytest.approx(ref, abs=1e-6)
        np.testing.assert_allclose(dwe(dwpt(a * x, 3, "haar")), dwe(dwpt(x, 3, "haar")), atol=1e-8)
        np.testing.assert_allclose(dwe(dwpt(-a * x, 3, "haar")), dwe(dwpt(x, 3, "haar")), atol=1e-8)


class TestPca:
    def test_line(self):
        t = np.linspace(-1, 1, 20)[:, None]
        X = t * np.array([[1.0, 2.0, -3.0]]) + np.array([4.0, 5.0, 6.0])
        model = pca_fit(X)
        assert model.n_components == 1
        assert model.explained_ratio[0] == pytest.approx(1.0, abs=1e-8)
        np.testing.assert_allclose(pca_transform(model, X.mean(axis=0)), 0.0, atol=1e-12)

    def test_needs_two_samples(self):
        with pytest.raises(InvalidArgument):
            pca_fit(np.ones((1, 3)))

    def test_drops_constant_columns(self):
        X = np.random.default_rng(0).normal(size=(10, 4))
        X[:, 2] = 7.0
        model = pca_fit(X)
        assert not model.keep[2]
        assert model.components.shape[1] == 3

    def test_against_sklearn(self):
        sk = pytest.importorskip("sklearn.decomposition")
        rng = np.random.default_rng(4)
        X = rng.normal(size=(40, 6)) @ rng.normal(size=(6, 6))
        model = pca_fit(X, 0.95)
        Z = (X - X.mean(0)) / X.std(0)
        ref = sk.PCA().fit(Z)
        np.testing.assert_allclose(model.explained_ratio, ref.explained_variance_ratio_[: model.n_components],
                                   atol=1e-10)
        cum = np.cumsum(ref.explained_variance_ratio_)
        assert model.n_components == int(np.searchsorted(cum, 0.95) + 1)
        np.testing.assert_allclose(model.components @ model.components.T, np.eye(model.n_components), atol=1e-8)
        # retained variance rule bounds the reconstruction error
        proj = pca_transform(model, X)
        resid = Z - proj @ model.components
        assert (resid**2).sum() <= 0.05 * (Z**2).sum() + 1e-9

    def test_cap_samples_minus_one(self):
        X = np.random.default_rng(2).normal(size=(3, 10))
        assert pca_fit(X, 0.999999).n_components <= 2


class TestExtract:
    def test_constant(self):
        v = extract_features(np.full(64, 2.0))
        assert v.skewness == 0.0 and v.sample_entropy == 0.0 and v.hurst_k == 0.0
        assert np.all(np.isfinite(v.as_array()))

    def test_deterministic(self):
        x = np.random.default_rng(0).normal(size=100)
        a, b = extract_features(x), extract_features(x.copy())
        assert a.as_array().tobytes() == b.as_array().tobytes()

    def test_order_and_names(self):
        x = np.random.default_rng(1).normal(size=96)
        v = extract_features(x, FeatureConfig(max_dwpt_level=3))
        n = 8
        arr = v.as_array()
        np.testing.assert_array_equal(arr[:n], v.wcc)
        np.testing.assert_array_equal(arr[n : 2 * n], v.lwe)
        np.testing.assert_array_equal(arr[2 * n : 3 * n], v.dwe)
        assert arr[3 * n :].tolist() == [v.s_deg, v.t_deg, v.skewness, v.sample_entropy, v.hurst_k]
        assert len(v.names()) == arr.size
        assert abs(v.dwe.sum() - 1) < 1e-8

    def test_effective_level(self):
        assert effective_level(1000, FeatureConfig(wavelet="db4")) == 5
        assert effective_level(12, FeatureConfig(wavelet="haar")) == 2
        assert effective_level(12, FeatureConfig(wavelet="db4")) == 0

    def test_entropy_sinusoid_vs_noise(self):
        t = np.arange(96)
        for seed in range(20):
            rng = np.random.default_rng(seed)
            s = extract_features(np.sin(2 * np.pi * t / 24 + rng.uniform(0, 6)))
            n = extract_features(rng.normal(size=96))
            assert n.sample_entropy > s.sample_entropy

    def test_undefined_entropy_uses_cap(self):
        v = extract_features(np.arange(16.0))
        assert not v.entropy_defined
        assert v.sample_entropy == pytest.approx(sample_entropy_cap(16, 2))

    def test_feature_matrix_scopes(self):
        rng = np.random.default_rng(3)
        vs = [extract_features(rng.normal(size=64)) for _ in range(10)]
        X, model = feature_matrix(vs)
        assert X.shape[0] == 10 and X.shape[1] == model.n_components + 5
        Xa, model_a = feature_matrix(vs, FeatureConfig(pca_scope="all"))
        assert Xa.shape == (10, model_a.n_components)
        with pytest.raises(InvalidArgument):
            feature_matrix(vs, FeatureConfig(pca_scope="bogus"))

    def test_csv(self, tmp_path):
        vs = [extract_features(np.random.default_rng(i).normal(size=32)) for i in range(2)]
        p = tmp_path / "f.csv"
        write_features_csv(p, ["a", "b"], vs)
        lines = p.read_text().splitlines()
        assert lines[0].split(",")[0] == "user_id" and len(lines) == 3
        assert float(lines[1].split(",")[1]) == vs[0].wcc[0]


def test_series_input():
    s = Series("u", np.random.default_rng(0).normal(size=50))
    assert skewness(s) == skewness(s.values)
