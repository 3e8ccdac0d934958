"""
Tests for windowed similarity matrices and the tumor mask.
"""

import numpy as np
import pytest

from eloqnet.connectivity import (
    TimeSeries,
    TumorMask,
    WindowConfig,
    apply_tumor_mask,
    build_dynamic_connectivity,
    extract_windows,
    similarity_matrix,
)
from eloqnet.errors import (
    ConfigError,
    DegenerateRegionError,
    DimensionError,
    InputTooShortError,
    MaskError,
)


def _loop_similarity(window, epsilon):
    """Pearson correlation pair by pair, mapped through the kernel."""
    n = window.shape[1]
    out = np.ones((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                rho = np.corrcoef(window[:, i], window[:, j])[0, 1]
                out[i, j] = np.exp((rho - 1.0) / epsilon)
    return out


class TestTimeSeries:
    def test_requires_two_dimensions(self):
        with pytest.raises(DimensionError):
            TimeSeries(np.zeros(10))

    def test_requires_two_regions(self):
        with pytest.raises(ConfigError):
            TimeSeries(np.zeros((10, 1)))

    def test_rejects_non_finite(self):
        data = np.ones((10, 3))
        data[2, 1] = np.nan
        with pytest.raises(ConfigError):
            TimeSeries(data)


class TestWindowConfig:
    def test_default_window_count(self):
        assert WindowConfig().window_count(150) == 22

    def test_trailing_frames_are_dropped(self):
        cfg = WindowConfig(window_length=10, stride=4)
        assert cfg.window_count(21) == 3

    def test_too_short(self):
        with pytest.raises(InputTooShortError):
            WindowConfig().window_count(44)

    @pytest.mark.parametrize(
        "kwargs",
        [{"window_length": 1}, {"stride": 0}, {"epsilon": 0.5}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            WindowConfig(**kwargs)

    def test_whole_scan_gives_one_window(self):
        cfg = WindowConfig().whole_scan(150)
        assert cfg.window_count(150) == 1


class TestSimilarityMatrix:
    def test_identical_regions(self, rng):
        x = rng.normal(size=45)
        X = np.column_stack([x, x, rng.normal(size=45)])
        W = similarity_matrix(X)
        assert W[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_anti_correlated_regions(self, rng):
        x = rng.normal(size=45)
        W = similarity_matrix(np.column_stack([x, -x]), epsilon=1.0)
        assert W[0, 1] == pytest.approx(np.exp(-2.0), abs=1e-12)

    def test_matches_pairwise_pearson(self, rng):
        for epsilon in (1.0, 2.5):
            X = rng.normal(size=(45, 6))
            np.testing.assert_allclose(
                similarity_matrix(X, epsilon), _loop_similarity(X, epsilon), atol=1e-12
            )

    def test_structure(self, rng):
        epsilon = 1.5
        W = similarity_matrix(rng.normal(size=(30, 10)), epsilon)
        np.testing.assert_array_equal(W, W.T)
        np.testing.assert_array_equal(np.diag(W), np.ones(10))
        assert W.min() >= np.exp(-2.0 / epsilon) - 1e-15
        assert W.max() <= 1.0

    def test_larger_epsilon_never_lowers_similarity(self, rng):
        X = rng.normal(size=(45, 8))
        narrow = similarity_matrix(X, epsilon=1.0)
        wide = similarity_matrix(X, epsilon=10.0)
        assert np.all(wide >= narrow)
        off_diagonal = ~np.eye(8, dtype=bool)
        assert np.all(wide[off_diagonal] > narrow[off_diagonal])

    def test_degenerate_region_raises(self, rng):
        X = rng.normal(size=(20, 4))
        X[:, 2] = 3.0
        with pytest.raises(DegenerateRegionError) as exc:
            similarity_matrix(X)
        assert exc.value.region == 2

    def test_degenerate_region_masked_when_allowed(self, rng):
        X = rng.normal(size=(20, 4))
        X[:, 2] = 3.0
        W = similarity_matrix(X, allow_degenerate=True)
        assert np.all(W[2, :] == 0.0)
        assert np.all(W[:, 2] == 0.0)
        assert W[0, 0] == 1.0


class TestTumorMask:
    def test_zeroes_rows_and_columns(self, rng):
        W = similarity_matrix(rng.normal(size=(30, 6)))
        masked = apply_tumor_mask(W, TumorMask(frozenset({1, 4})))
        for i in (1, 4):
            assert np.all(masked[i, :] == 0.0)
            assert np.all(masked[:, i] == 0.0)
        assert masked[0, 0] == 1.0

    def test_masking_twice_changes_nothing(self, rng):
        mask = TumorMask(frozenset({0, 3}))
        once = apply_tumor_mask(similarity_matrix(rng.normal(size=(30, 6))), mask)
        np.testing.assert_array_equal(apply_tumor_mask(once, mask), once)

    def test_out_of_range(self):
        with pytest.raises(MaskError):
            apply_tumor_mask(np.eye(4), TumorMask(frozenset({4})))

    def test_negative_index(self):
        with pytest.raises(MaskError):
            TumorMask(frozenset({-1}))


class TestDynamicConnectivity:
    def test_windows_are_left_aligned(self):
        data = np.arange(40, dtype=float).reshape(20, 2)
        windows = extract_windows(TimeSeries(data), WindowConfig(10, 5))
        assert len(windows) == 3
        np.testing.assert_array_equal(windows[1], data[5:15])

    def test_each_window_matches_single_matrix(self, rng):
        ts = TimeSeries(rng.normal(size=(60, 5)))
        cfg = WindowConfig(window_length=20, stride=10)
        dyn = build_dynamic_connectivity(ts, cfg)
        assert dyn.matrices.shape == (5, 5, 5)
        for t in range(dyn.window_count):
            window = ts.data[t * 10 : t * 10 + 20]
            np.testing.assert_allclose(
                dyn.matrices[t], similarity_matrix(window), atol=1e-12
            )

    def test_masked_time_courses_have_no_influence(self, rng):
        data = rng.normal(size=(60, 6))
        mask = TumorMask(frozenset({0, 3}))
        cfg = WindowConfig(window_length=20, stride=10)
        before = build_dynamic_connectivity(TimeSeries(data), cfg, mask)

        changed = data.copy()
        changed[:, 0] = 1e6 * rng.normal(size=60)
        changed[:, 3] = 7.0
        after = build_dynamic_connectivity(TimeSeries(changed), cfg, mask)

        assert np.array_equal(before.matrices, after.matrices)
        assert np.all(after.matrices[:, 3, :] == 0.0)
        assert after.mask == mask

    def test_periodic_regions_give_identical_windows(self):
        # Period 9 divides the window length, so every window sees whole cycles
        frames = np.arange(120)
        phases = np.array([0.0, 0.4, 1.1, 2.0, 2.9])
        data = np.sin(2.0 * np.pi * frames[:, None] / 9.0 + phases[None, :])
        cfg = WindowConfig(window_length=45, stride=5)
        connectivity = build_dynamic_connectivity(TimeSeries(data), cfg)
        assert connectivity.window_count == 16
        for W in connectivity.matrices[1:]:
            np.testing.assert_allclose(W, connectivity.matrices[0], rtol=0, atol=1e-12)

    def test_mask_checked_against_region_count(self, rng):
        ts = TimeSeries(rng.normal(size=(60, 4)))
        with pytest.raises(MaskError):
            build_dynamic_connectivity(ts, WindowConfig(20, 10), TumorMask({9}))

    def test_degenerate_window_reports_index(self, rng):
        data = rng.normal(size=(60, 4))
        data[30:, 1] = 0.0
        with pytest.raises(DegenerateRegionError) as exc:
            build_dynamic_connectivity(TimeSeries(data), WindowConfig(20, 10))
        assert exc.value.window == 3
