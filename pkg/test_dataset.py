"""
Tests for loading, preprocessing, splitting and regression stacking.
"""
import numpy as np
import pytest

from thermoloss.components.dataset import (
    CsvSchema,
    Segment,
    TimeSeriesDataset,
    baseline_ambient,
    build_regression,
    downsample,
    filter_delay_steps,
    load_csv,
    moving_average,
    resample_hold,
    save_dataset,
    segment,
    split_per_segment,
)
from thermoloss.utils.errors import DataError, InsufficientDataError, ParseError, SchemaError, SplitError


def make_dataset(X, U, dt=1.0, segments=()):
    X, U = np.atleast_2d(X), np.atleast_2d(U)
    return TimeSeriesDataset(
        tuple(f"P_{i}" for i in range(X.shape[0])),
        tuple(f"T_{i}" for i in range(U.shape[0])),
        X, U, dt, tuple(segments),
    )


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


# load_csv

def test_load_csv_with_explicit_schema(tmp_path):
    path = write(tmp_path / "run.csv", "t,P1,T1\n0,1.5,20\n1,1.5,21\n2,0,21.5\n")
    dataset = load_csv(path, CsvSchema(power_columns=("P1",), temp_columns=("T1",)))
    assert (dataset.n, dataset.m, dataset.K) == (1, 1, 3)
    assert dataset.dt == 1.0
    np.testing.assert_array_equal(dataset.U, [[20.0, 21.0, 21.5]])


def test_load_csv_infers_roles_from_prefixes(tmp_path):
    path = write(tmp_path / "run.csv", "t,P_Qh,P_Ql,T_Qh\n0,1,2,3\n0.5,1,2,3\n1.0,1,2,3\n")
    dataset = load_csv(path)
    assert dataset.power_channels == ("P_Qh", "P_Ql")
    assert dataset.temp_channels == ("T_Qh",)
    assert dataset.dt == pytest.approx(0.5)


def test_load_csv_missing_column_names_it(tmp_path):
    path = write(tmp_path / "run.csv", "t,P1\n0,1\n1,1\n")
    with pytest.raises(SchemaError, match="T1") as info:
        load_csv(path, CsvSchema(power_columns=("P1",), temp_columns=("T1",)))
    assert info.value.column == "T1"


def test_load_csv_reports_row_of_non_numeric_cell(tmp_path):
    path = write(tmp_path / "run.csv", "t,P_a,T_a\n0,1,20\n1,oops,21\n2,1,22\n")
    with pytest.raises(ParseError) as info:
        load_csv(path)
    assert info.value.row == 1
    assert info.value.column == "P_a"


def test_load_csv_needs_two_rows(tmp_path):
    path = write(tmp_path / "run.csv", "t,P_a,T_a\n0,1,20\n")
    with pytest.raises(InsufficientDataError):
        load_csv(path)


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(DataError) as info:
        load_csv(str(tmp_path / "absent.csv"))
    assert type(info.value) is DataError
    assert info.value.exit_code == 3
    assert "absent.csv" in str(info.value)


def test_load_csv_rejects_non_monotonic_rows(tmp_path):
    path = write(tmp_path / "run.csv", "t,P_a,T_a\n0,1,20\n1,1,21\n0.5,9,99\n2,1,22\n")
    dataset = load_csv(path)
    assert dataset.K == 3
    np.testing.assert_array_equal(dataset.U, [[20.0, 21.0, 22.0]])


def test_saved_dataset_reloads_bit_for_bit(tmp_path, calibration_dataset):
    data, segs = str(tmp_path / "d.csv"), str(tmp_path / "s.csv")
    save_dataset(calibration_dataset, data, segs)
    reloaded = load_csv(data, segments_path=segs)
    np.testing.assert_array_equal(reloaded.X, calibration_dataset.X)
    np.testing.assert_array_equal(reloaded.U, calibration_dataset.U)
    assert reloaded.segments == calibration_dataset.segments
    assert reloaded.dt == pytest.approx(calibration_dataset.dt)


# resample_hold / downsample

def test_resample_identity_factor():
    dataset = make_dataset([[1.0, 2.0]], [[3.0, 4.0]])
    assert resample_hold(dataset, 1) is dataset


def test_resample_by_ten():
    dataset = make_dataset(np.arange(5.0), np.arange(5.0) * 2, segments=[Segment(0, 5, "a")])
    resampled = resample_hold(dataset, 10)
    assert resampled.K == 50
    assert resampled.dt == pytest.approx(0.1)
    np.testing.assert_array_equal(resampled.X[0, :10], np.zeros(10))
    np.testing.assert_array_equal(resampled.X[0, 40:], np.full(10, 4.0))
    assert resampled.segments == (Segment(0, 50, "a"),)


def test_resample_holds_ramp():
    resampled = resample_hold(make_dataset([[0.0, 1.0, 2.0]], [[0.0, 1.0, 2.0]]), 3)
    np.testing.assert_array_equal(resampled.U[0], [0, 0, 0, 1, 1, 1, 2, 2, 2])


@pytest.mark.parametrize("factor", [0, -1, 1.5])
def test_resample_rejects_bad_factor(factor):
    with pytest.raises(ValueError):
        resample_hold(make_dataset([[0.0, 1.0]], [[0.0, 1.0]]), factor)


def test_downsample_inverts_resample():
    dataset = make_dataset(np.random.default_rng(0).normal(size=(2, 12)),
                           np.random.default_rng(1).normal(size=(3, 12)),
                           dt=0.5, segments=[Segment(0, 5, "a"), Segment(7, 12, "b")])
    restored = downsample(resample_hold(dataset, 4), 4)
    np.testing.assert_array_equal(restored.X, dataset.X)
    np.testing.assert_array_equal(restored.U, dataset.U)
    assert restored.dt == pytest.approx(dataset.dt)
    assert restored.segments == dataset.segments


# moving_average

def test_moving_average_preserves_constants():
    dataset = make_dataset(np.full((1, 20), 3.0), np.full((2, 20), -1.25))
    filtered = moving_average(dataset, 7.0)
    np.testing.assert_allclose(filtered.X, dataset.X, rtol=0, atol=1e-12)
    np.testing.assert_allclose(filtered.U, dataset.U, rtol=0, atol=1e-12)


def test_moving_average_trailing_window():
    step = [0, 0, 0, 0, 0, 10, 10, 10, 10, 10]
    filtered = moving_average(make_dataset([step], [step]), 5.0)
    np.testing.assert_allclose(filtered.U[0, 4:], [0, 2, 4, 6, 8, 10], atol=1e-12)


def test_moving_average_prefix_uses_available_samples():
    filtered = moving_average(make_dataset([[4.0, 2.0, 0.0, 0.0]], [[4.0, 2.0, 0.0, 0.0]]), 3.0)
    np.testing.assert_allclose(filtered.X[0], [4.0, 3.0, 2.0, 2.0 / 3.0])


def test_moving_average_single_sample_window_is_identity():
    dataset = make_dataset([[1.0, 5.0, 2.0]], [[0.0, 1.0, 0.0]])
    filtered = moving_average(dataset, 1.0)
    np.testing.assert_array_equal(filtered.U, dataset.U)


def test_moving_average_rejects_sub_sample_window():
    with pytest.raises(ValueError):
        moving_average(make_dataset([[1.0, 2.0]], [[1.0, 2.0]], dt=1.0), 0.5)


def test_moving_average_is_linear():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(2, 40)), rng.normal(size=(2, 40))
    s1, s2 = make_dataset(a, b), make_dataset(b, a)
    combined = moving_average(make_dataset(2.0 * a - 0.5 * b, 2.0 * b - 0.5 * a), 6.0)
    expected = 2.0 * moving_average(s1, 6.0).X - 0.5 * moving_average(s2, 6.0).X
    np.testing.assert_allclose(combined.X, expected, atol=1e-12)


def test_filter_delay_of_five_second_window():
    assert filter_delay_steps(5.0, 0.1) == 24
    assert filter_delay_steps(1.0, 1.0) == 0


# baseline_ambient

def test_baseline_shifts_temperatures_only():
    dataset = make_dataset([[2.0, 3.0]], [[308.15, 298.15]])
    shifted = baseline_ambient(dataset, 298.15)
    assert shifted.U[0, 0] == pytest.approx(10.0)
    assert shifted.U[0, 1] == 0.0
    np.testing.assert_array_equal(shifted.X, dataset.X)
    assert shifted.ambient == 298.15


def test_baseline_zero_and_inverse_pair():
    dataset = make_dataset([[2.0, 3.0]], [[1.0, -4.0]])
    assert baseline_ambient(dataset, 0.0) is dataset
    restored = baseline_ambient(baseline_ambient(dataset, 25.0), -25.0)
    np.testing.assert_allclose(restored.U, dataset.U, atol=1e-12)
    assert restored.ambient == 0.0


def test_baseline_rejects_non_finite():
    with pytest.raises(ValueError):
        baseline_ambient(make_dataset([[0.0, 0.0]], [[0.0, 0.0]]), float("nan"))


# split_per_segment

def test_split_single_segment():
    dataset = make_dataset(np.arange(10.0), np.arange(10.0), segments=[Segment(0, 10, "only")])
    train, test = split_per_segment(dataset, 0.8)
    assert (train.K, test.K) == (8, 2)
    np.testing.assert_array_equal(test.U[0], [8.0, 9.0])


def test_split_keeps_every_calibration_step(calibration_dataset):
    train, test = split_per_segment(calibration_dataset, 0.8)
    assert train.labels == test.labels == calibration_dataset.labels
    assert len(train.labels) == 4
    assert train.K + test.K == sum(len(s) for s in calibration_dataset.segments)


def test_split_rejects_short_segment():
    dataset = make_dataset(np.arange(12.0), np.arange(12.0),
                           segments=[Segment(0, 10, "long"), Segment(10, 12, "short")])
    with pytest.raises(SplitError) as info:
        split_per_segment(dataset, 0.8)
    assert info.value.segment == "short"


def test_segment_extraction(calibration_dataset):
    driver = segment(calibration_dataset, "driver")
    original = next(s for s in calibration_dataset.segments if s.label == "driver")
    assert driver.K == len(original)
    np.testing.assert_array_equal(driver.X, calibration_dataset.X[:, original.start:original.end])


# build_regression

def test_regression_single_transition():
    reg = build_regression(make_dataset([[1.0, 2.0]], [[3.0, 4.0], [5.0, 6.0]]))
    assert reg.Z.shape == (3, 1)
    assert reg.Uout.shape == (2, 1)
    np.testing.assert_array_equal(reg.Z[:, 0], [3.0, 5.0, 1.0])
    np.testing.assert_array_equal(reg.Uout[:, 0], [4.0, 6.0])


def test_regression_skips_segment_boundaries():
    dataset = make_dataset(np.arange(6.0), np.arange(6.0) * 10,
                           segments=[Segment(0, 3, "a"), Segment(3, 6, "b")])
    reg = build_regression(dataset)
    assert reg.columns == 4
    np.testing.assert_array_equal(reg.source_index, [0, 1, 3, 4])


def test_regression_shift_and_isolation(calibration_dataset):
    reg = build_regression(calibration_dataset)
    for j in [0, 17, reg.columns // 2, reg.columns - 1]:
        k = reg.source_index[j]
        np.testing.assert_array_equal(reg.Uout[:, j], calibration_dataset.U[:, k + 1])
        np.testing.assert_array_equal(reg.Z[:, j], np.concatenate([calibration_dataset.U[:, k],
                                                                   calibration_dataset.X[:, k]]))
    for k in reg.source_index:
        assert any(s.start <= k and k + 1 < s.end for s in calibration_dataset.segments)


def test_regression_exact_on_noiseless_data(calibration_dataset, oracle_model):
    reg = build_regression(calibration_dataset)
    np.testing.assert_allclose(reg.Uout, oracle_model.W @ reg.Z, rtol=0, atol=1e-12)


def test_dataset_rejects_single_sample():
    with pytest.raises(InsufficientDataError):
        make_dataset([[1.0]], [[1.0]])
