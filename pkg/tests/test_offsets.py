"""Delay calibration: exact solver oracle plus simulator round trips."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spadkit import CalibrationError, DataError, PhotonStream, SensorConfig
from spadkit.coincidence import build_histogram
from spadkit.offsets import (
    DelayVector,
    OffsetMeasurement,
    apply_delays,
    invalid_fraction,
    measure_offsets,
    solve_delays,
)
from spadkit.peakfit import fit_gaussian
from spadkit.simulator import DcrProfile, SimConfig, simulate


def measurements_from(offs, valid=None):
    if valid is None:
        valid = [True] * len(offs)
    return [OffsetMeasurement(i, i + 1, off if ok else float("nan"),
                              1.0 if ok else float("inf"), ok)
            for i, (off, ok) in enumerate(zip(offs, valid))]


def dense_solution(offs):
    """Direct solve of the chain + mean-zero constraint as a full matrix."""
    n = len(offs) + 1
    a = np.zeros((n, n))
    b = np.zeros(n)
    for k, off in enumerate(offs):
        a[k, k] = 1.0
        a[k, k + 1] = -1.0
        b[k] = off
    a[n - 1, :] = 1.0
    return np.linalg.solve(a, b)


@pytest.fixture(scope="module")
def calibrated_scenario():
    rng = np.random.default_rng(42)
    delays = rng.uniform(-5000.0, 5000.0, SensorConfig().num_pixels)
    # 0.012 neighbor CT on 20k counts/pixel puts ~3 ps on each step, so
    # the accumulated random walk stays well under the 50 ps RMS bound
    # even for an unlucky seed (bridge RMS has ~90% spread).
    config = SimConfig(
        seed=99,
        duration_s=20.0,
        dcr=DcrProfile(base_cps=1000.0),
        ct_profile=((1, 0.012),),
        delays_ps=tuple(delays),
    )
    stream, _truth = simulate(config)
    return stream, delays - delays.mean()


# ---------------------------------------------------------------------------
# solver

def test_forward_substitution_satisfies_every_equation():
    offs = [100.0, -50.0, 20.0]
    vec = solve_delays(measurements_from(offs))
    d = vec.delays_ps
    assert len(d) == 4
    for i, off in enumerate(offs):
        assert d[i] - d[i + 1] == pytest.approx(off, abs=1e-9)
    assert abs(d.mean()) <= 1e-9
    # residual against the explicit matrix form
    n = len(d)
    a = np.zeros((n, n))
    b = np.zeros(n)
    for k, off in enumerate(offs):
        a[k, k], a[k, k + 1], b[k] = 1.0, -1.0, off
    a[n - 1, :] = 1.0
    assert np.max(np.abs(a @ d - b)) < 1e-9


def test_zero_offsets_give_zero_delays():
    vec = solve_delays(measurements_from([0.0] * 7))
    np.testing.assert_allclose(vec.delays_ps, 0.0, atol=1e-12)
    assert vec.gap_pixels == ()
    assert not vec.degraded


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 16).flatmap(
    lambda n: st.lists(st.floats(-1e4, 1e4), min_size=n - 1, max_size=n - 1)))
def test_property_matches_dense_solver(offs):
    vec = solve_delays(measurements_from(offs))
    np.testing.assert_allclose(vec.delays_ps, dense_solution(offs), atol=1e-9)


def test_gaps_join_segments_with_zero_offset():
    offs = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0]
    valid = [True] * 9
    valid[3] = valid[6] = False
    vec = solve_delays(measurements_from(offs, valid))
    d = vec.delays_ps
    assert vec.gap_pixels == ((3, 4), (6, 7))
    assert d[3] == pytest.approx(d[4], abs=1e-9)
    assert d[6] == pytest.approx(d[7], abs=1e-9)
    for i, off in enumerate(offs):
        if valid[i]:
            assert d[i] - d[i + 1] == pytest.approx(off, abs=1e-9)
    assert vec.degraded  # 2 of 9 pairs > 20%


def test_missing_pairs_are_gaps_too():
    ms = [OffsetMeasurement(0, 1, 5.0, 1.0, True),
          OffsetMeasurement(3, 4, -5.0, 1.0, True)]
    vec = solve_delays(ms)
    assert vec.gap_pixels == ((1, 2), (2, 3))
    assert len(vec) == 5
    assert vec.provenance == (ms[0], ms[1])


def test_no_valid_measurements_is_an_error():
    with pytest.raises(CalibrationError):
        solve_delays(measurements_from([1.0, 2.0], valid=[False, False]))
    with pytest.raises(CalibrationError):
        solve_delays([])


def test_duplicate_and_non_adjacent_rejected():
    m = OffsetMeasurement(2, 3, 1.0, 0.1, True)
    with pytest.raises(ValueError):
        solve_delays([m, m])
    with pytest.raises(ValueError):
        OffsetMeasurement(2, 4, 1.0, 0.1, True)


def test_delay_vector_must_be_mean_zero():
    with pytest.raises(ValueError):
        DelayVector(np.array([1.0, 2.0, 3.0]))
    vec = DelayVector.centered(np.array([1.0, 2.0, 3.0]))
    assert abs(vec.delays_ps.mean()) <= 1e-9


def test_delay_vector_json_roundtrip(tmp_path):
    vec = solve_delays(measurements_from([100.0, -50.0, 20.0]))
    path = tmp_path / "delays.json"
    vec.save(str(path))
    back = DelayVector.load(str(path))
    np.testing.assert_array_equal(back.delays_ps, vec.delays_ps)
    assert back.gap_pixels == vec.gap_pixels
    assert back.provenance == vec.provenance
    assert back.degraded == vec.degraded
    with pytest.raises(DataError):
        DelayVector.from_json_dict({"delays_ps": {"0": 1.0, "2": -1.0}})


# ---------------------------------------------------------------------------
# measurement on simulated streams

def test_measure_recovers_injected_offsets(calibrated_scenario):
    stream, truth = calibrated_scenario
    ms = measure_offsets(stream)
    assert len(ms) == len(truth) - 1
    assert invalid_fraction(ms) == 0.0
    pulls = np.array([(m.off_ps - (truth[m.pixel_low] - truth[m.pixel_high]))
                      / m.sigma_ps for m in ms])
    assert np.mean(np.abs(pulls) <= 3.0) >= 0.97
    assert np.max(np.abs(pulls)) <= 5.0

    vec = solve_delays(ms)
    rms = float(np.sqrt(np.mean((vec.delays_ps - truth) ** 2)))
    assert rms <= 50.0
    assert not vec.degraded


def test_correction_closes_the_loop(calibrated_scenario):
    stream, truth = calibrated_scenario
    vec = solve_delays(measure_offsets(stream))
    corrected = apply_delays(stream, vec)

    # peaks must land within +-50 ps of dt = 0 after correction
    redo = measure_offsets(corrected)
    offs = np.array([m.off_ps for m in redo if m.valid])
    assert len(offs) == len(redo)
    assert np.max(np.abs(offs)) <= 50.0

    # running the calibration again finds only residuals
    again = solve_delays(redo)
    rms = float(np.sqrt(np.mean(again.delays_ps ** 2)))
    assert rms <= 50.0


def test_histograms_agree_with_delays_parameter(calibrated_scenario):
    stream, _truth = calibrated_scenario
    vec = solve_delays(measure_offsets(stream))
    corrected = apply_delays(stream, vec)
    for pair in ((5, 6), (100, 101), (200, 201)):
        direct = build_histogram(stream, pair, 20_000.0, 50.0,
                                 delays=vec.delays_ps)
        via_apply = build_histogram(corrected, pair, 20_000.0, 50.0)
        np.testing.assert_array_equal(via_apply.counts, direct.counts)


def test_dead_pixel_invalidates_its_two_pairs(calibrated_scenario):
    stream, _truth = calibrated_scenario
    keep = stream.pixel != 77
    filtered = PhotonStream(
        header=stream.header,
        cycle_index=stream.cycle_index[keep],
        pixel=stream.pixel[keep],
        time_ps=stream.time_ps[keep],
        total_cycles=stream.total_cycles)
    ms = measure_offsets(filtered)
    bad = {(m.pixel_low, m.pixel_high) for m in ms if not m.valid}
    assert bad == {(76, 77), (77, 78)}
    vec = solve_delays(ms)
    assert vec.gap_pixels == ((76, 77), (77, 78))
    assert not vec.degraded


def test_dark_only_stream_has_no_valid_pairs():
    config = SimConfig(seed=5, duration_s=5.0,
                       dcr=DcrProfile(base_cps=500.0))
    stream, _truth = simulate(config)
    ms = measure_offsets(stream)
    assert invalid_fraction(ms) == 1.0
    with pytest.raises(CalibrationError):
        solve_delays(ms)


def test_gauge_constant_injected_shift_is_removed():
    rng = np.random.default_rng(17)
    base = rng.uniform(-2000.0, 2000.0, SensorConfig().num_pixels)
    vecs = []
    for shift in (0.0, 750.0):
        config = SimConfig(
            seed=33, duration_s=6.0,
            dcr=DcrProfile(base_cps=600.0),
            ct_profile=((1, 0.005),),
            delays_ps=tuple(base + shift))
        stream, _ = simulate(config)
        vecs.append(solve_delays(measure_offsets(stream)).delays_ps)
    rms = float(np.sqrt(np.mean((vecs[0] - vecs[1]) ** 2)))
    assert rms <= 15.0


# ---------------------------------------------------------------------------
# applying corrections

def test_apply_zero_delays_is_identity(calibrated_scenario):
    stream, _truth = calibrated_scenario
    out = apply_delays(stream, np.zeros(SensorConfig().num_pixels))
    np.testing.assert_array_equal(out.time_ps, stream.time_ps)
    np.testing.assert_array_equal(out.pixel, stream.pixel)
    np.testing.assert_array_equal(out.cycle_index, stream.cycle_index)
    assert out.out_of_window is None


def test_apply_tags_records_leaving_the_cycle():
    sensor = SensorConfig()
    header_stream, _ = simulate(SimConfig(seed=1, duration_s=0.001,
                                          dcr=DcrProfile(base_cps=0.0)))
    header = header_stream.header
    stream = PhotonStream(
        header=header,
        cycle_index=np.array([0, 0], dtype=np.uint64),
        pixel=np.array([3, 4], dtype=np.uint16),
        time_ps=np.array([100.0, 2000.0]),
        total_cycles=1)
    delays = np.zeros(sensor.num_pixels)
    delays[3] = 500.0  # pushes the first record to -400 ps
    out = apply_delays(stream, delays)
    assert out.n_records == 2
    assert out.out_of_window is not None
    tagged = out.out_of_window[out.pixel == 3]
    assert tagged.all()
    assert not out.out_of_window[out.pixel == 4].any()
    out.validate()


def test_apply_requires_full_coverage(calibrated_scenario):
    stream, _truth = calibrated_scenario
    with pytest.raises(DataError, match="covers"):
        apply_delays(stream, np.zeros(10))
