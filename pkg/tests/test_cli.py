"""End-to-end subcommand runs against simulated inputs."""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from spadkit.cli import main
from spadkit.coincidence import DeltaHistogram
from spadkit.crosstalk import CtCurve
from spadkit.offsets import DelayVector
from spadkit.simulator import BeamSpec, DcrProfile, SimConfig


def write_config(path, config: SimConfig) -> str:
    with open(path, "w") as fh:
        json.dump(config.to_json_dict(), fh)
    return str(path)


def read_manifest(out_path) -> dict:
    with open(str(out_path) + ".manifest.json") as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def sim_stream_path(tmp_path_factory):
    """A stream with hot pixels, neighbor CT, and a correlated beam pair."""
    tmp = tmp_path_factory.mktemp("cli")
    # beam rates are set high enough that the accidental background
    # between 70 and 73 has a nonzero median, so normalization works
    config = SimConfig(
        seed=21,
        duration_s=2.0,
        dcr=DcrProfile(base_cps=100.0, overrides=((40, 2e4), (200, 1.5e4))),
        beams=(BeamSpec(pixel=70, rate_cps=2e5),
               BeamSpec(pixel=73, rate_cps=2e5)),
        pair_fraction=0.3,
        fiber_delay_ps=5000.0,
        ct_profile=((1, 0.004), (3, 0.002)),
    )
    cfg = write_config(tmp / "sim.json", config)
    out = tmp / "s.spk1"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    return str(out)


def test_simulate_is_deterministic(tmp_path):
    config = SimConfig(seed=7, duration_s=0.2,
                       dcr=DcrProfile(base_cps=500.0))
    cfg = write_config(tmp_path / "c.json", config)
    a, b = tmp_path / "a.spk1", tmp_path / "b.spk1"
    t = tmp_path / "truth.json"
    assert main(["simulate", "--config", cfg, "--seed", "7",
                 "--out", str(a), "--truth", str(t)]) == 0
    assert main(["simulate", "--config", cfg, "--seed", "7",
                 "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    truth = json.loads(t.read_text())
    assert truth["counts"]["dark"] > 0
    manifest = read_manifest(a)
    assert manifest["seed"] == 7
    assert manifest["subcommand"] == "simulate"
    assert str(a) in manifest["outputs"]


def test_dcr_report(sim_stream_path, tmp_path):
    out = tmp_path / "report.json"
    assert main(["dcr", "--in", sim_stream_path, "--subsets", "4",
                 "--hot-threshold", "1000", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    hot = {p for p, _rate in doc["hot_pixels"]}
    assert {40, 70, 73, 200} <= hot
    assert len(doc["subsets"]) == 4
    assert doc["median_rate_cps"] < 1000


def test_coincidence_then_fit_two_peaks(sim_stream_path, tmp_path):
    hist_path = tmp_path / "h.json"
    assert main(["coincidence", "--in", sim_stream_path, "--pair", "70,73",
                 "--window", "25000", "--out", str(hist_path)]) == 0
    hist = DeltaHistogram.load(str(hist_path))
    assert hist.normalized is not None

    fit_path = tmp_path / "fit.json"
    svg_path = tmp_path / "fit.svg"
    assert main(["fit", "--in", str(hist_path), "--two-peaks",
                 "--hint", "5000", "--svg", str(svg_path),
                 "--out", str(fit_path)]) == 0
    doc = json.loads(fit_path.read_text())
    assert doc["kind"] == "two_peak_fit"
    assert abs(doc["far_peak"]["center_ps"] - 5000.0) < 300.0
    ET.fromstring(svg_path.read_text())
    manifest = read_manifest(fit_path)
    assert str(svg_path) in manifest["outputs"]


def test_fit_single_peak(sim_stream_path, tmp_path):
    hist_path = tmp_path / "h.json"
    main(["coincidence", "--in", sim_stream_path, "--pair", "70,71",
          "--out", str(hist_path)])
    fit_path = tmp_path / "fit.json"
    assert main(["fit", "--in", str(hist_path),
                 "--out", str(fit_path)]) == 0
    assert json.loads(fit_path.read_text())["kind"] == "gaussian_fit"


def test_ct_scan_outputs(sim_stream_path, tmp_path):
    out = tmp_path / "ct.json"
    svg = tmp_path / "ct.svg"
    assert main(["ct-scan", "--in", sim_stream_path, "--dmax", "4",
                 "--nhot", "4", "--out", str(out), "--svg", str(svg)]) == 0
    curve = CtCurve.load(str(out))
    assert [p.distance for p in curve.points] == [1, 2, 3, 4]
    p1 = curve.point(1)
    assert abs(p1.probability - 0.004) <= 3 * p1.stderr
    ET.fromstring(svg.read_text())


def test_calibrate_full_chain_exit_zero(tmp_path):
    config = SimConfig(seed=13, duration_s=6.0,
                       dcr=DcrProfile(base_cps=900.0),
                       ct_profile=((1, 0.012),),
                       delays_ps=tuple(
                           np.random.default_rng(2).uniform(-3000, 3000, 256)))
    cfg = write_config(tmp_path / "c.json", config)
    stream = tmp_path / "ambient.spk1"
    main(["simulate", "--config", cfg, "--out", str(stream)])
    out = tmp_path / "delays.json"
    assert main(["calibrate", "--in", str(stream), "--out", str(out)]) == 0
    vec = DelayVector.load(str(out))
    assert len(vec) == 256
    assert not vec.degraded
    assert vec.gap_pixels == ()


def test_calibrate_degraded_exit_three(tmp_path):
    # only ten adjacent pixels are lit: most pairs have no peak
    config = SimConfig(seed=4, duration_s=5.0,
                       dcr=DcrProfile(base_cps=0.0,
                                      overrides=tuple((p, 3000.0)
                                                      for p in range(10))),
                       ct_profile=((1, 0.01),))
    cfg = write_config(tmp_path / "c.json", config)
    stream = tmp_path / "sparse.spk1"
    main(["simulate", "--config", cfg, "--out", str(stream)])
    out = tmp_path / "delays.json"
    assert main(["calibrate", "--in", str(stream), "--out", str(out)]) == 3
    vec = DelayVector.load(str(out))  # outputs still written
    assert vec.degraded
    assert len(vec.gap_pixels) > 200


def test_calibrate_without_any_peak_is_data_error(tmp_path, capsys):
    config = SimConfig(seed=3, duration_s=2.0,
                       dcr=DcrProfile(base_cps=300.0))
    cfg = write_config(tmp_path / "c.json", config)
    stream = tmp_path / "dark.spk1"
    main(["simulate", "--config", cfg, "--out", str(stream)])
    code = main(["calibrate", "--in", str(stream),
                 "--out", str(tmp_path / "d.json")])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["type"] == "CalibrationError"


def test_report_directory(sim_stream_path, tmp_path):
    out_dir = tmp_path / "report"
    assert main(["report", "--in", sim_stream_path, "--pair", "70,73",
                 "--hint", "5000", "--out", str(out_dir)]) == 0
    fit_doc = json.loads((out_dir / "fit.json").read_text())
    assert fit_doc["kind"] == "two_peak_fit"
    DeltaHistogram.load(str(out_dir / "histogram.json"))
    ET.fromstring((out_dir / "report.svg").read_text())
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["subcommand"] == "report"
    assert manifest["config"]["pair"] == [70, 73]


def test_fit_on_malformed_json_exits_two(tmp_path, capsys):
    bad = tmp_path / "empty.json"
    bad.write_text("{}")
    code = main(["fit", "--in", str(bad), "--out", str(tmp_path / "f.json")])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["type"] == "DataError"
    assert "histogram" in err["error"]


def test_missing_input_file_exits_two(tmp_path, capsys):
    code = main(["dcr", "--in", str(tmp_path / "nope.spk1"),
                 "--out", str(tmp_path / "r.json")])
    assert code == 2
    assert "error" in json.loads(capsys.readouterr().err.strip())


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["dcr", "--nonsense"])
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["coincidence", "--in", "x", "--pair", "banana",
              "--out", "y"])
    assert exc.value.code == 1


def test_delays_flag_matches_library_application(tmp_path):
    rng = np.random.default_rng(8)
    delays = rng.uniform(-2000, 2000, 256)
    delays -= delays.mean()
    config = SimConfig(seed=19, duration_s=1.0,
                       dcr=DcrProfile(base_cps=400.0),
                       ct_profile=((1, 0.01),),
                       delays_ps=tuple(delays))
    cfg = write_config(tmp_path / "c.json", config)
    stream_path = tmp_path / "s.spk1"
    main(["simulate", "--config", cfg, "--out", str(stream_path)])
    vec_path = tmp_path / "d.json"
    DelayVector(delays).save(str(vec_path))

    plain = tmp_path / "plain.json"
    corrected = tmp_path / "corr.json"
    main(["coincidence", "--in", str(stream_path), "--pair", "30,31",
          "--out", str(plain)])
    main(["coincidence", "--in", str(stream_path), "--pair", "30,31",
          "--delays", str(vec_path), "--out", str(corrected)])
    h0 = DeltaHistogram.load(str(plain))
    h1 = DeltaHistogram.load(str(corrected))
    assert h0.total_pairs == h1.total_pairs  # window is wide, shift is small
    peak0 = h0.bin_centers[np.argmax(h0.counts)]
    peak1 = h1.bin_centers[np.argmax(h1.counts)]
    assert abs(peak1) <= abs(peak0) or abs(peak1) < 200.0
