import json

import numpy as np
import pytest

from dgq.layer import read_dgq
from dgq.pipeline import (
    CSV_FIELDS,
    ManifestError,
    PipelineConfig,
    Scheme,
    evaluate_artifact,
    layer_inputs,
    quantize_layer,
    run_layer,
    run_suite,
    summarize,
    to_json,
    validate_manifest,
)
from dgq.search import SearchConfig
from dgq.tensor import Tensor, gen_synthetic, outlier_columns, write_tensor

ALL = ["FP-REF", "CW", "GW", "DGQ-RTN", "DGQ-2P"]
SMALL = SearchConfig(group_size=32, grid1=(0.6, 0.8, 0.9, 1.0), grid2=(0.9, 0.95, 1.0))


def synthetic(h=128, o=32, seed=3, outliers=(2, 40)):
    W = np.asarray(gen_synthetic(h, o, seed))
    A = np.asarray(gen_synthetic(160, h, seed + 1, outliers))
    return W, [A[:96]], A[96:]


def test_scheme_parsing():
    assert Scheme.parse("gw").label == "GW/dynamic"
    assert Scheme.parse("DGQ-2P:static") == Scheme("DGQ-2P", "static")
    assert Scheme.parse({"id": "cw", "mode": "none"}).label == "CW/none"
    assert Scheme.parse("FP-REF").label == "FP-REF"
    with pytest.raises(ManifestError, match="valid ids: FP-REF, CW, GW, DGQ-RTN, DGQ-2P"):
        Scheme.parse("INT4")
    with pytest.raises(ManifestError):
        Scheme.parse("GW:token")


def test_fp_ref_alone_has_zero_error():
    W, calib, ev = synthetic()
    rep = run_layer(W, calib, ev, ["FP-REF"], PipelineConfig(search=SMALL))
    r = rep.result("FP-REF")
    assert (r.mse, r.rel_fro, r.max_abs, r.calib_mse) == (0.0, 0.0, 0.0, 0.0)
    assert rep.overflow["checked"] == 0


def test_all_schemes_ordering_and_report_fields():
    W, calib, ev = synthetic()
    # two outliers at h=128 need a wider top set than the default rank-1 one
    cfg = PipelineConfig(search=SMALL, percentile=0.03)
    rep = run_layer(W, calib, ev, ALL, cfg, name="toy")
    d = rep.to_dict()
    assert set(d) == {"name", "h", "o", "g", "schemes", "overflow", "bytes", "alpha_histogram", "smoothing"}
    assert "timing" in rep.to_dict(include_timing=True)
    mse = {sid: rep.result(sid).mse for sid in ALL}
    assert mse["FP-REF"] == 0 < mse["GW"] <= mse["CW"]
    # the search only promises order on the data it saw
    assert rep.result("DGQ-2P").search_error <= rep.result("DGQ-RTN").search_error
    assert rep.result("DGQ-2P").calib_mse <= rep.result("DGQ-RTN").calib_mse
    assert rep.overflow["violations"] == 0 and rep.overflow["int32_safe"]
    assert rep.bytes["total"] == rep.layers["DGQ-2P/dynamic"].h * 32 // 2 + rep.bytes["scale_bytes"]
    assert sum(d["alpha_histogram"]["phase2"].values()) == 32
    assert sum(d["alpha_histogram"]["phase1"].values()) == 4 * 32
    assert d["smoothing"]["n_smoothed"] >= 1
    assert run_layer(W, calib, ev, ["GW"], PipelineConfig(search=SMALL)).to_dict()["smoothing"]["n_smoothed"] == 0


@pytest.mark.parametrize("mode", ["static", "none"])
def test_other_activation_modes(mode):
    W, calib, ev = synthetic()
    rep = run_layer(W, calib, ev, ALL, PipelineConfig(search=SMALL, mode=mode))
    assert rep.result("GW").mse <= rep.result("CW").mse
    assert rep.result("DGQ-2P").search_error <= rep.result("DGQ-RTN").search_error
    assert rep.layers["DGQ-2P/" + mode].mode == ("static" if mode == "static" else "dynamic")


def test_weight_only_mode_has_smaller_error_than_a8():
    W, calib, ev = synthetic()
    rep = run_layer(W, calib, ev, ["GW:none", "GW:dynamic"], PipelineConfig(search=SMALL))
    assert rep.schemes["GW/none"].mse < rep.schemes["GW/dynamic"].mse


def test_alpha_one_grids_order_gw_below_cw():
    cfg = PipelineConfig(search=SearchConfig(group_size=32, grid1=(1.0,), grid2=(1.0,)))
    for seed in range(3):
        W, calib, ev = synthetic(seed=seed)
        rep = run_layer(W, calib, ev, ["CW", "GW"], cfg)
        assert rep.result("GW").mse <= rep.result("CW").mse


def test_layer_errors():
    W, calib, ev = synthetic()
    with pytest.raises(ValueError):
        run_layer(W, calib, ev, ["GW"], PipelineConfig(search=SearchConfig(group_size=48)))
    with pytest.raises(ValueError):
        run_layer(W, [np.ones((4, 10))], ev, ["GW"])
    with pytest.raises(ValueError):
        run_layer(W, calib, ev[:, :10], ["GW"], PipelineConfig(search=SMALL))


def test_quantize_layer_and_eval_agree_on_calibration():
    W, calib, _ = synthetic()
    cfg = PipelineConfig(search=SMALL)
    layer, summary = quantize_layer(W, calib, cfg)
    rtn_layer, rtn = quantize_layer(W, calib, cfg, "DGQ-RTN")
    assert rtn["mse"] >= summary["mse"]
    rep = evaluate_artifact(layer, calib[0], W)
    assert rep.result("DGQ").mse <= summary["mse"] + 1e-6
    assert summary["overflow"]["violations"] == 0
    with pytest.raises(ValueError):
        quantize_layer(W, calib, cfg, "GW")
    with pytest.raises(ValueError):
        evaluate_artifact(layer, calib[0], W[:, :3])


def test_run_layer_matches_quantize_layer():
    W, calib, ev = synthetic()
    cfg = PipelineConfig(search=SMALL)
    layer, summary = quantize_layer(W, calib, cfg)
    rep = run_layer(W, calib, ev, ["DGQ-2P"], cfg)
    assert rep.layers["DGQ-2P/dynamic"] == layer
    assert rep.result("DGQ-2P").calib_mse == summary["mse"]


# ---------------------------------------------------------------------------
# manifests and suites


def entry(name, seed, **kw):
    e = {
        "name": name,
        "seed": seed,
        "synthetic": {"h": 64, "o": 16, "calib_rows": 64, "eval_rows": 32, "outliers": {"count": 1, "magnitude": 30}},
        "group_size": 32,
        "grids": {"phase1": [0.7, 0.85, 1.0], "phase2": [0.9, 1.0]},
    }
    e.update(kw)
    return e


def test_empty_manifest():
    res = run_suite({"layers": []})
    assert res["layers"] == [] and res["aggregate"]["n_layers"] == 0
    assert res["aggregate"]["mean"] == {}


def test_two_layer_suite_aggregates_means():
    res = run_suite({"layers": [entry("a", 1), entry("b", 2)]})
    a, b = res["layers"]
    assert res["aggregate"]["n_layers"] == 2 and res["aggregate"]["n_failed"] == 0
    for label in a["schemes"]:
        m = res["aggregate"]["mean"][label]["mse"]
        assert m == pytest.approx((a["schemes"][label]["mse"] + b["schemes"][label]["mse"]) / 2, rel=1e-12)
    assert len(res["aggregate"]["ratio_dgq2p_over_gw"]["per_layer"]) == 2
    assert a["checks"]["fp_ref_zero"] and a["checks"]["gw_le_cw"] and a["checks"]["overflow_free"]


def test_failing_layer_is_recorded_and_suite_continues():
    bad = entry("bad", 1, group_size=48)
    res = run_suite({"layers": [bad, entry("ok", 2)]})
    assert "error" in res["layers"][0] and "schemes" in res["layers"][1]
    assert res["aggregate"]["n_failed"] == 1 and res["aggregate"]["checks"]["no_failures"] is False


def test_manifest_validation():
    with pytest.raises(ManifestError, match="valid ids"):
        validate_manifest({"layers": [entry("x", 1, schemes=["GW", "FOO"])]})
    with pytest.raises(ManifestError, match="unknown keys"):
        validate_manifest({"layers": [entry("x", 1, colour="red")]})
    with pytest.raises(ManifestError):
        validate_manifest({"layers": [{"name": "x"}]})


def test_file_backed_manifest(tmp_path):
    W, calib, ev = synthetic(h=64, o=8)
    for name, arr in [("w", W), ("c0", calib[0][:48]), ("c1", calib[0][48:]), ("e", ev)]:
        write_tensor(Tensor.from_array(np.asarray(arr, np.float32)), tmp_path / f"{name}.dgt")
    manifest = {
        "layers": [
            {
                "name": "files",
                "weight_file": "w.dgt",
                "calib_files": ["c0.dgt", "c1.dgt"],
                "eval_file": "e.dgt",
                "group_size": 32,
                "schemes": ["FP-REF", "GW", "DGQ-2P"],
            }
        ]
    }
    (tmp_path / "m.json").write_text(json.dumps(manifest))
    res = run_suite(tmp_path / "m.json")
    assert res["aggregate"]["n_failed"] == 0
    Wl, cl, el = layer_inputs(manifest["layers"][0], tmp_path)
    assert np.array_equal(Wl, W.astype(np.float32)) and len(cl) == 2


def test_synthetic_inputs_share_outlier_channels():
    e = entry("x", 9)
    W, calib, ev = layer_inputs(e)
    cols = outlier_columns(96, 64, 10, e["synthetic"]["outliers"])
    assert np.abs(calib[0]).max(0).argmax() == cols[0] == np.abs(ev).max(0).argmax()
    assert W.shape == (64, 16) and calib[0].shape == (64, 64) and ev.shape == (32, 64)


def test_suite_outputs_deterministic(tmp_path):
    m = {"layers": [entry("a", 1), entry("b", 2)]}
    r1 = run_suite(m, out_dir=tmp_path / "one", workers=1)
    r2 = run_suite(m, out_dir=tmp_path / "two", workers=2, figures=False)
    assert to_json(r1) == to_json(r2)
    assert (tmp_path / "one/aggregate.json").read_bytes() == (tmp_path / "two/aggregate.json").read_bytes()
    assert (tmp_path / "one/layers.csv").read_bytes() == (tmp_path / "two/layers.csv").read_bytes()
    rows = (tmp_path / "one/layers.csv").read_text().splitlines()
    assert rows[0].split(",") == list(CSV_FIELDS) and len(rows) == 1 + 2 * 5
    figs = sorted(p.name for p in (tmp_path / "one/figures").iterdir())
    assert figs == ["alpha_histogram.png", "dgq2p_over_gw.png", "scheme_mse.png"]
    assert not (tmp_path / "two/figures").exists()
    assert json.loads((tmp_path / "one/aggregate.json").read_text())["aggregate"]["n_layers"] == 2


def test_summarize_checks():
    layer = {
        "name": "l",
        "schemes": {
            "GW/dynamic": {"mse": 1.0, "rel_fro": 0.1, "calib_mse": 1.0},
            "DGQ-2P/dynamic": {"mse": 1.2, "rel_fro": 0.1, "calib_mse": 1.1},
        },
        "checks": {"fp_ref_zero": None, "gw_le_cw": None, "dgq2p_le_rtn": None, "dgq2p_within_delta": False, "overflow_free": True},
    }
    agg = summarize([layer], 0.10, 0.03)
    assert agg["ratio_dgq2p_over_gw"]["per_layer"] == [1.2]
    assert agg["checks"]["dgq2p_within_delta"] is False and agg["checks"]["median_ratio_within"] is False
    assert agg["checks"]["fp_ref_zero"] is None and agg["checks"]["all"] is False


def test_artifact_from_suite_layer_round_trips(tmp_path):
    from dgq.layer import write_dgq

    W, calib, _ = synthetic()
    layer, _ = quantize_layer(W, calib, PipelineConfig(search=SMALL))
    write_dgq(layer, tmp_path / "x.dgq")
    assert read_dgq(tmp_path / "x.dgq") == layer
