"""Calibration, smoothing, search, packing and evaluation of linear layers.

Every quantized scheme sees the same smoothing vector and activation
quantization, so the comparison isolates the weight format:

* ``FP-REF``  float ``X @ W``.
* ``CW``      4-bit asymmetric weights, one searched scale per output channel.
* ``GW``      4-bit asymmetric weights with float group scales ``S'`` (segmented GEMM).
* ``DGQ-RTN`` dual-grained format from the alpha = 1 decomposition of ``S'``.
* ``DGQ-2P``  dual-grained format from the two-phase search.

Errors are measured against float ``X @ W`` of the unsmoothed layer, on the
evaluation activations and on the calibration activations.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .kernel import (
    dgq_gemm,
    epilogue,
    fake_quant_act,
    int8_gemm,
    quantize_act,
    segmented_gemm,
    static_act_scale,
)
from .layer import DgqLayer, byte_accounting, dequantize_to_f32, overflow_violations, pack_layer
from .quant import to_fp16
from .search import SearchConfig, phase1_search, phase2_search, rtn_dgq
from .smoothing import DEFAULT_PERCENTILE, SmoothScale, channel_maxima, compute_smooth
from .tensor import gen_synthetic, read_tensor

log = logging.getLogger(__name__)

SCHEME_IDS = ("FP-REF", "CW", "GW", "DGQ-RTN", "DGQ-2P")
ACT_MODES = ("static", "dynamic", "none")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Scheme:
    id: str
    activation_mode: str = "dynamic"

    def __post_init__(self):
        if self.id not in SCHEME_IDS:
            raise ManifestError(f"unknown scheme {self.id!r}; valid ids: {', '.join(SCHEME_IDS)}")
        if self.activation_mode not in ACT_MODES:
            raise ManifestError(
                f"unknown activation mode {self.activation_mode!r}; valid: {', '.join(ACT_MODES)}"
            )

    @property
    def label(self) -> str:
        return self.id if self.id == "FP-REF" else f"{self.id}/{self.activation_mode}"

    @classmethod
    def parse(cls, value, default_mode: str = "dynamic") -> "Scheme":
        """Accept ``"GW"``, ``"GW:static"`` or ``{"id": "GW", "mode": "static"}``."""
        if isinstance(value, Scheme):
            return value
        if isinstance(value, dict):
            return cls(str(value["id"]).upper(), value.get("mode", default_mode))
        sid, _, mode = str(value).partition(":")
        return cls(sid.upper(), mode or default_mode)


@dataclass(frozen=True)
class PipelineConfig:
    search: SearchConfig = field(default_factory=SearchConfig)
    mode: str = "dynamic"
    percentile: float = DEFAULT_PERCENTILE
    smooth: bool = True
    delta: float = 0.10


@dataclass
class SchemeResult:
    mse: float
    rel_fro: float
    max_abs: float
    calib_mse: float | None
    search_error: float | None = None  # summed objective from the search
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "mse": self.mse,
            "rel_fro": self.rel_fro,
            "max_abs": self.max_abs,
            "calib_mse": self.calib_mse,
        }
        if self.search_error is not None:
            d["search_error"] = self.search_error
        d.update(self.extras)
        return d


@dataclass
class LayerReport:
    name: str
    h: int
    o: int
    g: int
    schemes: dict[str, SchemeResult]
    overflow: dict
    bytes: dict
    alpha_histogram: dict
    smoothing: dict
    timing: dict = field(default_factory=dict)
    layers: dict[str, DgqLayer] = field(default_factory=dict, repr=False)

    def result(self, sid: str) -> SchemeResult | None:
        """First result whose scheme id is ``sid`` (any activation mode)."""
        for label, r in self.schemes.items():
            if label.split("/")[0] == sid:
                return r
        return None

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "name": self.name,
            "h": self.h,
            "o": self.o,
            "g": self.g,
            "schemes": {k: v.to_dict() for k, v in self.schemes.items()},
            "overflow": self.overflow,
            "bytes": self.bytes,
            "alpha_histogram": self.alpha_histogram,
            "smoothing": self.smoothing,
        }
        if include_timing:
            d["timing"] = self.timing
        return d


def _hist(alphas) -> dict[str, int]:
    vals, counts = np.unique(np.round(np.asarray(alphas, dtype=np.float64), 6), return_counts=True)
    return {format(float(v), ".6g"): int(c) for v, c in zip(vals, counts)}


def _errors(ref: np.ndarray, out: np.ndarray) -> tuple[float, float, float]:
    d = ref - np.asarray(out, dtype=np.float64)
    denom = float(np.linalg.norm(ref))
    return (
        float(np.mean(d * d)) if d.size else 0.0,
        float(np.linalg.norm(d) / denom) if denom else 0.0,
        float(np.abs(d).max(initial=0.0)),
    )


def calibrate(calib, percentile: float = DEFAULT_PERCENTILE, smooth: bool = True, fp16: bool = False):
    """Smoothing vector and static activation scale from calibration batches.

    Returns ``(SmoothScale, act_scale)``.
    """
    calib = [np.asarray(x, dtype=np.float32) for x in calib]
    z = channel_maxima(calib)
    sm = compute_smooth(z, percentile) if smooth else SmoothScale.identity(z.size)
    if fp16:
        sm = replace(sm, k=np.maximum(to_fp16(sm.k), 1).astype(np.float32))
    act = static_act_scale(np.vstack(calib), sm.k)
    if fp16:
        act = float(to_fp16(act))
    return sm, act


class _LayerState:
    """Per-layer intermediates shared by all schemes; phase 1 is cached per (mode, g)."""

    def __init__(self, W, calib, cfg: PipelineConfig, smooth=None, act_scale=None):
        self.cfg = cfg
        self.W = np.asarray(W, dtype=np.float64)
        self.X_cal = np.vstack([np.asarray(x, dtype=np.float32) for x in calib]).astype(np.float64)
        if self.X_cal.shape[1] != self.W.shape[0]:
            raise ValueError(
                f"calibration width {self.X_cal.shape[1]} != weight rows {self.W.shape[0]}"
            )
        if smooth is None:
            smooth, act = calibrate(calib, cfg.percentile, cfg.smooth, cfg.search.fp16_scales)
            act_scale = act if act_scale is None else act_scale
        elif act_scale is None:
            act_scale = static_act_scale(self.X_cal, smooth.k)
        if smooth.k.size != self.W.shape[0]:
            raise ValueError(f"smoothing vector length {smooth.k.size} != weight rows {self.W.shape[0]}")
        self.smooth, self.act_scale = smooth, float(act_scale)
        self.k = self.smooth.k
        k64 = self.k.astype(np.float64)
        self.W_s = self.W * k64[:, None]
        self.X_s = self.X_cal / k64[None, :]
        self._xhat: dict[str, np.ndarray] = {}
        self._gp: dict[tuple, object] = {}

    def x_hat(self, mode: str) -> np.ndarray:
        if mode not in self._xhat:
            self._xhat[mode] = fake_quant_act(self.X_cal, mode, self.act_scale, self.k)
        return self._xhat[mode]

    def phase1(self, mode: str, group_size: int):
        key = (mode, group_size)
        if key not in self._gp:
            cfg = replace(self.cfg.search, group_size=group_size)
            self._gp[key] = phase1_search(self.W_s, self.X_s, self.x_hat(mode), cfg)
        return self._gp[key]


class _Format:
    """A quantized weight format: an integer path for quantized activations and a float fallback."""

    def __init__(self, int_path, float_weight):
        self.int_path = int_path
        self.float_weight = float_weight

    def forward(self, X, mode: str, act_scale: float, k) -> np.ndarray:
        if mode == "none":
            return fake_quant_act(X, "none", None, k) @ self.float_weight()
        xq, s = quantize_act(X, mode, act_scale, k)
        return self.int_path(xq, s)


def _channel_format(gp) -> _Format:
    w_int = gp.codes.astype(np.int32) - gp.ZP[0][None, :]
    scale = gp.S_prime[0]
    return _Format(
        lambda xq, s: epilogue(int8_gemm(xq, w_int), s, scale),
        lambda: w_int * scale.astype(np.float64)[None, :],
    )


def _group_format(gp) -> _Format:
    g = gp.group_size
    return _Format(
        lambda xq, s: segmented_gemm(xq, s, gp.codes, gp.ZP, gp.S_prime, g),
        lambda: (gp.codes.astype(np.float64) - np.repeat(gp.ZP, g, axis=0))
        * np.repeat(gp.S_prime.astype(np.float64), g, axis=0),
    )


def _dgq_format(layer: DgqLayer, audit: dict) -> _Format:
    def int_path(xq, s):
        res = dgq_gemm(xq, s, layer)
        audit["max_abs_acc"] = max(audit["max_abs_acc"], res.max_abs_acc)
        audit["int32_safe"] = audit["int32_safe"] and res.int32_safe
        return res.out

    return _Format(int_path, lambda: dequantize_to_f32(layer).astype(np.float64))


def run_layer(
    W,
    calib,
    eval_X,
    schemes,
    cfg: PipelineConfig | None = None,
    name: str = "layer",
) -> LayerReport:
    """Quantize one layer under each scheme and measure output error.

    ``eval_X`` should be disjoint from the calibration batches; this is not
    checked.
    """
    cfg = cfg or PipelineConfig()
    schemes = [Scheme.parse(s, cfg.mode) for s in schemes]
    t0 = time.perf_counter()
    st = _LayerState(W, calib, cfg)
    h, o = st.W.shape
    g = cfg.search.group_size
    if any(s.id in ("GW", "DGQ-RTN", "DGQ-2P") for s in schemes) and h % g:
        raise ValueError(f"group size {g} does not divide h={h}")
    eval_X = np.asarray(eval_X, dtype=np.float32).astype(np.float64)
    if eval_X.shape[1] != h:
        raise ValueError(f"eval width {eval_X.shape[1]} != weight rows {h}")
    ref_eval = eval_X @ st.W
    ref_cal = st.X_cal @ st.W
    timing = {"calibrate": time.perf_counter() - t0}

    results: dict[str, SchemeResult] = {}
    layers: dict[str, DgqLayer] = {}
    audit = {"checked": 0, "violations": 0, "max_abs_acc": 0, "int32_safe": True}
    alpha_hist: dict = {}

    for sch in schemes:
        t1 = time.perf_counter()
        mode = sch.activation_mode
        search_error = None
        extras: dict = {}
        if sch.id == "FP-REF":
            outs = (ref_eval, ref_cal)
        else:
            if sch.id == "CW":
                gp = st.phase1(mode, h)
                fmt = _channel_format(gp)
                search_error = float(gp.error.sum())
            elif sch.id == "GW":
                gp = st.phase1(mode, g)
                fmt = _group_format(gp)
                search_error = float(gp.error.sum())
                alpha_hist.setdefault("phase1", _hist(gp.alpha))
            else:
                gp = st.phase1(mode, g)
                xh = st.x_hat(mode)
                if sch.id == "DGQ-2P":
                    dp = phase2_search(st.W_s, gp, st.X_s, xh, cfg.search)
                    alpha_hist["phase2"] = _hist(dp.alpha)
                    extras["evaluations"] = {"phase1": gp.evaluations, "phase2": dp.evaluations}
                else:
                    dp = rtn_dgq(st.W_s, gp, cfg.search, st.X_s, xh)
                alpha_hist.setdefault("phase1", _hist(gp.alpha))
                search_error = float(dp.error.sum())
                layer = pack_layer(
                    dp,
                    k=st.k,
                    act_scale=st.act_scale,
                    mode="static" if mode == "static" else "dynamic",
                )
                layers[sch.label] = layer
                audit["checked"] += layer.h * layer.o
                audit["violations"] += overflow_violations(layer)
                fmt = _dgq_format(layer, audit)
            outs = tuple(fmt.forward(X, mode, st.act_scale, st.k) for X in (eval_X, st.X_cal))
        mse, rel, mx = _errors(ref_eval, outs[0])
        cal_mse = _errors(ref_cal, outs[1])[0]
        results[sch.label] = SchemeResult(mse, rel, mx, cal_mse, search_error, extras)
        timing[sch.label] = time.perf_counter() - t1

    dgq = next(iter(layers.values()), None)
    log.info("%s (%dx%d, g=%d): %.2fs", name, h, o, g, time.perf_counter() - t0)
    return LayerReport(
        name=name,
        h=h,
        o=o,
        g=g,
        schemes=results,
        overflow=audit,
        bytes=byte_accounting(dgq if dgq is not None else (h, o, g)),
        alpha_histogram=alpha_hist,
        smoothing={
            "threshold": st.smooth.threshold if cfg.smooth else None,
            "n_smoothed": int((st.k > 1).sum()),
            "act_scale": st.act_scale,
        },
        timing=timing,
        layers=layers,
    )


def quantize_layer(
    W,
    calib,
    cfg: PipelineConfig | None = None,
    scheme: str = "DGQ-2P",
    smooth: SmoothScale | None = None,
    act_scale: float | None = None,
):
    """Search and pack one DGQ layer; returns ``(DgqLayer, summary dict)``.

    ``smooth``/``act_scale`` override the values derived from ``calib``. The
    summary's ``mse`` is the calibration-set layer-output MSE of the integer
    path against float ``X @ W``.
    """
    cfg = cfg or PipelineConfig()
    sch = Scheme.parse(scheme, cfg.mode)
    if not sch.id.startswith("DGQ") or sch.activation_mode == "none":
        raise ValueError(f"quantize_layer needs DGQ-2P or DGQ-RTN with activation quantization, got {sch.label}")
    st = _LayerState(W, calib, cfg, smooth, act_scale)
    mode = sch.activation_mode
    gp = st.phase1(mode, cfg.search.group_size)
    xh = st.x_hat(mode)
    if sch.id == "DGQ-2P":
        dp = phase2_search(st.W_s, gp, st.X_s, xh, cfg.search)
    else:
        dp = rtn_dgq(st.W_s, gp, cfg.search, st.X_s, xh)
    layer = pack_layer(dp, k=st.k, act_scale=st.act_scale, mode=mode)
    audit = {"max_abs_acc": 0, "int32_safe": True}
    out = _dgq_format(layer, audit).forward(st.X_cal, mode, st.act_scale, st.k)
    mse, rel, mx = _errors(st.X_cal @ st.W, out)
    hist = {"phase1": _hist(gp.alpha)}
    if sch.id == "DGQ-2P":
        hist["phase2"] = _hist(dp.alpha)
    summary = {
        "scheme": sch.label,
        "mse": mse,
        "rel_fro": rel,
        "max_abs": mx,
        "search_mse": float(dp.error.sum()) / dp.error.size / st.X_cal.shape[0],
        "bytes": byte_accounting(layer),
        "alpha_histogram": hist,
        # columns whose group scales are all equal gain nothing from phase 2
        "constant_s_prime_columns": int(np.all(gp.S_prime == gp.S_prime[:1], axis=0).sum()),
        "overflow": {
            "checked": layer.h * layer.o,
            "violations": overflow_violations(layer),
            **audit,
        },
    }
    return layer, summary


def evaluate_artifact(layer: DgqLayer, X, W, name: str = "layer", bias=None, fp16: bool = False) -> LayerReport:
    """Run a packed layer's integer path on ``X`` and compare with float ``X @ W``."""
    X = np.asarray(X, dtype=np.float32)
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (layer.h, layer.o):
        raise ValueError(f"reference weight shape {W.shape} != artifact ({layer.h}, {layer.o})")
    if X.shape[1] != layer.h:
        raise ValueError(f"eval width {X.shape[1]} != artifact h={layer.h}")
    t0 = time.perf_counter()
    xq, s = quantize_act(X, layer.mode, layer.act_scale, layer.k)
    res = dgq_gemm(xq, s, layer, bias, fp16)
    ref = X.astype(np.float64) @ W
    if bias is not None:
        ref = ref + np.asarray(bias, dtype=np.float64)[None, :]
    mse, rel, mx = _errors(ref, res.out)
    label = f"DGQ/{layer.mode}"
    return LayerReport(
        name=name,
        h=layer.h,
        o=layer.o,
        g=layer.g,
        schemes={label: SchemeResult(mse, rel, mx, calib_mse=None)},
        overflow={
            "checked": layer.h * layer.o,
            "violations": overflow_violations(layer),
            "max_abs_acc": res.max_abs_acc,
            "int32_safe": res.int32_safe,
        },
        bytes=byte_accounting(layer),
        alpha_histogram={},
        smoothing={
            "threshold": None,
            "n_smoothed": int((layer.k > 1).sum()),
            "act_scale": layer.act_scale,
        },
        timing={"eval": time.perf_counter() - t0},
        layers={label: layer},
    )


# ---------------------------------------------------------------------------
# suites

LAYER_KEYS = {
    "name", "weight_file", "calib_files", "eval_file", "synthetic", "schemes", "group_size",
    "grids", "seed", "mode", "percentile", "smooth", "s1_anchor", "fp16_scales",
}
DEFAULT_SCHEMES = SCHEME_IDS


def load_manifest(path) -> dict:
    """Read a suite manifest; relative file paths resolve against its directory."""
    path = Path(path)
    with open(path) as f:
        manifest = json.load(f)
    manifest.setdefault("base_dir", str(path.resolve().parent))
    return manifest


def validate_manifest(manifest: dict) -> list[dict]:
    layers = manifest.get("layers", [])
    if not isinstance(layers, list):
        raise ManifestError("'layers' must be a list")
    for i, entry in enumerate(layers):
        unknown = set(entry) - LAYER_KEYS
        if unknown:
            raise ManifestError(f"layer {i}: unknown keys {sorted(unknown)}")
        for s in entry.get("schemes", DEFAULT_SCHEMES):
            Scheme.parse(s, entry.get("mode", "dynamic"))
        if "synthetic" not in entry and not {"weight_file", "calib_files", "eval_file"} <= set(entry):
            raise ManifestError(
                f"layer {i}: needs 'synthetic' or all of weight_file, calib_files, eval_file"
            )
    return layers


def layer_inputs(entry: dict, base_dir: str | os.PathLike = "."):
    """Materialize ``(W, calib list, eval_X)`` for one manifest entry.

    Synthetic entries draw the weight from ``seed`` and one activation tensor
    from ``seed + 1``; its first ``calib_rows`` rows calibrate and the rest
    evaluate, so both share the same outlier channels.
    """
    if "synthetic" in entry:
        syn = entry["synthetic"]
        seed = int(entry.get("seed", 0))
        h, o = int(syn["h"]), int(syn["o"])
        nc, ne = int(syn.get("calib_rows", 256)), int(syn.get("eval_rows", 128))
        W = np.asarray(gen_synthetic(h, o, seed, syn.get("weight_outliers")))
        A = np.asarray(gen_synthetic(nc + ne, h, seed + 1, syn.get("outliers")))
        return W, [A[:nc]], A[nc:]
    base = Path(base_dir)
    rd = lambda p: np.asarray(read_tensor(base / p), dtype=np.float32)  # noqa: E731
    return rd(entry["weight_file"]), [rd(p) for p in entry["calib_files"]], rd(entry["eval_file"])


def layer_config(entry: dict, workers: int = 1) -> PipelineConfig:
    grids = entry.get("grids", {})
    search = SearchConfig(
        group_size=int(entry.get("group_size", 128)),
        grid1=tuple(grids.get("phase1", SearchConfig.grid1)),
        grid2=tuple(grids.get("phase2", SearchConfig.grid2)),
        s1_anchor=entry.get("s1_anchor", "weight"),
        fp16_scales=bool(entry.get("fp16_scales", False)),
        workers=workers,
    )
    return PipelineConfig(
        search=search,
        mode=entry.get("mode", "dynamic"),
        percentile=float(entry.get("percentile", DEFAULT_PERCENTILE)),
        smooth=bool(entry.get("smooth", True)),
    )


def _layer_checks(rep: LayerReport, delta: float) -> dict:
    fp, cw, gw = rep.result("FP-REF"), rep.result("CW"), rep.result("GW")
    rtn, dp = rep.result("DGQ-RTN"), rep.result("DGQ-2P")
    both = lambda a, b: a is not None and b is not None  # noqa: E731
    checks = {
        "fp_ref_zero": None if fp is None else fp.mse == 0.0,
        "gw_le_cw": gw.mse <= cw.mse if both(gw, cw) else None,
        "dgq2p_le_rtn": (dp.mse <= rtn.mse and dp.calib_mse <= rtn.calib_mse)
        if both(dp, rtn)
        else None,
        "dgq2p_within_delta": dp.mse <= (1 + delta) * gw.mse if both(dp, gw) else None,
        "overflow_free": rep.overflow["violations"] == 0 and rep.overflow["int32_safe"]
        if rep.overflow["checked"]
        else None,
    }
    return checks


def _all(values) -> bool | None:
    vals = [v for v in values if v is not None]
    return all(vals) if vals else None


def summarize(entries: list[dict], delta: float, median_delta: float) -> dict:
    ok = [e for e in entries if "error" not in e]
    means: dict[str, dict] = {}
    for e in ok:
        for label, r in e["schemes"].items():
            m = means.setdefault(label, {"mse": [], "rel_fro": [], "calib_mse": []})
            for key in m:
                m[key].append(r[key])
    means = {lab: {k: float(np.mean(v)) for k, v in m.items()} for lab, m in sorted(means.items())}

    ratios = []
    for e in ok:
        gw = next((r for lab, r in e["schemes"].items() if lab.startswith("GW")), None)
        dp = next((r for lab, r in e["schemes"].items() if lab.startswith("DGQ-2P")), None)
        if gw and dp and gw["mse"] > 0:
            ratios.append(dp["mse"] / gw["mse"])
    ratio = {
        "per_layer": ratios,
        "max": float(max(ratios)) if ratios else None,
        "median": float(np.median(ratios)) if ratios else None,
    }
    checks = {
        key: _all(e["checks"][key] for e in ok)
        for key in ("fp_ref_zero", "gw_le_cw", "dgq2p_le_rtn", "dgq2p_within_delta", "overflow_free")
    }
    checks["median_ratio_within"] = None if not ratios else ratio["median"] <= 1 + median_delta
    checks["no_failures"] = len(ok) == len(entries)
    checks["all"] = all(v for v in checks.values() if v is not None)
    return {
        "n_layers": len(entries),
        "n_failed": len(entries) - len(ok),
        "mean": means,
        "ratio_dgq2p_over_gw": ratio,
        "checks": checks,
    }


def run_suite(
    manifest,
    out_dir=None,
    workers: int = 1,
    figures: bool = True,
    overrides: dict | None = None,
) -> dict:
    """Run every manifest layer and aggregate; writes JSON/CSV/figures when ``out_dir`` is set.

    Failing layers are recorded with their error message and the suite
    continues. Output is a pure function of the manifest.
    """
    if not isinstance(manifest, dict):
        manifest = load_manifest(manifest)
    layers = validate_manifest(manifest)
    if overrides:
        layers = [{**e, **overrides} for e in layers]
        validate_manifest({"layers": layers})
    delta = float(manifest.get("delta", 0.10))
    median_delta = float(manifest.get("median_delta", 0.03))
    base = manifest.get("base_dir", ".")

    def one(i_entry):
        i, entry = i_entry
        name = entry.get("name", f"layer{i}")
        try:
            W, calib, ev = layer_inputs(entry, base)
            rep = run_layer(
                W, calib, ev, entry.get("schemes", DEFAULT_SCHEMES), layer_config(entry), name
            )
        except Exception as exc:  # recorded per layer; the suite keeps going
            log.error("layer %s failed: %s", name, exc)
            return {"name": name, "error": f"{type(exc).__name__}: {exc}"}
        d = rep.to_dict()
        d["checks"] = _layer_checks(rep, delta)
        return d

    items = list(enumerate(layers))
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as pool:
            entries = list(pool.map(one, items))
    else:
        entries = [one(it) for it in items]

    result = {
        "suite": manifest.get("name", ""),
        "delta": delta,
        "median_delta": median_delta,
        "layers": entries,
        "aggregate": summarize(entries, delta, median_delta),
    }
    if out_dir is not None:
        write_suite_outputs(result, out_dir, figures)
    return result


def to_json(result: dict) -> str:
    return json.dumps(result, sort_keys=True, indent=2) + "\n"


CSV_FIELDS = ("layer", "h", "o", "g", "scheme", "mse", "rel_fro", "max_abs", "calib_mse")


def write_suite_outputs(result: dict, out_dir, figures: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "aggregate.json", "csv": out / "layers.csv"}
    paths["json"].write_text(to_json(result))
    with open(paths["csv"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_FIELDS)
        for e in result["layers"]:
            for label, r in e.get("schemes", {}).items():
                w.writerow([e["name"], e["h"], e["o"], e["g"], label] + [repr(r[k]) for k in CSV_FIELDS[5:]])
    if figures:
        from . import plotting

        paths.update(plotting.suite_figures(result, out / "figures"))
    return paths
