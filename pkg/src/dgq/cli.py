"""``dgq`` command line: synth | calibrate | quantize | eval | compare | info.

Machine output (JSON) goes to stdout or ``--out``; diagnostics go to stderr.
The exit status is 0 exactly when the command completed without error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layer as fmt
from . import tensor as tio
from .pipeline import (
    ManifestError,
    PipelineConfig,
    evaluate_artifact,
    load_manifest,
    quantize_layer,
    run_suite,
    to_json,
    write_suite_outputs,
)
from .search import DEFAULT_GRID1, DEFAULT_GRID2, SearchConfig
from .smoothing import DEFAULT_PERCENTILE, SmoothScale

log = logging.getLogger("dgq")


class CliError(Exception):
    pass


@dataclass
class CliConfig:
    subcommand: str
    inputs: list[str] = field(default_factory=list)
    group_size: int = 128
    mode: str = "dynamic"
    grid1: tuple[float, ...] = DEFAULT_GRID1
    grid2: tuple[float, ...] = DEFAULT_GRID2
    percentile: float = DEFAULT_PERCENTILE
    seed: int = 0
    out: str | None = None
    verbosity: int = 0

    def __post_init__(self):
        if self.group_size <= 0:
            raise CliError(f"--group-size must be positive, got {self.group_size}")
        if self.mode not in ("static", "dynamic"):
            raise CliError(f"unknown mode {self.mode!r}")

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "CliConfig":
        inputs = [getattr(ns, k) for k in ("weight", "artifact", "eval", "file", "manifest") if getattr(ns, k, None)]
        inputs += list(getattr(ns, "calib", None) or [])
        return cls(
            subcommand=ns.command,
            inputs=[str(p) for p in inputs],
            group_size=getattr(ns, "group_size", 128),
            mode=getattr(ns, "mode", None) or "dynamic",
            grid1=getattr(ns, "grid1", None) or DEFAULT_GRID1,
            grid2=getattr(ns, "grid2", None) or DEFAULT_GRID2,
            percentile=getattr(ns, "percentile", DEFAULT_PERCENTILE),
            seed=getattr(ns, "seed", 0),
            out=getattr(ns, "out", None),
            verbosity=ns.verbose,
        )


def _grid(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty grid")
    return vals


def _emit(payload: str, out: str | None) -> None:
    if out:
        Path(out).write_text(payload)
    else:
        sys.stdout.write(payload)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _read_f32(path) -> np.ndarray:
    return np.asarray(tio.read_tensor(path), dtype=np.float32)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(ns, cfg: CliConfig) -> int:
    outliers = {"count": ns.outliers, "magnitude": ns.magnitude}
    t = tio.gen_synthetic(ns.rows, ns.cols, cfg.seed, outliers)
    tio.write_tensor(t, ns.out)
    idx = tio.outlier_columns(ns.rows, ns.cols, cfg.seed, outliers)
    _emit(_dumps({"out": ns.out, "shape": list(t.shape), "outlier_columns": idx.tolist()}), None)
    return 0


def cmd_calibrate(ns, cfg: CliConfig) -> int:
    from .pipeline import calibrate

    calib = [_read_f32(p) for p in ns.calib]
    sm, act = calibrate(calib, cfg.percentile, not ns.no_smooth, ns.fp16_scales)
    prefix = Path(ns.out)
    k_path = prefix.with_name(prefix.name + ".k.dgt")
    tio.write_tensor(tio.Tensor.from_array(sm.k.reshape(1, -1), "float32"), k_path)
    sidecar = {
        "k_file": k_path.name,
        "h": int(sm.k.size),
        "threshold": float(sm.threshold),
        "percentile": float(sm.percentile),
        "act_scale": float(act),
        "n_smoothed": int((sm.k > 1).sum()),
        "smoothed_channels": np.flatnonzero(sm.k > 1).tolist(),
        "calib_files": [str(Path(p).resolve()) for p in ns.calib],
    }
    text = _dumps(sidecar)
    prefix.with_name(prefix.name + ".json").write_text(text)
    sys.stdout.write(text)
    return 0


def _load_bundle(path):
    path = Path(path)
    meta = json.loads(path.read_text())
    k = _read_f32(path.parent / meta["k_file"]).reshape(-1)
    sm = SmoothScale(k=k, threshold=float(meta["threshold"]), percentile=float(meta["percentile"]))
    return meta, sm


def cmd_quantize(ns, cfg: CliConfig) -> int:
    W = _read_f32(ns.weight)
    smooth = act = None
    calib_paths = list(ns.calib or [])
    if ns.calib_bundle:
        meta, smooth = _load_bundle(ns.calib_bundle)
        act = float(meta["act_scale"])
        calib_paths = calib_paths or meta["calib_files"]
    if not calib_paths:
        raise CliError("quantize needs --calib files or a --calib-bundle")
    calib = [_read_f32(p) for p in calib_paths]
    pcfg = PipelineConfig(
        search=SearchConfig(
            group_size=cfg.group_size,
            grid1=cfg.grid1,
            grid2=cfg.grid2,
            s1_anchor=ns.s1_anchor,
            fp16_scales=ns.fp16_scales,
            workers=ns.workers,
        ),
        mode=cfg.mode,
        percentile=cfg.percentile,
        smooth=not ns.no_smooth,
    )
    if W.shape[0] % cfg.group_size:
        raise CliError(f"group size {cfg.group_size} does not divide weight rows {W.shape[0]}")
    layer, summary = quantize_layer(W, calib, pcfg, ns.scheme.upper(), smooth, act)
    fmt.write_dgq(layer, ns.out)
    if fmt.read_dgq(ns.out) != layer:
        raise CliError(f"round-trip check failed for {ns.out}")
    summary["out"] = str(ns.out)
    _emit(_dumps(summary), ns.summary)
    return 0


def cmd_eval(ns, cfg: CliConfig) -> int:
    try:
        layer = fmt.read_dgq(ns.artifact)
    except fmt.LayerValidationError as exc:
        raise CliError(f"invalid artifact {ns.artifact}: {exc}") from exc
    X = _read_f32(ns.eval)
    W = _read_f32(ns.weight)
    rep = evaluate_artifact(layer, X, W, name=Path(ns.artifact).stem, fp16=ns.fp16_epilogue)
    d = rep.to_dict()
    if ns.json or cfg.out:
        _emit(_dumps(d), cfg.out)
    else:
        for label, r in d["schemes"].items():
            print(f"{label}: mse={r['mse']:.6g} rel_fro={r['rel_fro']:.6g} max_abs={r['max_abs']:.6g}")
        ov = d["overflow"]
        print(f"overflow violations={ov['violations']} int32_safe={ov['int32_safe']}")
        print(f"bytes total={d['bytes']['total']} ratio_vs_int8={d['bytes']['ratio_vs_int8']:.4f}")
    return 0


def cmd_compare(ns, cfg: CliConfig) -> int:
    if ns.standard == bool(ns.manifest):
        raise CliError("compare takes exactly one of MANIFEST or --standard")
    if ns.standard:
        from .data import STANDARD_SUITE

        manifest = load_manifest(STANDARD_SUITE)
    else:
        manifest = load_manifest(ns.manifest)
    result = run_suite(manifest, workers=ns.workers)
    if ns.out_dir:
        paths = write_suite_outputs(result, ns.out_dir, figures=not ns.no_figures)
        for name, p in sorted(paths.items()):
            log.info("wrote %s: %s", name, p)
        sys.stdout.write(_dumps(result["aggregate"]))
    else:
        sys.stdout.write(to_json(result))
    agg = result["aggregate"]
    for e in result["layers"]:
        if "error" in e:
            print(f"dgq: layer {e['name']} failed: {e['error']}", file=sys.stderr)
    if agg["n_failed"]:
        return 1
    if ns.strict and agg["checks"]["all"] is False:
        failed = sorted(k for k, v in agg["checks"].items() if v is False and k != "all")
        print(f"dgq: suite checks failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _info(path: Path) -> dict:
    buf = path.read_bytes()
    magic = buf[:4]
    if magic == tio.MAGIC:
        t = tio.tensor_from_bytes(buf)
        arr = np.asarray(t.data)
        d = {"format": "DGT1", "dtype": t.dtype.name.lower(), "rows": t.rows, "cols": t.cols, "bytes": len(buf)}
        if arr.size:
            a = arr.astype(np.float64)
            d.update(min=float(a.min()), max=float(a.max()), mean=float(a.mean()))
        return d
    if magic == fmt.MAGIC:
        layer = fmt.layer_from_bytes(buf)
        return {
            "format": "DGQ1",
            "h": layer.h,
            "o": layer.o,
            "g": layer.g,
            "mode": layer.mode,
            "act_scale": layer.act_scale,
            "bytes": len(buf),
            "sections": fmt.section_sizes(layer.h, layer.o, layer.g),
            "accounting": fmt.byte_accounting(layer),
            "S2": {"min": int(layer.S2.min()), "max": int(layer.S2.max())},
            "n_smoothed": int((layer.k > 1).sum()),
            "overflow_violations": fmt.overflow_violations(layer),
        }
    raise CliError(f"{path}: unrecognized magic {magic!r} (expected DGT1 or DGQ1)")


def cmd_info(ns, cfg: CliConfig) -> int:
    _emit(_dumps(_info(Path(ns.file))), None)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dgq", description="Dual-grained A8W4 post-training quantization.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a seeded synthetic tensor")
    s.add_argument("--rows", type=int, required=True)
    s.add_argument("--cols", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--outliers", type=int, default=0, help="number of amplified columns")
    s.add_argument("--magnitude", type=float, default=50.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("calibrate", help="smoothing vector and activation scale from calibration data")
    c.add_argument("calib", nargs="+", help="calibration tensors (DGT1, float32, b x h)")
    c.add_argument("--percentile", type=float, default=DEFAULT_PERCENTILE)
    c.add_argument("--no-smooth", action="store_true")
    c.add_argument("--fp16-scales", action="store_true")
    c.add_argument("--out", required=True, help="output prefix: PREFIX.k.dgt and PREFIX.json")
    c.set_defaults(func=cmd_calibrate)

    q = sub.add_parser("quantize", help="search and write a DGQ1 artifact")
    q.add_argument("weight", help="weight tensor (DGT1, float32, h x o)")
    q.add_argument("--calib-bundle", help="sidecar JSON written by calibrate")
    q.add_argument("--calib", nargs="+", help="calibration tensors (override the bundle's list)")
    q.add_argument("--group-size", type=int, default=128)
    _mode_flags(q)
    q.add_argument("--percentile", type=float, default=DEFAULT_PERCENTILE)
    q.add_argument("--no-smooth", action="store_true")
    q.add_argument("--grid1", type=_grid, help="phase-1 alpha grid, comma-separated")
    q.add_argument("--grid2", type=_grid, help="phase-2 alpha grid, comma-separated (must contain 1)")
    q.add_argument("--scheme", choices=("dgq-2p", "dgq-rtn"), default="dgq-2p")
    q.add_argument("--s1-anchor", choices=("weight", "group_scale"), default="weight")
    q.add_argument("--fp16-scales", action="store_true")
    q.add_argument("--workers", type=int, default=1)
    q.add_argument("--out", required=True, help="output .dgq file")
    q.add_argument("--summary", help="write the summary JSON here instead of stdout")
    q.set_defaults(func=cmd_quantize)

    e = sub.add_parser("eval", help="run the integer path of an artifact against float X @ W")
    e.add_argument("artifact")
    e.add_argument("eval", help="evaluation activations (DGT1, b x h)")
    e.add_argument("--weight", required=True, help="reference float weight (DGT1, h x o)")
    e.add_argument("--json", action="store_true", help="full report as JSON")
    e.add_argument("--fp16-epilogue", action="store_true")
    e.add_argument("--out", help="write the JSON report here")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("compare", help="run a suite manifest over all schemes")
    m.add_argument("manifest", nargs="?")
    m.add_argument("--standard", action="store_true", help="use the bundled standard suite")
    m.add_argument("--out-dir", help="write aggregate.json, layers.csv and figures/ here")
    m.add_argument("--workers", type=int, default=1)
    m.add_argument("--no-figures", action="store_true")
    m.add_argument("--strict", action="store_true", help="exit 1 when any suite check fails")
    m.set_defaults(func=cmd_compare)

    i = sub.add_parser("info", help="print the header and summary of a DGT1 or DGQ1 file")
    i.add_argument("file")
    i.set_defaults(func=cmd_info)
    return p


def _mode_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--mode", choices=("static", "dynamic"), dest="mode")
    g.add_argument("--static", action="store_const", const="static", dest="mode")
    g.add_argument("--dynamic", action="store_const", const="dynamic", dest="mode")


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(ns.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = CliConfig.from_args(ns)
        return ns.func(ns, cfg)
    except FileNotFoundError as exc:
        print(f"dgq: error: no such file: {exc.filename}", file=sys.stderr)
    except fmt.LayerValidationError as exc:
        print(f"dgq: error: invalid artifact: {exc}", file=sys.stderr)
    except (CliError, ManifestError, tio.TensorFormatError, ValueError, KeyError) as exc:
        print(f"dgq: error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
