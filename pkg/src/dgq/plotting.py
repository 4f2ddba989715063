"""Figures for suite reports, written next to ``aggregate.json`` and ``layers.csv``."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}

SCHEME_COLORS = {
    "CW": "#8c8c8c",
    "GW": "#1f77b4",
    "DGQ-RTN": "#d62728",
    "DGQ-2P": "#2ca02c",
}


def _ok_layers(result: dict) -> list[dict]:
    return [e for e in result["layers"] if "error" not in e]


def scheme_error_figure(result: dict, path) -> Path | None:
    """Grouped bars of eval-set output MSE per layer and scheme (log scale)."""
    layers = _ok_layers(result)
    order = list(SCHEME_COLORS)
    labels = sorted(
        {lab for e in layers for lab in e["schemes"] if lab != "FP-REF"},
        key=lambda lab: (order.index(lab.split("/")[0]), lab),
    )
    if not layers or not labels:
        return None
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(layers) + 2), 3.2))
        width = 0.8 / len(labels)
        x = np.arange(len(layers))
        for i, lab in enumerate(labels):
            vals = [e["schemes"].get(lab, {}).get("mse", np.nan) for e in layers]
            ax.bar(
                x + (i - (len(labels) - 1) / 2) * width,
                vals,
                width,
                label=lab,
                color=SCHEME_COLORS.get(lab.split("/")[0]),
            )
        ax.set_yscale("log")
        ax.set_xticks(x)
        ax.set_xticklabels([e["name"] for e in layers], rotation=30, ha="right")
        ax.set_ylabel("output MSE vs FP-REF")
        ax.legend(ncol=2, frameon=False)
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return Path(path)


def ratio_figure(result: dict, path) -> Path | None:
    """DGQ-2P / GW MSE ratio per layer against the 1 + delta tolerance."""
    layers = _ok_layers(result)
    ratios = result["aggregate"]["ratio_dgq2p_over_gw"]["per_layer"]
    if not ratios:
        return None
    names = [
        e["name"]
        for e in layers
        if any(k.startswith("GW") for k in e["schemes"])
        and any(k.startswith("DGQ-2P") for k in e["schemes"])
    ]
    delta = result.get("delta", 0.10)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(ratios) + 2), 3.0))
        x = np.arange(len(ratios))
        ax.plot(x, ratios, "o-", color=SCHEME_COLORS["DGQ-2P"], label="DGQ-2P / GW")
        ax.axhline(1.0, color="k", lw=0.8)
        ax.axhline(1 + delta, color="r", ls="--", lw=0.8, label=f"1 + delta ({delta:g})")
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("MSE ratio")
        ax.legend(frameon=False)
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return Path(path)


def alpha_histogram_figure(result: dict, path) -> Path | None:
    """Chosen clipping ratios across the suite, one panel per search phase."""
    totals: dict[str, dict[float, int]] = {"phase1": {}, "phase2": {}}
    for e in _ok_layers(result):
        for phase, hist in e.get("alpha_histogram", {}).items():
            for a, n in hist.items():
                totals[phase][float(a)] = totals[phase].get(float(a), 0) + n
    if not any(totals.values()):
        return None
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=(7.0, 2.8))
        for ax, (phase, hist) in zip(axes, totals.items()):
            if hist:
                a = sorted(hist)
                ax.bar(a, [hist[v] for v in a], width=0.008, color="#444444")
            ax.set_title(phase)
            ax.set_xlabel("alpha")
        axes[0].set_ylabel("count")
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return Path(path)


def suite_figures(result: dict, fig_dir) -> dict[str, Path]:
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    made = {
        "fig_errors": scheme_error_figure(result, fig_dir / "scheme_mse.png"),
        "fig_ratio": ratio_figure(result, fig_dir / "dgq2p_over_gw.png"),
        "fig_alpha": alpha_histogram_figure(result, fig_dir / "alpha_histogram.png"),
    }
    return {k: v for k, v in made.items() if v is not None}
