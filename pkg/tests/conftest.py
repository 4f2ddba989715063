import contextlib
import os
import sys
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    print_blob=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

# (number, title, passed, detail) rows printed in the terminal summary
ACCEPTANCE: list[tuple[int, str, bool, str]] = []


class Criterion:
    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.details: list[str] = []
        self.t0 = time.perf_counter()

    def note(self, text: str) -> None:
        self.details.append(text)

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.t0


@pytest.fixture
def criterion():
    """Context manager factory that records one acceptance line, pass or fail."""

    @contextlib.contextmanager
    def run(number: int, title: str):
        c = Criterion(number, title)
        try:
            yield c
        except BaseException as exc:
            msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            c.note(f"{type(exc).__name__}: {msg}"[:300])
            _record(c, False)
            raise
        _record(c, True)

    return run


def _record(c: Criterion, ok: bool) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {c.number:>2}: {c.title} ({c.elapsed:.2f}s)"
    if c.details:
        line += " | " + "; ".join(c.details)
    ACCEPTANCE.append((c.number, c.title, ok, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def standard_manifest():
    from dgq.data import STANDARD_SUITE
    from dgq.pipeline import load_manifest

    return load_manifest(STANDARD_SUITE)


@pytest.fixture(scope="session")
def suite_artifacts(standard_manifest):
    """Per standard-suite layer: inputs plus the DGQ-2P artifact, with build time."""
    from dgq.pipeline import layer_config, layer_inputs, quantize_layer

    t0 = time.perf_counter()
    out = []
    for entry in standard_manifest["layers"]:
        W, calib, ev = layer_inputs(entry, standard_manifest["base_dir"])
        layer, summary = quantize_layer(W, calib, layer_config(entry))
        out.append({"name": entry["name"], "W": W, "calib": calib, "eval": ev, "layer": layer, "summary": summary})
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def compare_runs(tmp_path_factory):
    """``dgq compare --standard`` with one and with two workers; returns output dirs and timings."""
    from dgq.cli import main

    runs = {}
    for workers in (1, 2):
        d = tmp_path_factory.mktemp(f"compare_w{workers}")
        t0 = time.perf_counter()
        code = main(["compare", "--standard", "--out-dir", str(d), "--workers", str(workers)])
        runs[workers] = {"dir": d, "code": code, "seconds": time.perf_counter() - t0}
    return runs
