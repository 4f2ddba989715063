"""Two-phase grid search for dual-grained weight parameters.

Phase 1 picks, per (group, output column), an asymmetric 4-bit scale ``S'``
and zero-point ``ZP`` by grid-searching the clipping ratio ``alpha`` against
the group's partial-product error ``||X_k W_k - X_hat_k Q(W_k)||^2``.

Phase 2 splits ``S'`` into a float channel scale ``s1`` and an integer group
scale ``S2 = round(S' / s1)`` in ``[1, 127]``, grid-searching ``alpha`` for
``s1`` per column against the full-column output error, and re-quantizes the
original weights with ``S = s1 * S2`` under the fused clip interval so that
``S2 * (code - ZP)`` always fits in ``[-127, 127]``.

All searches parallelize over output columns. Columns are processed in fixed
blocks of ``SearchConfig.block_cols`` regardless of worker count, so results
are bit-identical for any ``workers`` value.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .quant import SCALE_EPS, compute_params, per_group, quantize, to_fp16

INT8_LIMIT = 127
S2_MAX = 127
# candidates within this relative distance of the best error count as ties
TIE_RTOL = 1e-9

DEFAULT_GRID1 = tuple(round(0.50 + 0.01 * i, 2) for i in range(51))
DEFAULT_GRID2 = tuple(round(0.80 + 0.01 * i, 2) for i in range(21))


class SearchInvariantError(RuntimeError):
    """A search produced parameters that violate a structural guarantee."""


@dataclass(frozen=True)
class SearchConfig:
    group_size: int = 128
    n_bits: int = 4
    grid1: tuple[float, ...] = DEFAULT_GRID1
    grid2: tuple[float, ...] = DEFAULT_GRID2
    # "weight": s1 = alpha * max|W[:, c]| / 127
    # "group_scale": s1 = alpha * max_k S'[k, c] / 127
    s1_anchor: str = "weight"
    fp16_scales: bool = False
    workers: int = 1
    block_cols: int = 128

    def __post_init__(self):
        if self.group_size < 1:
            raise ValueError("group_size must be positive")
        for name in ("grid1", "grid2"):
            grid = tuple(sorted(float(a) for a in getattr(self, name)))
            if not grid:
                raise ValueError(f"{name} is empty")
            if grid[0] <= 0 or grid[-1] > 1:
                raise ValueError(f"{name} values must lie in (0, 1]")
            object.__setattr__(self, name, grid)
        if 1.0 not in self.grid2:
            raise ValueError("grid2 must contain 1.0 so the search dominates RTN")
        if self.s1_anchor not in ("weight", "group_scale"):
            raise ValueError(f"unknown s1_anchor {self.s1_anchor!r}")
        if self.workers < 1 or self.block_cols < 1:
            raise ValueError("workers and block_cols must be positive")

    @property
    def qmax(self) -> int:
        return 2**self.n_bits - 1


@dataclass
class GroupParams:
    S_prime: np.ndarray  # float32 (n_g, o)
    ZP: np.ndarray  # int32 (n_g, o)
    codes: np.ndarray  # uint8 (h, o)
    alpha: np.ndarray  # float64 (n_g, o), winning ratio
    error: np.ndarray  # float64 (n_g, o), winning partial-product error
    group_size: int
    evaluations: int = 0

    @property
    def n_groups(self) -> int:
        return self.S_prime.shape[0]


@dataclass
class DualParams:
    s1: np.ndarray  # float32 (o,)
    S2: np.ndarray  # int8 (n_g, o)
    ZP: np.ndarray  # int32 (n_g, o)
    codes: np.ndarray  # uint8 (h, o), inside the clip interval
    group_size: int
    alpha: np.ndarray = field(default_factory=lambda: np.empty(0))  # (o,)
    error: np.ndarray | None = None  # (o,) column output error, if evaluated
    evaluations: int = 0

    @property
    def scales(self) -> np.ndarray:
        """Effective float group scales ``s1 * S2`` (float64, exact)."""
        return self.s1.astype(np.float64)[None, :] * self.S2.astype(np.float64)


def clip_interval(S2, ZP, rounding: str = "trunc", qmax: int = 15, limit: int = INT8_LIMIT):
    """Fused 4-bit code bounds keeping ``S2 * (code - ZP)`` within ``+-limit``.

    ``rounding="trunc"`` uses ``floor(limit / S2)`` and is exact. ``"nearest"``
    rounds ``limit / S2`` half-to-even, which admits overflowing codes for some
    ``S2`` (e.g. 16 * 8 = 128); it is kept for comparison only. Works on scalars
    and arrays.
    """
    S2 = np.asarray(S2, dtype=np.int64)
    ZP = np.asarray(ZP, dtype=np.int64)
    if np.any(S2 < 1):
        raise ValueError("S2 must be >= 1")
    if rounding == "trunc":
        reach = limit // S2
    elif rounding == "nearest":
        reach = np.rint(limit / S2).astype(np.int64)
    else:
        raise ValueError(f"unknown rounding {rounding!r}")
    lo = np.maximum(0, ZP - reach)
    hi = np.minimum(qmax, ZP + reach)
    if np.any(lo > hi):
        raise SearchInvariantError("empty clip interval; zero-point outside the code range")
    if lo.ndim == 0:
        return int(lo), int(hi)
    return lo, hi


@dataclass
class IntervalReport:
    pairs_checked: int
    codes_checked: int
    counterexamples: list  # (S2, ZP, code, S2 * (code - ZP), in_interval)

    @property
    def ok(self) -> bool:
        return not self.counterexamples


def fused_interval_oracle(
    s2_range=range(1, S2_MAX + 1), zp_range=range(16), rounding: str = "trunc"
) -> IntervalReport:
    """Enumerate every (S2, ZP, code) and compare the fused interval with the raw constraints."""
    bad = []
    pairs = codes = 0
    for s2 in s2_range:
        for zp in zp_range:
            lo, hi = clip_interval(s2, zp, rounding)
            pairs += 1
            for code in range(16):
                codes += 1
                prod = s2 * (code - zp)
                inside = lo <= code <= hi
                allowed = -INT8_LIMIT <= prod <= INT8_LIMIT and 0 <= code <= 15
                if inside != allowed:
                    bad.append((s2, zp, code, prod, inside))
    return IntervalReport(pairs, codes, bad)


def _select(errors: np.ndarray, alphas: tuple[float, ...]):
    """Smallest alpha whose error is within TIE_RTOL of the best, along axis 0."""
    best = errors.min(axis=0)
    idx = np.argmax(errors <= best * (1 + TIE_RTOL), axis=0)
    chosen = np.take_along_axis(errors, idx[None], axis=0)[0]
    return idx, np.asarray(alphas)[idx], chosen


def _blocks(o: int, cfg: SearchConfig):
    return [slice(c, min(c + cfg.block_cols, o)) for c in range(0, o, cfg.block_cols)]


def _map_blocks(fn, o: int, cfg: SearchConfig):
    blocks = _blocks(o, cfg)
    if cfg.workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            return list(pool.map(fn, blocks))
    return [fn(b) for b in blocks]


def _check_shapes(W, X, X_hat, g):
    if X.shape != X_hat.shape:
        raise ValueError("X and X_hat must have the same shape")
    if X.shape[1] != W.shape[0]:
        raise ValueError(f"activation width {X.shape[1]} != weight rows {W.shape[0]}")
    if W.shape[0] % g:
        raise ValueError(f"group size {g} does not divide h={W.shape[0]}")


def phase1_search(W, X, X_hat, cfg: SearchConfig) -> GroupParams:
    """Group-wise scale/zero-point search minimizing each group's partial-product error.

    Args:
        W: ``h x o`` weights (already smoothed).
        X: float calibration activations ``b x h`` (the target side).
        X_hat: the same activations after activation fake-quantization (or ``X``
            itself for weight-only evaluation).
        cfg: grids and group size.
    """
    W = np.asarray(W, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    g = cfg.group_size
    _check_shapes(W, X, X_hat, g)
    h, o = W.shape
    n_g = h // g
    gran = per_group(g)
    alphas = cfg.grid1
    groups = [slice(k * g, (k + 1) * g) for k in range(n_g)]

    def run(cols: slice):
        Wb = W[:, cols]
        nb = Wb.shape[1]
        refs = [X[:, sl] @ Wb[sl] for sl in groups]
        errs = np.empty((len(alphas), n_g, nb))
        cand = []
        for ai, a in enumerate(alphas):
            p = compute_params(Wb, gran, cfg.n_bits, symmetric=False, alpha=a)
            q = quantize(Wb, p)
            w_hat = (q - gran.expand(p.zero_points, q.shape)) * gran.expand(
                p.scales.astype(np.float64), q.shape
            )
            for k, sl in enumerate(groups):
                d = refs[k] - X_hat[:, sl] @ w_hat[sl]
                errs[ai, k] = np.einsum("ij,ij->j", d, d)
            cand.append((p.scales, p.zero_points, q))
        idx, alpha, err = _select(errs, alphas)
        S = np.empty((n_g, nb), np.float32)
        Z = np.empty((n_g, nb), np.int32)
        Q = np.empty((h, nb), np.uint8)
        for ai in np.unique(idx):
            m = idx == ai
            s, z, q = cand[ai]
            S[m], Z[m] = s[m], z[m]
            rows = np.repeat(m, g, axis=0)
            Q[rows] = q[rows]
        return S, Z, Q, alpha, err

    parts = _map_blocks(run, o, cfg)
    return GroupParams(
        S_prime=np.concatenate([p[0] for p in parts], axis=1),
        ZP=np.concatenate([p[1] for p in parts], axis=1),
        codes=np.concatenate([p[2] for p in parts], axis=1),
        alpha=np.concatenate([p[3] for p in parts], axis=1),
        error=np.concatenate([p[4] for p in parts], axis=1),
        group_size=g,
        evaluations=len(alphas) * n_g * o,
    )


def channel_scale(W, S_prime, alpha: float, cfg: SearchConfig) -> np.ndarray:
    """Candidate float32 channel scales ``s1`` for one alpha."""
    if cfg.s1_anchor == "weight":
        anchor = np.abs(np.asarray(W, dtype=np.float64)).max(axis=0)
    else:
        anchor = np.asarray(S_prime, dtype=np.float64).max(axis=0)
    s1 = np.maximum(alpha * anchor / INT8_LIMIT, SCALE_EPS).astype(np.float32)
    return to_fp16(s1) if cfg.fp16_scales else s1


def decompose(W, S_prime, ZP, s1, group_size: int, qmax: int = 15):
    """Split ``S'`` with a given ``s1`` and re-quantize ``W`` under the clip interval.

    Returns ``(S2, codes, w_hat)`` with ``w_hat`` the float64 reconstruction.
    """
    W = np.asarray(W, dtype=np.float64)
    s1 = np.asarray(s1, dtype=np.float32).astype(np.float64)
    S2 = np.clip(np.rint(np.asarray(S_prime, dtype=np.float64) / s1[None, :]), 1, S2_MAX)
    S2 = S2.astype(np.int64)
    lo, hi = clip_interval(S2, ZP, "trunc", qmax=qmax)
    rep = lambda a: np.repeat(a, group_size, axis=0)  # noqa: E731
    S = rep(s1[None, :] * S2)
    Z = rep(np.asarray(ZP, dtype=np.int64))
    q = np.clip(np.rint(W / S) + Z, rep(lo), rep(hi)).astype(np.int64)
    return S2.astype(np.int8), q.astype(np.uint8), (q - Z) * S


def _phase2(W, gp: GroupParams, X, X_hat, cfg: SearchConfig, alphas) -> DualParams:
    W = np.asarray(W, dtype=np.float64)
    if X is not None:
        X = np.asarray(X, dtype=np.float64)
        X_hat = np.asarray(X_hat, dtype=np.float64)
        _check_shapes(W, X, X_hat, gp.group_size)
    h, o = W.shape
    g = gp.group_size

    def run(cols: slice):
        Wb, Sp, Zb = W[:, cols], gp.S_prime[:, cols], gp.ZP[:, cols]
        ref = X @ Wb if X is not None else None
        errs = np.zeros((len(alphas), Wb.shape[1]))
        cand = []
        for ai, a in enumerate(alphas):
            s1 = channel_scale(Wb, Sp, a, cfg)
            S2, q, w_hat = decompose(Wb, Sp, Zb, s1, g, cfg.qmax)
            if ref is not None:
                d = ref - X_hat @ w_hat
                errs[ai] = np.einsum("ij,ij->j", d, d)
            cand.append((s1, S2, q))
        idx, alpha, err = _select(errs, alphas)
        s1 = np.empty(Wb.shape[1], np.float32)
        S2 = np.empty(Sp.shape, np.int8)
        Q = np.empty(Wb.shape, np.uint8)
        for ai in np.unique(idx):
            m = idx == ai
            s, s2, q = cand[ai]
            s1[m], S2[:, m], Q[:, m] = s[m], s2[:, m], q[:, m]
        return s1, S2, Q, alpha, err

    parts = _map_blocks(run, o, cfg)
    return DualParams(
        s1=np.concatenate([p[0] for p in parts]),
        S2=np.concatenate([p[1] for p in parts], axis=1),
        ZP=gp.ZP.copy(),
        codes=np.concatenate([p[2] for p in parts], axis=1),
        group_size=g,
        alpha=np.concatenate([p[3] for p in parts]),
        error=np.concatenate([p[4] for p in parts]) if X is not None else None,
        evaluations=len(alphas) * o if X is not None else 0,
    )


def phase2_search(W, gp: GroupParams, X, X_hat, cfg: SearchConfig) -> DualParams:
    """Per-column search of the channel scale against the full output error."""
    return _phase2(W, gp, X, X_hat, cfg, cfg.grid2)


def rtn_dgq(W, gp: GroupParams, cfg: SearchConfig | None = None, X=None, X_hat=None) -> DualParams:
    """The alpha = 1 decomposition with no error-driven selection.

    When ``X``/``X_hat`` are given the column errors are filled in for reporting.
    """
    cfg = cfg or SearchConfig(group_size=gp.group_size)
    return _phase2(W, gp, X, X_hat, cfg, (1.0,))
