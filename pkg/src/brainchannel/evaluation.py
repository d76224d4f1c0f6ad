"""Reconstruction-error metrics, the symbol-length sweep, and estimator comparison."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError, ShapeError
from .estimators import ChannelTensor, StareConfig, estimate_sequence
from .frontend import BandpassSpec, Recording, SegmentationPlan, frames_from_recordings
from .graph import ElectrodeGraph

__all__ = [
    "mse_frequency",
    "aggregate_mse_avg",
    "MseRecord",
    "MseReport",
    "evaluate_tensor",
    "SweepRow",
    "SweepResult",
    "sweep_symbol_length",
    "ComparisonRow",
    "ComparisonResult",
    "percent_reduction",
    "comparison_from_means",
    "compare_estimators",
    "write_metrics_csv",
    "write_metrics_json",
    "write_sweep_csv",
    "write_sweep_json",
    "write_compare_csv",
    "write_compare_json",
    "DEFAULT_REGIME_BOUNDARIES_1KHZ",
]

ESTIMATOR_NAMES = ("ls", "mmse", "stare")

# Default sweep-regime partition for 1 kHz recordings (short / mid / long L).
DEFAULT_REGIME_BOUNDARIES_1KHZ = (13000, 49000)


def mse_frequency(Y_true: np.ndarray, H_hat: np.ndarray, X: np.ndarray) -> float:
    """Raw squared reconstruction error ||Y_true - H_hat @ X||_F^2."""
    Y_true = np.asarray(Y_true)
    H_hat = np.asarray(H_hat)
    X = np.asarray(X)
    if H_hat.shape[1] != X.shape[0] or Y_true.shape != (H_hat.shape[0], X.shape[1]):
        raise ShapeError(
            f"shapes do not conform: Y {Y_true.shape}, H {H_hat.shape}, X {X.shape}"
        )
    return float(np.linalg.norm(Y_true - H_hat @ X) ** 2)


def aggregate_mse_avg(values) -> float:
    """Arithmetic mean over all (frame, bin) reconstruction errors."""
    values = list(values)
    if not values:
        raise InvalidInputError("no MSE values to aggregate")
    return float(np.mean(values))


@dataclass(frozen=True)
class MseRecord:
    frame: int
    bin_index: int
    bin_hz: float
    raw_mse: float
    nmse: float | None
    channel_nmse: float | None = None


@dataclass(frozen=True)
class MseReport:
    """Per-(frame, bin) reconstruction errors plus their aggregates."""

    records: tuple[MseRecord, ...]
    mse_avg: float
    nmse_avg: float | None
    channel_nmse_avg: float | None
    mode: str
    method: str = ""


def evaluate_tensor(
    tensor: ChannelTensor,
    frames,
    true_channels: ChannelTensor | None = None,
    mode: str = "insample",
) -> MseReport:
    """Score a channel tensor against the frames it should reconstruct.

    "insample" reconstructs each frame with its own estimate, matching how
    the estimates were fit. "heldout" reconstructs frame k+1 with frame k's
    estimate, an honesty option that measures one-step generalization (the
    last frame has no successor, so K-1 records per bin).

    When true_channels is given (synthetic data), each record also carries the
    channel-domain error ||H_hat - H_true||_F^2 / ||H_true||_F^2.
    """
    if mode not in ("insample", "heldout"):
        raise ConfigError(f"mode must be 'insample' or 'heldout', got {mode!r}")
    by_key = {(fr.frame_index_k, fr.bin_index): fr for fr in frames}
    records = []
    for k in range(1, tensor.num_frames_K + 1):
        for j, b in enumerate(tensor.bin_indices):
            est_k = k
            if mode == "heldout":
                if k == tensor.num_frames_K:
                    continue
                target = by_key[(k + 1, b)]
            else:
                target = by_key[(k, b)]
            H = tensor.data[est_k - 1, j]
            raw = mse_frequency(target.Y, H, target.X)
            denom = float(np.linalg.norm(target.Y) ** 2)
            nmse = raw / denom if denom > 0 else (0.0 if raw == 0.0 else None)
            ch = None
            if true_channels is not None:
                Ht = true_channels.data[target.frame_index_k - 1, j]
                tnorm = float(np.linalg.norm(Ht) ** 2)
                if tnorm > 0:
                    ch = float(np.linalg.norm(H - Ht) ** 2 / tnorm)
            records.append(MseRecord(target.frame_index_k, b, tensor.bins_hz[j], raw, nmse, ch))
    if not records:
        raise InvalidInputError("evaluation produced no records (heldout needs K >= 2)")
    nmses = [r.nmse for r in records if r.nmse is not None]
    chans = [r.channel_nmse for r in records if r.channel_nmse is not None]
    return MseReport(
        records=tuple(records),
        mse_avg=aggregate_mse_avg([r.raw_mse for r in records]),
        nmse_avg=float(np.mean(nmses)) if nmses else None,
        channel_nmse_avg=float(np.mean(chans)) if chans else None,
        mode=mode,
        method=tensor.method,
    )


# ---------------------------------------------------------------------------
# Symbol-length sweep.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    estimator: str
    symbol_len_L: int
    delta_f_hz: float
    mse_avg: float
    nmse_avg: float | None
    channel_nmse: float | None = None
    runtime_ms: float | None = None


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    warnings: tuple[str, ...] = ()
    regime_means: dict = field(default_factory=dict)

    def mse_by_length(self, estimator: str) -> dict[int, float]:
        return {r.symbol_len_L: r.mse_avg for r in self.rows if r.estimator == estimator}


def _regime_means(rows, boundaries) -> dict:
    lo, hi = boundaries
    out: dict[str, dict[str, float | None]] = {}
    for est in sorted({r.estimator for r in rows}):
        short = [r.mse_avg for r in rows if r.estimator == est and r.symbol_len_L < lo]
        mid = [r.mse_avg for r in rows if r.estimator == est and lo <= r.symbol_len_L <= hi]
        long_ = [r.mse_avg for r in rows if r.estimator == est and r.symbol_len_L > hi]
        out[est] = {
            f"L<{lo}": float(np.mean(short)) if short else None,
            f"{lo}<=L<={hi}": float(np.mean(mid)) if mid else None,
            f"L>{hi}": float(np.mean(long_)) if long_ else None,
        }
    return out


def sweep_symbol_length(
    src: Recording,
    rcv: Recording,
    l_grid,
    symbols_per_frame_M: int,
    estimators=("ls",),
    graph: ElectrodeGraph | None = None,
    stare_cfg: StareConfig | None = None,
    noise_var: float | None = None,
    max_freq_hz: float = 30.0,
    bandpass: BandpassSpec | None = BandpassSpec(),
    true_channels_fn=None,
    regime_boundaries=DEFAULT_REGIME_BOUNDARIES_1KHZ,
    jobs: int = 1,
    timing: bool = False,
) -> SweepResult:
    """Re-run frontend + estimation + scoring for every symbol length in l_grid.

    Filtering happens once (it does not depend on L). Grid values that exceed
    the recording length produce a warning record instead of a row. Rows come
    back sorted by (L, estimator). true_channels_fn, when given, maps a plan
    to a ground-truth tensor so rows can carry channel-domain error.
    """
    l_grid = sorted(set(int(l) for l in l_grid))
    if not l_grid:
        raise InvalidInputError("empty symbol-length grid")
    for est in estimators:
        if est not in ESTIMATOR_NAMES:
            raise ConfigError(f"unknown estimator {est!r}")
    if bandpass is not None:
        from .frontend import bandpass_filter

        src = bandpass_filter(src, bandpass)
        rcv = bandpass_filter(rcv, bandpass)
    rows: list[SweepRow] = []
    warnings: list[str] = []
    T = src.num_samples
    for L in l_grid:
        if L * symbols_per_frame_M > T:
            warnings.append(
                f"L={L}: needs {L * symbols_per_frame_M} samples for one frame, "
                f"recording has {T}; row skipped"
            )
            continue
        plan = SegmentationPlan(L, symbols_per_frame_M, src.sample_rate_hz, max_freq_hz, T)
        frames = frames_from_recordings(src, rcv, plan, bandpass=None)
        truth = true_channels_fn(plan) if true_channels_fn is not None else None
        for est in estimators:
            t0 = time.perf_counter()
            tensor = estimate_sequence(
                frames, method=est, graph=graph, cfg=stare_cfg, noise_var=noise_var, jobs=jobs
            )
            report = evaluate_tensor(tensor, frames, true_channels=truth)
            elapsed_ms = (time.perf_counter() - t0) * 1e3
            rows.append(
                SweepRow(
                    estimator=est,
                    symbol_len_L=L,
                    delta_f_hz=plan.delta_f_hz,
                    mse_avg=report.mse_avg,
                    nmse_avg=report.nmse_avg,
                    channel_nmse=report.channel_nmse_avg,
                    runtime_ms=elapsed_ms if timing else None,
                )
            )
    rows.sort(key=lambda r: (r.symbol_len_L, r.estimator))
    return SweepResult(tuple(rows), tuple(warnings), _regime_means(rows, regime_boundaries))


# ---------------------------------------------------------------------------
# Estimator comparison.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    estimator: str
    grand_mean_mse: float
    pct_reduction_vs_ls: float | None
    pct_reduction_vs_mmse: float | None


@dataclass(frozen=True)
class ComparisonResult:
    rows: tuple[ComparisonRow, ...]
    reports: dict = field(default_factory=dict)

    def row(self, estimator: str) -> ComparisonRow:
        for r in self.rows:
            if r.estimator == estimator:
                return r
        raise KeyError(estimator)


def percent_reduction(baseline: float, value: float) -> float:
    """(baseline - value) / baseline * 100."""
    if baseline == 0:
        raise InvalidInputError("baseline MSE is zero; reduction undefined")
    return (baseline - value) / baseline * 100.0


def comparison_from_means(means: dict[str, float]) -> ComparisonResult:
    """Build the comparison table from per-estimator grand-mean MSE values."""
    if not means:
        raise InvalidInputError("no estimator means given")
    ls = means.get("ls")
    mmse = means.get("mmse")
    rows = []
    for est in sorted(means):
        m = means[est]
        rows.append(
            ComparisonRow(
                estimator=est,
                grand_mean_mse=float(m),
                pct_reduction_vs_ls=percent_reduction(ls, m) if ls else None,
                pct_reduction_vs_mmse=percent_reduction(mmse, m) if mmse else None,
            )
        )
    return ComparisonResult(tuple(rows))


def compare_estimators(
    frames,
    graph: ElectrodeGraph | None = None,
    stare_cfg: StareConfig | None = None,
    noise_var: float | None = None,
    true_channels: ChannelTensor | None = None,
    estimators=ESTIMATOR_NAMES,
    jobs: int = 1,
) -> ComparisonResult:
    """Run each estimator on the same frames and tabulate grand-mean MSE.

    Percent reductions come from comparison_from_means, so feeding externally
    computed grand means through that helper reproduces the same arithmetic.
    """
    reports = {}
    for est in estimators:
        tensor = estimate_sequence(
            frames, method=est, graph=graph, cfg=stare_cfg, noise_var=noise_var, jobs=jobs
        )
        reports[est] = evaluate_tensor(tensor, frames, true_channels=true_channels)
    result = comparison_from_means({est: rep.mse_avg for est, rep in reports.items()})
    return ComparisonResult(result.rows, reports)


# ---------------------------------------------------------------------------
# CSV writers plus JSON mirrors. Formatting is fixed (repr round-trip floats,
# sorted keys) so identical inputs give byte-identical files.
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, float) and (math.isnan(v) or math.isinf(v)):
        return repr(v)
    return v


def write_metrics_csv(report: MseReport, path: str) -> None:
    _write_csv(
        path,
        ["frame", "bin", "bin_hz", "raw_mse", "nmse", "channel_nmse"],
        [
            (r.frame, r.bin_index, r.bin_hz, r.raw_mse, r.nmse, r.channel_nmse)
            for r in report.records
        ],
    )


def write_metrics_json(report: MseReport, path: str) -> None:
    _write_json(
        path,
        {
            "method": report.method,
            "mode": report.mode,
            "mse_avg": _jsonable(report.mse_avg),
            "nmse_avg": _jsonable(report.nmse_avg),
            "channel_nmse_avg": _jsonable(report.channel_nmse_avg),
            "records": [
                {
                    "frame": r.frame,
                    "bin": r.bin_index,
                    "bin_hz": r.bin_hz,
                    "raw_mse": _jsonable(r.raw_mse),
                    "nmse": _jsonable(r.nmse),
                    "channel_nmse": _jsonable(r.channel_nmse),
                }
                for r in report.records
            ],
        },
    )


SWEEP_CSV_HEADER = ["estimator", "L", "delta_f_hz", "mse_avg", "nmse_avg", "channel_nmse", "runtime_ms"]


def write_sweep_csv(result: SweepResult, path: str) -> None:
    _write_csv(
        path,
        SWEEP_CSV_HEADER,
        [
            (r.estimator, r.symbol_len_L, r.delta_f_hz, r.mse_avg, r.nmse_avg, r.channel_nmse, r.runtime_ms)
            for r in result.rows
        ],
    )


def write_sweep_json(result: SweepResult, path: str) -> None:
    _write_json(
        path,
        {
            "rows": [
                {
                    "estimator": r.estimator,
                    "L": r.symbol_len_L,
                    "delta_f_hz": r.delta_f_hz,
                    "mse_avg": _jsonable(r.mse_avg),
                    "nmse_avg": _jsonable(r.nmse_avg),
                    "channel_nmse": _jsonable(r.channel_nmse),
                    "runtime_ms": _jsonable(r.runtime_ms),
                }
                for r in result.rows
            ],
            "warnings": list(result.warnings),
            "regime_means": {
                est: {k: _jsonable(v) for k, v in d.items()}
                for est, d in result.regime_means.items()
            },
        },
    )


COMPARE_CSV_HEADER = ["estimator", "grand_mean_mse", "pct_reduction_vs_ls", "pct_reduction_vs_mmse"]


def write_compare_csv(result: ComparisonResult, path: str) -> None:
    _write_csv(
        path,
        COMPARE_CSV_HEADER,
        [
            (r.estimator, r.grand_mean_mse, r.pct_reduction_vs_ls, r.pct_reduction_vs_mmse)
            for r in result.rows
        ],
    )


def write_compare_json(result: ComparisonResult, path: str) -> None:
    _write_json(
        path,
        {
            "rows": [
                {
                    "estimator": r.estimator,
                    "grand_mean_mse": _jsonable(r.grand_mean_mse),
                    "pct_reduction_vs_ls": _jsonable(r.pct_reduction_vs_ls),
                    "pct_reduction_vs_mmse": _jsonable(r.pct_reduction_vs_mmse),
                }
                for r in result.rows
            ]
        },
    )
