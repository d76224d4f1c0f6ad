"""Time-domain frontend: filtering, segmentation, per-symbol DFT, frame assembly.

Turns a pair of multichannel recordings (source array, receiver array) into
per-frame, per-frequency-bin complex matrices ready for channel estimation.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal as _signal

from .errors import (
    AlignmentError,
    InsufficientDataError,
    InvalidInputError,
    InvalidSpecError,
    ShapeError,
)

__all__ = [
    "Recording",
    "BandpassSpec",
    "SegmentationPlan",
    "FrequencyFrame",
    "bandpass_filter",
    "segment",
    "dft_symbol",
    "assemble_frames",
    "frames_from_recordings",
    "save_recording",
    "load_recording",
    "read_recording_csv",
]

# Inclusive tolerance when deciding whether a bin frequency sits on the band edge.
_BIN_EDGE_EPS = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Recording:
    """Real-valued multichannel time series.

    samples is channels x time, float64. All operations treat the instance as
    immutable; the sample buffer is marked read-only on construction.
    """

    samples: np.ndarray
    sample_rate_hz: float
    channel_labels: tuple[str, ...]
    channel_positions: tuple[tuple[float, float, float], ...] | None = None

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidInputError(f"samples must be 2-D (channels x time), got ndim={arr.ndim}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError(f"recording must have >= 1 channel and >= 1 sample, got shape {arr.shape}")
        if not self.sample_rate_hz > 0:
            raise InvalidInputError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        labels = tuple(str(s) for s in self.channel_labels)
        if len(labels) != arr.shape[0]:
            raise InvalidInputError(
                f"{len(labels)} labels for {arr.shape[0]} channels"
            )
        object.__setattr__(self, "samples", _freeze(arr))
        object.__setattr__(self, "channel_labels", labels)
        if self.channel_positions is not None:
            pos = tuple(tuple(float(v) for v in p) for p in self.channel_positions)
            if len(pos) != arr.shape[0]:
                raise InvalidInputError(f"{len(pos)} positions for {arr.shape[0]} channels")
            if any(len(p) != 3 for p in pos):
                raise InvalidInputError("positions must be 3-D coordinates")
            object.__setattr__(self, "channel_positions", pos)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray) -> "Recording":
        """Same metadata, new sample buffer (must keep the channel count)."""
        if samples.shape[0] != self.num_channels:
            raise ShapeError("channel count must be preserved")
        return Recording(samples, self.sample_rate_hz, self.channel_labels, self.channel_positions)


@dataclass(frozen=True)
class BandpassSpec:
    """Butterworth bandpass description.

    zero_phase applies the filter forward and backward (no net phase shift,
    attenuation doubled in dB); single-pass causal mode is available by flag.
    """

    low_cut_hz: float = 0.3
    high_cut_hz: float = 400.0
    order: int = 4
    zero_phase: bool = True

    def validate_for(self, sample_rate_hz: float) -> None:
        nyq = sample_rate_hz / 2.0
        if not (0.0 < self.low_cut_hz < self.high_cut_hz < nyq):
            raise InvalidSpecError(
                f"need 0 < low ({self.low_cut_hz}) < high ({self.high_cut_hz}) < "
                f"Nyquist ({nyq})"
            )
        if self.order < 1:
            raise InvalidSpecError(f"order must be >= 1, got {self.order}")

    def sos(self, sample_rate_hz: float) -> np.ndarray:
        """Designed second-order sections for the given sample rate."""
        self.validate_for(sample_rate_hz)
        return _signal.butter(
            self.order,
            [self.low_cut_hz, self.high_cut_hz],
            btype="bandpass",
            fs=sample_rate_hz,
            output="sos",
        )

    def magnitude_response(self, freqs_hz, sample_rate_hz: float) -> np.ndarray:
        """|H(f)| of the designed filter, squared once more when zero_phase."""
        w, h = _signal.sosfreqz(self.sos(sample_rate_hz), worN=np.atleast_1d(freqs_hz), fs=sample_rate_hz)
        mag = np.abs(h)
        return mag**2 if self.zero_phase else mag


def bandpass_filter(rec: Recording, spec: BandpassSpec = BandpassSpec()) -> Recording:
    """Filter every channel with the designed Butterworth bandpass.

    Zero-phase mode trims nothing; the output stays sample-aligned with the
    input so source/receiver pairs keep a common clock.
    """
    if rec.samples.size == 0:
        raise InvalidInputError("empty recording")
    spec.validate_for(rec.sample_rate_hz)
    sos = spec.sos(rec.sample_rate_hz)
    try:
        if spec.zero_phase:
            out = _signal.sosfiltfilt(sos, rec.samples, axis=1)
        else:
            out = _signal.sosfilt(sos, rec.samples, axis=1)
    except ValueError as exc:  # sosfiltfilt needs more samples than its pad length
        raise InvalidInputError(f"recording too short to filter: {exc}") from exc
    return rec.with_samples(out)


@dataclass(frozen=True)
class SegmentationPlan:
    """Symbol/frame segmentation and the retained frequency-bin set.

    delta_f_hz = sample_rate_hz / symbol_len_L exactly; bin b maps to
    frequency b * delta_f_hz, and bins are kept while b * delta_f stays at or
    below max_freq_hz (edge decided with a 1e-12 Hz tolerance). Symbol and
    frame counts use floor semantics: trailing samples and trailing partial
    frames are dropped.
    """

    symbol_len_L: int
    symbols_per_frame_M: int
    sample_rate_hz: float
    max_freq_hz: float = 30.0
    num_samples_T: int | None = None
    retained_bins: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if self.symbol_len_L < 1:
            raise InvalidSpecError(f"symbol_len_L must be >= 1, got {self.symbol_len_L}")
        if self.symbols_per_frame_M < 1:
            raise InvalidSpecError(f"symbols_per_frame_M must be >= 1, got {self.symbols_per_frame_M}")
        if not self.sample_rate_hz > 0:
            raise InvalidSpecError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        if not (0.0 <= self.max_freq_hz <= self.sample_rate_hz / 2.0):
            raise InvalidSpecError(
                f"max_freq_hz must lie in [0, Nyquist], got {self.max_freq_hz}"
            )
        # exact rational arithmetic so the edge decision never depends on
        # float rounding of Fs / L
        n_bins = int(
            (Fraction(self.max_freq_hz) + Fraction(_BIN_EDGE_EPS)) / self.delta_f_exact
        )
        object.__setattr__(self, "retained_bins", tuple(range(n_bins + 1)))
        if self.num_samples_T is not None:
            if self.num_samples_T < self.symbol_len_L:
                raise InsufficientDataError(
                    f"{self.num_samples_T} samples < one symbol of {self.symbol_len_L}"
                )
            if self.num_frames_K < 1:
                raise InvalidSpecError(
                    f"plan yields {self.num_symbols_G} symbols < M={self.symbols_per_frame_M}; no full frame"
                )

    @property
    def delta_f_exact(self) -> Fraction:
        """Frequency resolution as an exact rational: delta_f * L == Fs holds exactly."""
        return Fraction(self.sample_rate_hz) / self.symbol_len_L

    @property
    def delta_f_hz(self) -> float:
        return self.sample_rate_hz / self.symbol_len_L

    @property
    def retained_freqs_hz(self) -> tuple[float, ...]:
        return tuple(b * self.delta_f_hz for b in self.retained_bins)

    @property
    def num_symbols_G(self) -> int | None:
        if self.num_samples_T is None:
            return None
        return self.num_samples_T // self.symbol_len_L

    @property
    def num_frames_K(self) -> int | None:
        g = self.num_symbols_G
        return None if g is None else g // self.symbols_per_frame_M

    def with_num_samples(self, num_samples_T: int) -> "SegmentationPlan":
        return SegmentationPlan(
            self.symbol_len_L,
            self.symbols_per_frame_M,
            self.sample_rate_hz,
            self.max_freq_hz,
            num_samples_T,
        )


@dataclass(frozen=True)
class FrequencyFrame:
    """One (frame, bin) pair of source/receiver frequency-domain matrices.

    X is P x M (source side), Y is N x M (receiver side); column j holds the
    retained DFT bin of the j-th symbol in the frame.
    """

    frame_index_k: int
    bin_index: int
    freq_hz: float
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.complex128)
        Y = np.asarray(self.Y, dtype=np.complex128)
        if X.ndim != 2 or Y.ndim != 2:
            raise ShapeError("X and Y must be 2-D")
        if X.shape[1] != Y.shape[1]:
            raise ShapeError(f"X has {X.shape[1]} columns but Y has {Y.shape[1]}")
        if X.shape[1] < 1:
            raise ShapeError("frames need at least one symbol column")
        if self.frame_index_k < 1:
            raise ShapeError(f"frame_index_k is 1-based, got {self.frame_index_k}")
        object.__setattr__(self, "X", _freeze(X))
        object.__setattr__(self, "Y", _freeze(Y))

    @property
    def num_symbols_M(self) -> int:
        return self.X.shape[1]


def segment(rec: Recording, plan: SegmentationPlan) -> list[np.ndarray]:
    """Cut a recording into G = floor(T / L) contiguous symbol blocks.

    Blocks are returned in temporal order and partition the first G*L samples
    exactly; the trailing remainder is discarded.
    """
    L = plan.symbol_len_L
    T = rec.num_samples
    if T < L:
        raise InsufficientDataError(f"{T} samples < symbol length {L}")
    G = T // L
    blocks = rec.samples[:, : G * L].reshape(rec.num_channels, G, L)
    return [blocks[:, g, :] for g in range(G)]


def dft_symbol(block: np.ndarray) -> np.ndarray:
    """Unnormalized forward DFT of each channel row.

    out[c, b] = sum_t block[c, t] * exp(-2i*pi*b*t/L); Parseval then reads
    sum |out|^2 = L * sum |block|^2 per channel.
    """
    block = np.asarray(block)
    if block.ndim != 2:
        raise ShapeError("block must be channels x L")
    return np.fft.fft(block, axis=1)


def _symbol_spectra(symbols: list[np.ndarray], bins: tuple[int, ...]) -> np.ndarray:
    """Stack symbols and return their DFT at the retained bins: (G, C, |F|)."""
    stack = np.stack([np.asarray(s, dtype=np.float64) for s in symbols], axis=0)
    # rfft covers every retained bin (bins never exceed L//2) at half the cost
    return np.fft.rfft(stack, axis=2)[:, :, list(bins)]


def assemble_frames(
    src_symbols: list[np.ndarray],
    rcv_symbols: list[np.ndarray],
    plan: SegmentationPlan,
) -> list[FrequencyFrame]:
    """Group per-symbol spectra into K = floor(G / M) frames per retained bin.

    Frame k, bin b gets X column j from source symbol (k-1)*M + j at bin b and
    likewise Y from the receiver side. Output is ordered by frame then by
    ascending bin. Symbols beyond K*M are discarded.
    """
    if len(src_symbols) != len(rcv_symbols):
        raise AlignmentError(
            f"{len(src_symbols)} source symbols vs {len(rcv_symbols)} receiver symbols"
        )
    G = len(src_symbols)
    M = plan.symbols_per_frame_M
    if G < M:
        raise InsufficientDataError(f"{G} symbols < one frame of {M}")
    K = G // M
    df = plan.delta_f_hz

    Xs = _symbol_spectra(src_symbols[: K * M], plan.retained_bins)  # (KM, P, F)
    Ys = _symbol_spectra(rcv_symbols[: K * M], plan.retained_bins)  # (KM, N, F)

    frames = []
    for k in range(1, K + 1):
        sl = slice((k - 1) * M, k * M)
        for j, b in enumerate(plan.retained_bins):
            frames.append(
                FrequencyFrame(
                    frame_index_k=k,
                    bin_index=b,
                    freq_hz=b * df,
                    X=Xs[sl, :, j].T,
                    Y=Ys[sl, :, j].T,
                )
            )
    return frames


def frames_from_recordings(
    src: Recording,
    rcv: Recording,
    plan: SegmentationPlan,
    bandpass: BandpassSpec | None = BandpassSpec(),
) -> list[FrequencyFrame]:
    """Full frontend: (optional) bandpass both recordings, segment, assemble."""
    if src.sample_rate_hz != rcv.sample_rate_hz:
        raise AlignmentError(
            f"sample rates differ: {src.sample_rate_hz} vs {rcv.sample_rate_hz}"
        )
    if src.num_samples != rcv.num_samples:
        raise AlignmentError(
            f"sample counts differ: {src.num_samples} vs {rcv.num_samples}"
        )
    if plan.sample_rate_hz != src.sample_rate_hz:
        raise InvalidSpecError("plan sample rate does not match the recordings")
    if bandpass is not None:
        src = bandpass_filter(src, bandpass)
        rcv = bandpass_filter(rcv, bandpass)
    return assemble_frames(segment(src, plan), segment(rcv, plan), plan)


# ---------------------------------------------------------------------------
# Recording persistence: metadata JSON + raw little-endian float64 binary,
# channel-major. A CSV reader (rows = time, header = labels) covers small data.
# ---------------------------------------------------------------------------

def _strip_json_suffix(path: str) -> str:
    return path[: -len(".json")] if path.endswith(".json") else path


def save_recording(rec: Recording, base_path: str) -> tuple[str, str]:
    """Write <base>.json (metadata) and <base>.bin (raw samples)."""
    base = _strip_json_suffix(str(base_path))
    meta = {
        "version": 1,
        "fs_hz": rec.sample_rate_hz,
        "dtype": "f64le",
        "layout": "channel-major",
        "channels": [
            {
                "label": lbl,
                "pos": list(rec.channel_positions[i]) if rec.channel_positions else None,
            }
            for i, lbl in enumerate(rec.channel_labels)
        ],
        "num_samples": rec.num_samples,
    }
    meta_path, bin_path = base + ".json", base + ".bin"
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    rec.samples.astype("<f8").tofile(bin_path)
    return meta_path, bin_path


def load_recording(base_path: str) -> Recording:
    """Read a recording written by save_recording (accepts base or .json path)."""
    base = _strip_json_suffix(str(base_path))
    meta_path, bin_path = base + ".json", base + ".bin"
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("version") != 1:
        raise InvalidInputError(f"unsupported recording file version {meta.get('version')!r}")
    if meta.get("dtype") != "f64le" or meta.get("layout") != "channel-major":
        raise InvalidInputError("unsupported recording dtype/layout")
    labels = [ch["label"] for ch in meta["channels"]]
    pos = [ch.get("pos") for ch in meta["channels"]]
    positions = tuple(tuple(p) for p in pos) if all(p is not None for p in pos) and pos else None
    n_ch, n_s = len(labels), int(meta["num_samples"])
    raw = np.fromfile(bin_path, dtype="<f8")
    if raw.size != n_ch * n_s:
        raise InvalidInputError(
            f"binary holds {raw.size} values, metadata expects {n_ch * n_s}"
        )
    return Recording(raw.reshape(n_ch, n_s), float(meta["fs_hz"]), tuple(labels), positions)


def read_recording_csv(path: str, sample_rate_hz: float) -> Recording:
    """Read a small recording from CSV: rows are time, columns are channels."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            labels = [c.strip() for c in next(reader)]
        except StopIteration:
            raise InvalidInputError(f"{path}: empty CSV") from None
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise InvalidInputError(f"{path}: CSV has a header but no data rows")
    if any(len(r) != len(labels) for r in rows):
        raise InvalidInputError(f"{path}: ragged CSV rows")
    samples = np.asarray(rows, dtype=np.float64).T  # time-major file -> channel-major
    return Recording(samples, sample_rate_hz, tuple(labels))


def remove_output_pair(base_path: str) -> None:
    """Best-effort removal of a .json/.bin pair (used by atomic CLI writes)."""
    base = _strip_json_suffix(str(base_path))
    for p in (base + ".json", base + ".bin"):
        try:
            os.remove(p)
        except FileNotFoundError:
            pass
