"""Synthetic ground-truth channels, frame generators, and tone-based recordings.

Everything here is a pure function of (spec, seed). Independent frames and
bins draw from dedicated substreams keyed as (seed, domain, frame, bin), so
parallel and serial generation produce bit-identical results.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidRecipeError, ShapeError
from .frontend import FrequencyFrame, Recording
from .graph import ElectrodeGraph, complete_graph, graph_from_edge_list, preset_graph
from .estimators import ChannelTensor

__all__ = [
    "SyntheticChannelSpec",
    "SyntheticDataset",
    "gen_channel",
    "gen_frames",
    "gen_dataset",
    "ToneSpec",
    "TimeDomainRecipe",
    "TimeDomainData",
    "gen_time_domain",
    "truth_tensor_for_plan",
    "FrequencyDomainRecipe",
    "build_recipe_graph",
    "load_recipe",
    "packaged_recipe_names",
]

# RNG substream domains; keeping them distinct means one user-facing seed can
# safely feed every generator.
_DOM_CHANNEL = 0
_DOM_FRAME = 1
_DOM_TONE = 2
_DOM_TONE_NOISE = 3


def _rng(seed: int, domain: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(domain), *map(int, key)])


def _cnormal(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circular complex Gaussian draws."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@dataclass(frozen=True)
class SyntheticChannelSpec:
    """Parameters of the ground-truth channel process.

    Per bin, frame 1 is a complex Gaussian draw whose rows are mixed by
    (I + c*L)^-1 with c derived from spatial_corr_strength; later frames
    follow a stationary AR(1) with coefficient temporal_drift_ar1. Bin
    magnitudes decay as exp(-f / freq_rolloff_hz).
    """

    num_rcv_N: int
    num_src_P: int
    bins_hz: tuple[float, ...]
    num_frames_K: int
    spatial_corr_strength: float = 0.0
    temporal_drift_ar1: float = 0.0
    freq_rolloff_hz: float = 50.0
    delta_f_hz: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_rcv_N < 1 or self.num_src_P < 1 or self.num_frames_K < 1:
            raise InvalidInputError("N, P and K must all be >= 1")
        if not (0.0 <= self.spatial_corr_strength <= 1.0):
            raise InvalidInputError("spatial_corr_strength must lie in [0, 1]")
        if not (0.0 <= self.temporal_drift_ar1 < 1.0):
            raise InvalidInputError("temporal_drift_ar1 must lie in [0, 1)")
        if not self.freq_rolloff_hz > 0:
            raise InvalidInputError("freq_rolloff_hz must be > 0")
        if self.seed < 0:
            raise InvalidInputError("seed must be a nonnegative integer")
        bins = tuple(float(f) for f in self.bins_hz)
        if not bins:
            raise InvalidInputError("need at least one bin")
        object.__setattr__(self, "bins_hz", bins)

    def bin_indices(self) -> tuple[int, ...]:
        out = []
        for f in self.bins_hz:
            b = round(f / self.delta_f_hz)
            if abs(b * self.delta_f_hz - f) > 1e-9:
                raise InvalidInputError(
                    f"bin frequency {f} Hz is not a multiple of delta_f {self.delta_f_hz} Hz"
                )
            out.append(int(b))
        return tuple(out)


def gen_channel(spec: SyntheticChannelSpec, graph: ElectrodeGraph) -> ChannelTensor:
    """Draw the ground-truth channel tensor described by spec."""
    N, P, K = spec.num_rcv_N, spec.num_src_P, spec.num_frames_K
    if graph.node_count != N:
        raise ShapeError(f"graph has {graph.node_count} nodes, spec wants N={N}")
    s = spec.spatial_corr_strength
    mix = np.linalg.inv(np.eye(N) + (s / max(1.0 - s, 1e-12)) * graph.laplacian_float())
    a = spec.temporal_drift_ar1
    innov = math.sqrt(max(0.0, 1.0 - a * a))
    bin_idx = spec.bin_indices()
    data = np.empty((K, len(bin_idx), N, P), dtype=np.complex128)
    for j, (b, f_hz) in enumerate(zip(bin_idx, spec.bins_hz)):
        amp = math.exp(-f_hz / spec.freq_rolloff_hz)
        for k in range(1, K + 1):
            Z = amp * (mix @ _cnormal(_rng(spec.seed, _DOM_CHANNEL, k, b), (N, P)))
            data[k - 1, j] = Z if k == 1 else a * data[k - 2, j] + innov * Z
    return ChannelTensor(
        data,
        spec.bins_hz,
        bin_idx,
        method="truth",
        config={
            "spatial_corr_strength": s,
            "temporal_drift_ar1": a,
            "freq_rolloff_hz": spec.freq_rolloff_hz,
            "seed": spec.seed,
        },
    )


def gen_frames(
    channels: ChannelTensor,
    symbols_per_frame_M: int,
    snr_db: float,
    seed: int,
) -> tuple[list[FrequencyFrame], dict]:
    """Excite the channel with unit-variance complex Gaussian X and add noise.

    Y = H X + W with W white complex Gaussian whose per-entry power is set by
    snr_db relative to the per-entry power of H X; snr_db = inf disables the
    noise. Returns the frames plus the stored noise residuals keyed by
    (frame, bin), so ||Y - H X|| equals ||W|| exactly.
    """
    if symbols_per_frame_M < 1:
        raise InvalidInputError("need M >= 1 symbols per frame")
    N, P = channels.shape_NP
    frames: list[FrequencyFrame] = []
    noise: dict[tuple[int, int], np.ndarray] = {}
    for k in range(1, channels.num_frames_K + 1):
        for j, b in enumerate(channels.bin_indices):
            rng = _rng(seed, _DOM_FRAME, k, b)
            X = _cnormal(rng, (P, symbols_per_frame_M))
            HX = channels.data[k - 1, j] @ X
            if math.isinf(snr_db):
                Y = HX
            else:
                sig_pow = float(np.mean(np.abs(HX) ** 2))
                W = _cnormal(rng, (N, symbols_per_frame_M)) * math.sqrt(
                    sig_pow * 10.0 ** (-snr_db / 10.0)
                )
                Y = HX + W
            frames.append(
                FrequencyFrame(k, b, channels.bins_hz[j], X, Y)
            )
            noise[(k, b)] = Y - HX  # stored residual, exact by construction
    return frames, noise


@dataclass(frozen=True)
class SyntheticDataset:
    """Ground-truth channels plus the noisy frames generated from them."""

    true_channels: ChannelTensor
    frames: tuple[FrequencyFrame, ...]
    snr_db: float
    seed: int
    noise: dict = field(default_factory=dict, repr=False)


def gen_dataset(
    spec: SyntheticChannelSpec,
    graph: ElectrodeGraph,
    symbols_per_frame_M: int,
    snr_db: float,
    frame_seed: int | None = None,
) -> SyntheticDataset:
    """gen_channel + gen_frames in one step (frame_seed defaults to spec.seed)."""
    truth = gen_channel(spec, graph)
    seed = spec.seed if frame_seed is None else frame_seed
    frames, noise = gen_frames(truth, symbols_per_frame_M, snr_db, seed)
    return SyntheticDataset(truth, tuple(frames), snr_db, seed, noise)


# ---------------------------------------------------------------------------
# Time-domain tone recordings: sources carry sums of sinusoids, receivers get
# per-tone complex-gain mixtures of the sources, so the per-tone gain matrix
# is a known frequency-flat channel at that tone's frequency.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToneSpec:
    freq_hz: float
    amplitude: float = 1.0


@dataclass(frozen=True)
class TimeDomainRecipe:
    """Recipe for a paired source/receiver tone recording.

    tone_mod chooses the source amplitudes: "none" keeps one constant complex
    amplitude per (channel, tone), giving clean line spectra; "block" redraws
    amplitudes every mod_block_len samples, which makes the per-symbol spectra
    full rank (at the price of modulation sidebands). Per-tone gain matrices
    drift as a per-block AR(1) with coefficient gain_drift_ar1 (1.0 = static).
    gain_mode "identity" forces every tone's gain to the identity (N == P).
    """

    num_src_P: int
    num_rcv_N: int
    sample_rate_hz: float
    duration_s: float
    tones: tuple[ToneSpec, ...]
    mod_block_len: int = 500
    tone_mod: str = "none"
    gain_mode: str = "random"
    gain_drift_ar1: float = 1.0
    src_noise_std: float = 0.0
    rcv_noise_std: float = 0.0
    seed: int = 0
    plan: dict | None = None
    rcv_graph: dict | None = None

    def __post_init__(self):
        if self.num_src_P < 1 or self.num_rcv_N < 1:
            raise InvalidRecipeError("need at least one source and one receiver channel")
        if not self.sample_rate_hz > 0 or not self.duration_s > 0:
            raise InvalidRecipeError("sample rate and duration must be positive")
        if self.mod_block_len < 1:
            raise InvalidRecipeError("mod_block_len must be >= 1")
        if self.tone_mod not in ("none", "block"):
            raise InvalidRecipeError(f"tone_mod must be 'none' or 'block', got {self.tone_mod!r}")
        if self.gain_mode not in ("random", "identity"):
            raise InvalidRecipeError(f"gain_mode must be 'random' or 'identity', got {self.gain_mode!r}")
        if self.gain_mode == "identity" and self.num_src_P != self.num_rcv_N:
            raise InvalidRecipeError("identity gains need num_src == num_rcv")
        if not (0.0 <= self.gain_drift_ar1 <= 1.0):
            raise InvalidRecipeError("gain_drift_ar1 must lie in [0, 1]")
        if self.seed < 0:
            raise InvalidRecipeError("seed must be a nonnegative integer")
        tones = tuple(
            t if isinstance(t, ToneSpec) else ToneSpec(**t) for t in self.tones
        )
        nyq = self.sample_rate_hz / 2.0
        for t in tones:
            if not (0.0 < t.freq_hz < nyq):
                raise InvalidRecipeError(
                    f"tone at {t.freq_hz} Hz outside (0, Nyquist={nyq}) range"
                )
        object.__setattr__(self, "tones", tones)

    @property
    def num_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    def with_seed(self, seed: int) -> "TimeDomainRecipe":
        return TimeDomainRecipe(
            self.num_src_P, self.num_rcv_N, self.sample_rate_hz, self.duration_s,
            self.tones, self.mod_block_len, self.tone_mod, self.gain_mode,
            self.gain_drift_ar1, self.src_noise_std, self.rcv_noise_std,
            seed, self.plan, self.rcv_graph,
        )

    def with_drift(self, gain_drift_ar1: float) -> "TimeDomainRecipe":
        return TimeDomainRecipe(
            self.num_src_P, self.num_rcv_N, self.sample_rate_hz, self.duration_s,
            self.tones, self.mod_block_len, self.tone_mod, self.gain_mode,
            gain_drift_ar1, self.src_noise_std, self.rcv_noise_std,
            self.seed, self.plan, self.rcv_graph,
        )


@dataclass(frozen=True)
class TimeDomainData:
    """Generated recordings plus the ground-truth per-tone gain matrices.

    gains has shape (num_tones, num_blocks, N, P); block b covers samples
    [b * mod_block_len, (b+1) * mod_block_len).
    """

    src: Recording
    rcv: Recording
    tone_freqs_hz: tuple[float, ...]
    gains: np.ndarray
    mod_block_len: int


def gen_time_domain(recipe: TimeDomainRecipe) -> TimeDomainData:
    """Render the recipe into a paired Recording."""
    P, N = recipe.num_src_P, recipe.num_rcv_N
    fs, T = recipe.sample_rate_hz, recipe.num_samples
    block = recipe.mod_block_len
    nblocks = max(1, -(-T // block))
    t = np.arange(T) / fs
    src = np.zeros((P, T))
    rcv = np.zeros((N, T))
    gains = np.zeros((max(1, len(recipe.tones)), nblocks, N, P), dtype=np.complex128)
    a = recipe.gain_drift_ar1
    innov = math.sqrt(max(0.0, 1.0 - a * a))

    for g, tone in enumerate(recipe.tones):
        rng = _rng(recipe.seed, _DOM_TONE, g)
        if recipe.gain_mode == "identity":
            G0 = np.eye(N, dtype=np.complex128)
        else:
            G0 = _cnormal(rng, (N, P)) / math.sqrt(P)
        if recipe.tone_mod == "block":
            amps = tone.amplitude * _cnormal(rng, (nblocks, P))
        else:
            amps = np.broadcast_to(tone.amplitude * _cnormal(rng, (P,)), (nblocks, P))
        phase = np.exp(2j * np.pi * tone.freq_hz * t)
        Gb = G0
        for b in range(nblocks):
            if b > 0 and recipe.gain_mode == "random" and a < 1.0:
                Gb = a * Gb + innov * (_cnormal(rng, (N, P)) / math.sqrt(P))
            gains[g, b] = Gb
            sl = slice(b * block, min((b + 1) * block, T))
            src[:, sl] += (amps[b][:, None] * phase[None, sl]).real
            rcv[:, sl] += ((Gb @ amps[b])[:, None] * phase[None, sl]).real

    rng_noise = _rng(recipe.seed, _DOM_TONE_NOISE)
    if recipe.src_noise_std > 0:
        src = src + recipe.src_noise_std * rng_noise.standard_normal((P, T))
    if recipe.rcv_noise_std > 0:
        rcv = rcv + recipe.rcv_noise_std * rng_noise.standard_normal((N, T))

    src_rec = Recording(src, fs, tuple(f"src{i+1}" for i in range(P)))
    rcv_rec = Recording(rcv, fs, tuple(f"rcv{i+1}" for i in range(N)))
    return TimeDomainData(
        src_rec, rcv_rec, tuple(tn.freq_hz for tn in recipe.tones), gains, block
    )


def truth_tensor_for_plan(data: TimeDomainData, plan) -> ChannelTensor:
    """Ground-truth channel tensor on a segmentation plan's (frame, bin) grid.

    At each tone whose frequency lands on a retained bin, the truth for frame
    k is the mean of that tone's per-block gain over the samples the frame
    covers; every other bin is zero (no source content there). Tones that do
    not align with the bin grid are skipped.
    """
    K = plan.num_frames_K
    if K is None:
        raise InvalidInputError("plan needs num_samples_T to define the frame grid")
    N, P = data.rcv.num_channels, data.src.num_channels
    bins = plan.retained_bins
    df = plan.delta_f_hz
    out = np.zeros((K, len(bins), N, P), dtype=np.complex128)
    frame_len = plan.symbol_len_L * plan.symbols_per_frame_M
    for g, f_hz in enumerate(data.tone_freqs_hz):
        b = round(f_hz / df)
        if abs(b * df - f_hz) > 1e-9 or b not in bins:
            continue
        j = bins.index(b)
        for k in range(K):
            lo = k * frame_len
            hi = (k + 1) * frame_len
            b_lo = lo // data.mod_block_len
            b_hi = -(-hi // data.mod_block_len)
            out[k, j] += data.gains[g, b_lo:b_hi].mean(axis=0)
    return ChannelTensor(
        out,
        [b * df for b in bins],
        bins,
        method="truth",
        config={"source": "tone-recipe", "frame_len": frame_len},
    )


# ---------------------------------------------------------------------------
# Recipe files (JSON) and packaged presets.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrequencyDomainRecipe:
    """Recipe that synthesizes frames directly in the frequency domain."""

    channel: SyntheticChannelSpec
    symbols_per_frame_M: int
    snr_db: float
    rcv_graph: dict | None = None

    def build_graph(self) -> ElectrodeGraph:
        return build_recipe_graph(self.rcv_graph, self.channel.num_rcv_N)

    def generate(self) -> SyntheticDataset:
        return gen_dataset(self.channel, self.build_graph(), self.symbols_per_frame_M, self.snr_db)


def build_recipe_graph(desc: dict | None, n_nodes: int) -> ElectrodeGraph:
    if desc is None or desc.get("kind") == "complete":
        return complete_graph(n_nodes)
    kind = desc.get("kind")
    if kind == "edges":
        return graph_from_edge_list(n_nodes, [tuple(e) for e in desc["edges"]])
    if kind == "preset":
        return preset_graph(desc["name"])
    raise InvalidRecipeError(f"unknown rcv_graph kind {kind!r}")


def _recipe_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "time_domain":
        fields_ = {k: v for k, v in doc.items() if k != "kind"}
        tones = fields_.pop("tones", [])
        fields_["tones"] = tuple(ToneSpec(**t) for t in tones)
        try:
            return TimeDomainRecipe(**fields_)
        except TypeError as exc:
            raise InvalidRecipeError(f"bad time-domain recipe: {exc}") from exc
    if kind == "frequency_domain":
        try:
            ch = doc["channel"]
            spec = SyntheticChannelSpec(
                num_rcv_N=ch["num_rcv_N"],
                num_src_P=ch["num_src_P"],
                bins_hz=tuple(ch["bins_hz"]),
                num_frames_K=ch["num_frames_K"],
                spatial_corr_strength=ch.get("spatial_corr_strength", 0.0),
                temporal_drift_ar1=ch.get("temporal_drift_ar1", 0.0),
                freq_rolloff_hz=ch.get("freq_rolloff_hz", 50.0),
                delta_f_hz=ch.get("delta_f_hz", 1.0),
                seed=ch.get("seed", 0),
            )
            return FrequencyDomainRecipe(
                channel=spec,
                symbols_per_frame_M=doc["symbols_per_frame_M"],
                snr_db=float(doc.get("snr_db", math.inf)),
                rcv_graph=doc.get("rcv_graph"),
            )
        except KeyError as exc:
            raise InvalidRecipeError(f"frequency-domain recipe missing field {exc}") from exc
    raise InvalidRecipeError(f"recipe kind must be 'time_domain' or 'frequency_domain', got {kind!r}")


def packaged_recipe_names() -> tuple[str, ...]:
    from importlib import resources

    names = []
    for entry in resources.files(__package__).joinpath("recipes").iterdir():
        if entry.name.endswith(".json"):
            names.append(entry.name[: -len(".json")])
    return tuple(sorted(names))


def load_recipe(path_or_name: str):
    """Load a recipe from a JSON file path or a packaged recipe name."""
    from importlib import resources

    text = None
    try:
        with open(path_or_name, "r", encoding="utf-8") as fh:
            text = fh.read()
    except (FileNotFoundError, IsADirectoryError):
        candidate = resources.files(__package__).joinpath(f"recipes/{path_or_name}.json")
        if candidate.is_file():
            text = candidate.read_text(encoding="utf-8")
    if text is None:
        raise FileNotFoundError(
            f"no recipe file {path_or_name!r} and no packaged recipe of that name "
            f"(available: {', '.join(packaged_recipe_names())})"
        )
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidRecipeError(f"{path_or_name}: not valid JSON: {exc}") from exc
    return _recipe_from_dict(doc)
