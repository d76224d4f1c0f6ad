"""Per-frequency MIMO channel estimators: LS, MMSE, and the regularized ADMM solver.

Every estimator maps one FrequencyFrame (X: P x M source spectra, Y: N x M
receiver spectra) to a channel matrix H (N x P) with Y ~= H @ X. The
regularized estimator ("stare") adds two quadratic penalties:

* spatial smoothness, 2*mu*||L @ H||_F^2 for an electrode-graph Laplacian L
  over the receiver rows, and
* temporal continuity, nu*||H - H_prev||_F^2 against the previous frame's
  estimate,

and minimizes 0.5*||Y - H X||_F^2 plus both penalties by ADMM with scaled
dual variable and closed-form sub-steps.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import (
    ConfigError,
    DegenerateInputError,
    InvalidInputError,
    NumericError,
    ShapeError,
)
from .frontend import FrequencyFrame
from .graph import ElectrodeGraph

__all__ = [
    "ChannelMatrix",
    "ChannelTensor",
    "StareConfig",
    "AdmmState",
    "estimate_ls",
    "estimate_mmse",
    "stare_frame",
    "stare_objective",
    "estimate_sequence",
    "default_mmse_noise_var",
    "save_tensor",
    "load_tensor",
    "write_diagnostics_jsonl",
]

LS_RIDGE_EPS = 1e-10

TENSOR_LAYOUT = "frame-major,bin-ascending,row-major,interleaved-complex"


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ChannelMatrix:
    """One estimated channel matrix H (N x P) for a (frame, bin) pair."""

    H: np.ndarray
    frame_index_k: int
    bin_index: int
    freq_hz: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.complex128)
        if H.ndim != 2:
            raise ShapeError("H must be 2-D")
        if not np.all(np.isfinite(H.view(np.float64))):
            raise NumericError("channel matrix contains non-finite entries")
        object.__setattr__(self, "H", _freeze(H))


class ChannelTensor:
    """Estimated channels for every frame and retained bin.

    Stores a (K, |F|, N, P) complex array: frame-major, bins ascending. The
    per-frame stack over bins is the full-band response of that frame.
    """

    def __init__(self, data, bins_hz, bin_indices, method="", config=None, diagnostics=None):
        data = np.asarray(data, dtype=np.complex128)
        if data.ndim != 4:
            raise ShapeError("tensor data must be (frames, bins, N, P)")
        bins_hz = tuple(float(f) for f in bins_hz)
        bin_indices = tuple(int(b) for b in bin_indices)
        if len(bins_hz) != data.shape[1] or len(bin_indices) != data.shape[1]:
            raise ShapeError("bin lists must match the tensor's bin axis")
        if any(b2 <= b1 for b1, b2 in zip(bins_hz, bins_hz[1:])):
            raise InvalidInputError("bins must be strictly ascending in frequency")
        self.data = _freeze(data)
        self.bins_hz = bins_hz
        self.bin_indices = bin_indices
        self.method = str(method)
        self.config = dict(config or {})
        self.diagnostics = list(diagnostics or [])

    @property
    def num_frames_K(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    @property
    def shape_NP(self) -> tuple[int, int]:
        return self.data.shape[2], self.data.shape[3]

    def matrix(self, frame_index_k: int, bin_index: int) -> ChannelMatrix:
        j = self.bin_indices.index(bin_index)
        return ChannelMatrix(
            self.data[frame_index_k - 1, j],
            frame_index_k,
            bin_index,
            self.bins_hz[j],
        )

    def frame_stack(self, frame_index_k: int) -> np.ndarray:
        """Full-band response of one frame as an N x P x |F| array."""
        return np.moveaxis(self.data[frame_index_k - 1], 0, -1)

    def entries(self):
        """ChannelMatrix views in (frame, ascending-bin) order."""
        for k in range(1, self.num_frames_K + 1):
            for j, b in enumerate(self.bin_indices):
                yield ChannelMatrix(self.data[k - 1, j], k, b, self.bins_hz[j])

    def __eq__(self, other):
        return (
            isinstance(other, ChannelTensor)
            and self.bins_hz == other.bins_hz
            and self.bin_indices == other.bin_indices
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class StareConfig:
    """Weights and ADMM controls for the regularized estimator.

    residual_tol = 0 disables early stopping; the solver then always runs
    max_iters_t_max iterations.
    """

    mu: float = 1.0
    nu: float = 1.0
    rho: float = 1.0
    max_iters_t_max: int = 50
    residual_tol: float = 1e-6

    def __post_init__(self):
        if self.mu < 0 or self.nu < 0:
            raise ConfigError(f"mu and nu must be >= 0, got mu={self.mu}, nu={self.nu}")
        if not self.rho > 0:
            raise ConfigError(f"rho must be > 0, got {self.rho}")
        if self.max_iters_t_max < 1:
            raise ConfigError(f"max_iters_t_max must be >= 1, got {self.max_iters_t_max}")
        if self.residual_tol < 0:
            raise ConfigError(f"residual_tol must be >= 0, got {self.residual_tol}")

    def as_dict(self) -> dict:
        return {
            "mu": self.mu,
            "nu": self.nu,
            "rho": self.rho,
            "t_max": self.max_iters_t_max,
            "tol": self.residual_tol,
        }


@dataclass
class AdmmState:
    """Final ADMM iterates and residual diagnostics for one solve."""

    H: np.ndarray
    G_aux: np.ndarray
    dual_U: np.ndarray
    iteration: int
    primal_residual: float
    dual_residual: float
    converged: bool
    residual_history: list[tuple[float, float]] = field(default_factory=list)


def _solve_right(A_factor, C: np.ndarray) -> np.ndarray:
    """Solve H @ A = C for Hermitian positive-definite A via its Cholesky factor."""
    return cho_solve(A_factor, C.conj().T).conj().T


def _gram_with_ridge(X: np.ndarray, eps: float):
    """XX^H + eps*tr(XX^H)/P * I and its trace, raising on an all-zero X."""
    A = X @ X.conj().T
    tr = float(np.trace(A).real)
    if tr <= 0.0:
        raise DegenerateInputError("X is all-zero; the channel is unobservable")
    P = X.shape[0]
    return A + (eps * tr / P) * np.eye(P), tr


def estimate_ls(frame: FrequencyFrame, ridge_eps: float = LS_RIDGE_EPS) -> ChannelMatrix:
    """Least-squares channel estimate H = Y X^H (X X^H + eps*tr/P * I)^-1.

    The trace-scaled ridge keeps the solve well-posed in the rank-deficient
    M < P regime; for well-conditioned X with M >= P it perturbs the classical
    LS solution at the 1e-10 level.
    """
    X, Y = frame.X, frame.Y
    A, _ = _gram_with_ridge(X, ridge_eps)
    H = _solve_right(cho_factor(A), Y @ X.conj().T)
    meta = {"method": "ls", "ridge_eps": ridge_eps}
    if X.shape[1] < X.shape[0]:  # under-excited frame: record conditioning
        meta["gram_cond"] = float(np.linalg.cond(X @ X.conj().T))
    return ChannelMatrix(H, frame.frame_index_k, frame.bin_index, frame.freq_hz, meta)


def estimate_mmse(frame: FrequencyFrame, noise_var: float) -> ChannelMatrix:
    """Linear-MMSE estimate under white priors: H = Y X^H (X X^H + noise_var*I)^-1.

    noise_var = 0 degenerates to ridge-free LS when the Gram matrix is
    invertible; on a singular system it falls back to the LS ridge path and
    flags the fallback in the result metadata.
    """
    if noise_var < 0:
        raise ConfigError(f"noise_var must be >= 0, got {noise_var}")
    X, Y = frame.X, frame.Y
    P = X.shape[0]
    A = X @ X.conj().T + noise_var * np.eye(P)
    meta = {"method": "mmse", "noise_var": float(noise_var)}
    try:
        factor = cho_factor(A)
    except LinAlgError:
        ls = estimate_ls(frame)
        meta["ls_ridge_fallback"] = True
        meta.update({k: v for k, v in ls.meta.items() if k == "gram_cond"})
        return ChannelMatrix(ls.H, frame.frame_index_k, frame.bin_index, frame.freq_hz, meta)
    H = _solve_right(factor, Y @ X.conj().T)
    return ChannelMatrix(H, frame.frame_index_k, frame.bin_index, frame.freq_hz, meta)


def stare_objective(
    H: np.ndarray,
    frame: FrequencyFrame,
    H_prev: np.ndarray,
    graph: ElectrodeGraph,
    mu: float,
    nu: float,
) -> float:
    """0.5*||Y - H X||_F^2 + 2*mu*||L H||_F^2 + nu*||H - H_prev||_F^2."""
    data = 0.5 * np.linalg.norm(frame.Y - H @ frame.X) ** 2
    spatial = mu * np.sum(np.abs(graph.laplacian_float() @ H) ** 2) * 2.0
    temporal = nu * np.linalg.norm(H - H_prev) ** 2
    return float(data + spatial + temporal)


def graph_factor(graph: ElectrodeGraph, mu: float, rho: float):
    """Cholesky factor of (4*mu*L^T L + rho*I); frequency independent, reusable."""
    L = graph.laplacian_float()
    return cho_factor(4.0 * mu * (L.T @ L) + rho * np.eye(graph.node_count), lower=True)


def stare_frame(
    frame: FrequencyFrame,
    H_prev: ChannelMatrix | np.ndarray,
    graph: ElectrodeGraph,
    cfg: StareConfig,
    lap_factor=None,
) -> tuple[ChannelMatrix, AdmmState]:
    """Regularized estimate of one frame by ADMM with closed-form updates.

    The coupled objective is split with an auxiliary copy G that carries the
    spatial penalty, constrained to equal H, and a scaled dual U. Starting
    from H0 = G0 = H_prev and U0 = 0, each iteration runs

        H <- (Y X^H + 2*nu*H_prev + rho*(G + U)) (X X^H + 2*nu*I + rho*I)^-1
        G <- (4*mu*L^T L + rho*I)^-1 rho*(H - U)
        U <- U + (G - H)

    and stops at max_iters_t_max or once
    max(||G - H||_F, rho*||G_new - G_old||_F) <= residual_tol * sqrt(N*P).

    Both solve matrices are Hermitian positive definite for rho > 0, so the
    sub-steps are plain Cholesky solves; the graph-side factor only depends on
    (graph, mu, rho) and can be precomputed once and shared via lap_factor.
    """
    Hp = H_prev.H if isinstance(H_prev, ChannelMatrix) else np.asarray(H_prev, dtype=np.complex128)
    X, Y = frame.X, frame.Y
    N, P = Y.shape[0], X.shape[0]
    if Hp.shape != (N, P):
        raise ShapeError(f"H_prev must be {(N, P)}, got {Hp.shape}")
    if graph.node_count != N:
        raise ShapeError(
            f"graph has {graph.node_count} nodes but the frame has {N} receivers"
        )
    if not (np.all(np.isfinite(X.view(np.float64))) and np.all(np.isfinite(Y.view(np.float64)))
            and np.all(np.isfinite(Hp.view(np.float64)))):
        raise NumericError("non-finite values in ADMM inputs")

    mu, nu, rho = cfg.mu, cfg.nu, cfg.rho
    A = X @ X.conj().T + (2.0 * nu + rho) * np.eye(P)
    try:
        A_factor = cho_factor(A, lower=True)
    except LinAlgError as exc:
        raise NumericError(f"H-update matrix not positive definite: {exc}") from exc
    B_factor = lap_factor if lap_factor is not None else graph_factor(graph, mu, rho)

    C0 = Y @ X.conj().T + 2.0 * nu * Hp
    H = Hp.copy()
    G = Hp.copy()
    U = np.zeros_like(Hp)
    stop_scale = cfg.residual_tol * np.sqrt(N * P)
    history = []
    converged = False
    primal = dual = np.inf
    t = 0
    for t in range(1, cfg.max_iters_t_max + 1):
        H = _solve_right(A_factor, C0 + rho * (G + U))
        G_new = cho_solve(B_factor, rho * (H - U))
        primal = float(np.linalg.norm(G_new - H))
        dual = float(rho * np.linalg.norm(G_new - G))
        G = G_new
        U = U + (G - H)
        history.append((primal, dual))
        if cfg.residual_tol > 0 and max(primal, dual) <= stop_scale:
            converged = True
            break

    state = AdmmState(H, G, U, t, primal, dual, converged, history)
    meta = {
        "method": "stare",
        "iterations": t,
        "converged": converged,
        "primal_residual": primal,
        "dual_residual": dual,
    }
    est = ChannelMatrix(H, frame.frame_index_k, frame.bin_index, frame.freq_hz, meta)
    return est, state


def _group_by_bin(frames) -> dict[int, list[FrequencyFrame]]:
    groups: dict[int, list[FrequencyFrame]] = {}
    for fr in frames:
        groups.setdefault(fr.bin_index, []).append(fr)
    for b, group in groups.items():
        group.sort(key=lambda fr: fr.frame_index_k)
        ks = [fr.frame_index_k for fr in group]
        if ks != list(range(1, len(ks) + 1)):
            raise InvalidInputError(f"bin {b}: frame indices {ks} are not 1..K")
    counts = {len(g) for g in groups.values()}
    if len(counts) != 1:
        raise InvalidInputError(f"bins disagree on frame count: {sorted(counts)}")
    return groups


def default_mmse_noise_var(frames) -> float:
    """Median per-(frame, bin) residual power of a first-pass LS fit."""
    powers = []
    for fr in frames:
        H = estimate_ls(fr).H
        powers.append(float(np.mean(np.abs(fr.Y - H @ fr.X) ** 2)))
    return float(np.median(powers))


def estimate_sequence(
    frames,
    method: str = "ls",
    graph: ElectrodeGraph | None = None,
    cfg: StareConfig | None = None,
    noise_var: float | None = None,
    first_anchor: str = "ls",
    jobs: int = 1,
) -> ChannelTensor:
    """Estimate every (frame, bin) pair and stack the results.

    frames may arrive in any order; they are grouped by bin and ordered by
    frame index. LS and MMSE treat frames independently. The regularized
    estimator chains causally within each bin: frame 1 is anchored on its own
    LS estimate (or on zero with first_anchor="zero"), and frame k >= 2 on the
    frame k-1 output. Bins are independent and may be solved in parallel;
    results are assembled in ascending-bin order regardless of schedule.

    Returns a ChannelTensor whose .diagnostics holds one record per
    (frame, bin) in deterministic order.
    """
    frames = list(frames)
    if not frames:
        raise InvalidInputError("no frames to estimate")
    if method not in ("ls", "mmse", "stare"):
        raise ConfigError(f"unknown method {method!r}")
    if first_anchor not in ("ls", "zero"):
        raise ConfigError(f"first_anchor must be 'ls' or 'zero', got {first_anchor!r}")
    groups = _group_by_bin(frames)
    bin_order = sorted(groups, key=lambda b: groups[b][0].freq_hz)
    bins_hz = [groups[b][0].freq_hz for b in bin_order]
    K = len(groups[bin_order[0]])
    N, M = groups[bin_order[0]][0].Y.shape
    P = groups[bin_order[0]][0].X.shape[0]

    config: dict = {}
    if method == "ls":
        config = {"ridge_eps": LS_RIDGE_EPS}
    elif method == "mmse":
        if noise_var is None:
            noise_var = default_mmse_noise_var(frames)
        config = {"noise_var": float(noise_var)}
    else:
        cfg = cfg or StareConfig()
        if graph is None:
            raise ConfigError("the regularized estimator needs an electrode graph")
        config = dict(cfg.as_dict(), anchor=first_anchor)

    lap_factor = graph_factor(graph, cfg.mu, cfg.rho) if method == "stare" else None

    def run_bin(b):
        group = groups[b]
        mats, diags = [], []
        if method == "stare":
            if first_anchor == "ls":
                H_prev = estimate_ls(group[0]).H
            else:
                H_prev = np.zeros((N, P), dtype=np.complex128)
            for fr in group:
                est, state = stare_frame(fr, H_prev, graph, cfg, lap_factor=lap_factor)
                obj = stare_objective(est.H, fr, H_prev, graph, cfg.mu, cfg.nu)
                H_prev = est.H
                mats.append(est)
                diags.append(
                    {
                        "frame": fr.frame_index_k,
                        "bin": fr.bin_index,
                        "bin_hz": fr.freq_hz,
                        "method": method,
                        "iterations": state.iteration,
                        "converged": state.converged,
                        "primal_residual": state.primal_residual,
                        "dual_residual": state.dual_residual,
                        "objective": obj,
                    }
                )
        else:
            for fr in group:
                est = estimate_ls(fr) if method == "ls" else estimate_mmse(fr, noise_var)
                mats.append(est)
                diags.append(
                    {
                        "frame": fr.frame_index_k,
                        "bin": fr.bin_index,
                        "bin_hz": fr.freq_hz,
                        "method": method,
                        "iterations": 0,
                        "converged": True,
                        "primal_residual": None,
                        "dual_residual": None,
                        "objective": float(0.5 * np.linalg.norm(fr.Y - est.H @ fr.X) ** 2),
                        **{k: v for k, v in est.meta.items() if k in ("gram_cond", "ls_ridge_fallback")},
                    }
                )
        return mats, diags

    if jobs > 1 and len(bin_order) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_bin, bin_order))
    else:
        results = [run_bin(b) for b in bin_order]

    data = np.empty((K, len(bin_order), N, P), dtype=np.complex128)
    diagnostics = []
    for j, (mats, _) in enumerate(results):
        for est in mats:
            data[est.frame_index_k - 1, j] = est.H
    # deterministic diagnostic order: frame-major, bin-ascending
    per_bin = [diags for _, diags in results]
    for k in range(K):
        for j in range(len(bin_order)):
            diagnostics.append(per_bin[j][k])

    return ChannelTensor(data, bins_hz, bin_order, method, config, diagnostics)


# ---------------------------------------------------------------------------
# Persistence: metadata JSON + raw little-endian float64 binary of
# interleaved (re, im) pairs, frame-major, bins ascending, row-major.
# ---------------------------------------------------------------------------

def _strip_json_suffix(path: str) -> str:
    return path[: -len(".json")] if path.endswith(".json") else path


def save_tensor(tensor: ChannelTensor, base_path: str) -> tuple[str, str]:
    base = _strip_json_suffix(str(base_path))
    N, P = tensor.shape_NP
    meta = {
        "version": 1,
        "N": N,
        "P": P,
        "bins": list(tensor.bins_hz),
        "bin_indices": list(tensor.bin_indices),
        "frames": tensor.num_frames_K,
        "method": tensor.method,
        "config": tensor.config,
        "layout": TENSOR_LAYOUT,
    }
    meta_path, bin_path = base + ".json", base + ".bin"
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    np.ascontiguousarray(tensor.data).astype("<c16").view("<f8").tofile(bin_path)
    return meta_path, bin_path


def load_tensor(base_path: str) -> ChannelTensor:
    base = _strip_json_suffix(str(base_path))
    with open(base + ".json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("version") != 1:
        raise InvalidInputError(f"unsupported tensor file version {meta.get('version')!r}")
    if meta.get("layout") != TENSOR_LAYOUT:
        raise InvalidInputError(f"unsupported tensor layout {meta.get('layout')!r}")
    K, nb, N, P = meta["frames"], len(meta["bins"]), meta["N"], meta["P"]
    raw = np.fromfile(base + ".bin", dtype="<f8")
    if raw.size != 2 * K * nb * N * P:
        raise InvalidInputError(
            f"binary holds {raw.size} floats, metadata expects {2 * K * nb * N * P}"
        )
    data = raw.view("<c16").reshape(K, nb, N, P)
    return ChannelTensor(
        data,
        meta["bins"],
        meta.get("bin_indices", list(range(nb))),
        meta.get("method", ""),
        meta.get("config", {}),
    )


def write_diagnostics_jsonl(diagnostics, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in diagnostics:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
