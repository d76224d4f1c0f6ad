"""Batch command-line interface: estimate, sweep, simulate, graph-build.

Exit codes: 0 success, 2 invalid configuration, 3 I/O failure, 4 numeric
failure. Errors print one machine-parsable JSON line on stderr. All outputs
are written to temporary names and renamed on completion, and identical
configuration plus seed yields byte-identical files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import errors as err
from .estimators import (
    StareConfig,
    estimate_sequence,
    save_tensor,
    write_diagnostics_jsonl,
)
from .evaluation import (
    comparison_from_means,
    evaluate_tensor,
    sweep_symbol_length,
    write_compare_csv,
    write_compare_json,
    write_metrics_csv,
    write_metrics_json,
    write_sweep_csv,
    write_sweep_json,
)
from .frontend import (
    BandpassSpec,
    SegmentationPlan,
    frames_from_recordings,
    load_recording,
    read_recording_csv,
    save_recording,
)
from .graph import (
    graph_from_edge_list,
    graph_from_positions,
    load_edge_list,
    preset_graph,
    save_edge_list,
)
from .synthetic import (
    FrequencyDomainRecipe,
    TimeDomainRecipe,
    build_recipe_graph,
    gen_dataset,
    gen_time_domain,
    load_recipe,
    truth_tensor_for_plan,
)

# Fixed default seed: absence of --seed must stay deterministic for CI.
DEFAULT_SEED = 1729

DEFAULT_SWEEP_GRID = tuple(
    int(round(v)) for v in np.geomspace(1e3, 1e5, 9)
)  # exponential spacing over 10^3..10^5

_CONFIG_ERRORS = (
    err.ConfigError,
    err.InvalidSpecError,
    err.InvalidRecipeError,
    err.InvalidInputError,
    err.InvalidEdgeError,
    err.AlignmentError,
    err.ShapeError,
    err.InsufficientDataError,
)
_NUMERIC_ERRORS = (err.NumericError, err.DegenerateInputError, np.linalg.LinAlgError)


def _fail(code: int, message: str) -> int:
    print(json.dumps({"error": {"code": code, "message": message}}), file=sys.stderr)
    return code


def _require_file(path: str, what: str) -> None:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")


def _atomic(write_fn, final_path: str) -> None:
    tmp = final_path + ".partial"
    write_fn(tmp)
    os.replace(tmp, final_path)


def _atomic_pair(save_fn, obj, base: str) -> None:
    tmp_meta, tmp_bin = save_fn(obj, base + ".partial")
    os.replace(tmp_meta, base + ".json")
    os.replace(tmp_bin, base + ".bin")


def _parse_band(text: str) -> BandpassSpec | None:
    if text == "none":
        return None
    try:
        low, high = (float(v) for v in text.split(","))
    except ValueError:
        raise err.ConfigError(f"--band expects 'low,high' or 'none', got {text!r}") from None
    return BandpassSpec(low_cut_hz=low, high_cut_hz=high)


def _load_positions(path: str) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise err.ConfigError(f"{path}:{lineno}: expected 'x y z'")
            rows.append([float(v) for v in parts])
    if not rows:
        raise err.ConfigError(f"{path}: no positions")
    return np.asarray(rows)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brainchannel",
        description="Frequency-domain MIMO channel estimation for paired recordings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; explicit flags override it")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help=f"RNG seed (default {DEFAULT_SEED})")
        p.add_argument("--jobs", type=int, help="worker threads across bins (default 1)")
        p.add_argument("--format", choices=("csv", "json", "both"), help="table output format (default both)")

    def add_inputs(p):
        p.add_argument("--src", help="source recording base path (.json/.bin pair or .csv)")
        p.add_argument("--rcv", help="receiver recording base path (.json/.bin pair or .csv)")
        p.add_argument("--fs", type=float, help="sample rate for CSV recordings")
        p.add_argument("--recipe", help="synthetic recipe: JSON path or packaged name")

    def add_plan(p):
        p.add_argument("--symbol-len", type=int, help="samples per symbol (L)")
        p.add_argument("--frame-symbols", type=int, help="symbols per frame (M)")
        p.add_argument("--max-freq", type=float, help="highest retained frequency in Hz (default 30)")
        p.add_argument("--band", help="bandpass 'low,high' in Hz or 'none' (default 0.3,400)")
        p.add_argument("--filter-order", type=int, help="Butterworth order (default 4)")
        p.add_argument("--single-pass", action="store_true", help="causal filtering instead of zero-phase")

    def add_graph(p):
        p.add_argument("--graph-preset", help="named electrode graph preset (e.g. 1020-17)")
        p.add_argument("--edges", help="edge-list file (one 'i j' per line, 1-based)")
        p.add_argument("--positions", help="positions file ('x y z' per line)")
        p.add_argument("--threshold", type=float, help="adjacency distance threshold for --positions")

    def add_estimator(p):
        p.add_argument("--estimator", choices=("ls", "mmse", "stare", "all"), help="default ls")
        p.add_argument("--mu", type=float, help="spatial smoothness weight (default 1.0)")
        p.add_argument("--nu", type=float, help="temporal continuity weight (default 1.0)")
        p.add_argument("--rho", type=float, help="ADMM penalty parameter (default 1.0)")
        p.add_argument("--iters", type=int, help="ADMM iteration cap (default 50)")
        p.add_argument("--tol", type=float, help="ADMM residual tolerance (default 1e-6; 0 disables)")
        p.add_argument("--anchor", choices=("ls", "zero"), help="first-frame temporal anchor (default ls)")
        p.add_argument("--noise-var", type=float, help="MMSE noise variance (default: LS residual median)")
        p.add_argument("--snr-db", type=float, help="override recipe SNR (frequency-domain recipes)")

    p_est = sub.add_parser("estimate", help="estimate channel tensors and metrics")
    add_inputs(p_est)
    add_plan(p_est)
    add_graph(p_est)
    add_estimator(p_est)
    p_est.add_argument("--eval-mode", choices=("insample", "heldout"), help="default insample")
    add_common(p_est)

    p_sweep = sub.add_parser("sweep", help="rerun the pipeline across symbol lengths")
    add_inputs(p_sweep)
    add_plan(p_sweep)
    add_graph(p_sweep)
    add_estimator(p_sweep)
    p_sweep.add_argument("--grid", help="comma-separated symbol lengths (default log-spaced 1e3..1e5)")
    p_sweep.add_argument("--timing", action="store_true", help="record per-row runtime in sweep.csv")
    add_common(p_sweep)

    p_sim = sub.add_parser("simulate", help="render a recipe into recordings plus ground truth")
    p_sim.add_argument("--recipe", help="time-domain recipe: JSON path or packaged name")
    add_plan(p_sim)
    add_common(p_sim)

    p_graph = sub.add_parser("graph-build", help="build an electrode graph and write its edge list")
    add_graph(p_graph)
    p_graph.add_argument("--nodes", type=int, help="node count for --edges input")
    add_common(p_graph)

    return parser


def _merge_config_file(args: argparse.Namespace) -> None:
    if not getattr(args, "config", None):
        return
    _require_file(args.config, "config file")
    with open(args.config, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise err.ConfigError(f"{args.config}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise err.ConfigError(f"{args.config}: config must be a JSON object")
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise err.ConfigError(f"{args.config}: unknown option {key!r}")
        if getattr(args, dest) in (None, False):  # flags override the file
            setattr(args, dest, value)


def _effective(args, name, default):
    v = getattr(args, name, None)
    return default if v is None else v


def _build_graph_from_flags(args):
    chosen = [
        name
        for name, val in (
            ("--graph-preset", getattr(args, "graph_preset", None)),
            ("--edges", getattr(args, "edges", None)),
            ("--positions", getattr(args, "positions", None)),
        )
        if val
    ]
    if len(chosen) > 1:
        raise err.ConfigError(f"choose one graph source, got {' and '.join(chosen)}")
    if getattr(args, "graph_preset", None):
        return preset_graph(args.graph_preset)
    if getattr(args, "edges", None):
        _require_file(args.edges, "edge-list file")
        return load_edge_list(args.edges, node_count=getattr(args, "nodes", None))
    if getattr(args, "positions", None):
        if getattr(args, "threshold", None) is None:
            raise err.ConfigError("--positions needs --threshold")
        _require_file(args.positions, "positions file")
        return graph_from_positions(_load_positions(args.positions), args.threshold)
    return None


def _stare_cfg(args) -> StareConfig:
    return StareConfig(
        mu=_effective(args, "mu", 1.0),
        nu=_effective(args, "nu", 1.0),
        rho=_effective(args, "rho", 1.0),
        max_iters_t_max=_effective(args, "iters", 50),
        residual_tol=_effective(args, "tol", 1e-6),
    )


def _bandpass(args) -> BandpassSpec | None:
    spec = _parse_band(_effective(args, "band", "0.3,400"))
    if spec is None:
        return None
    return BandpassSpec(
        low_cut_hz=spec.low_cut_hz,
        high_cut_hz=spec.high_cut_hz,
        order=_effective(args, "filter_order", 4),
        zero_phase=not getattr(args, "single_pass", False),
    )


def _load_recording_arg(path: str, what: str, fs: float | None):
    if path.endswith(".csv"):
        _require_file(path, what)
        if fs is None:
            raise err.ConfigError(f"{what}: CSV input needs --fs")
        return read_recording_csv(path, fs)
    base = path[: -len(".json")] if path.endswith(".json") else path
    _require_file(base + ".json", what + " metadata")
    _require_file(base + ".bin", what + " samples")
    return load_recording(base)


def _gather_inputs(args):
    """Resolve --src/--rcv or --recipe into frames plus optional ground truth.

    Returns (frames, graph_from_recipe, truth_tensor, truth_fn, recordings).
    """
    has_pair = bool(getattr(args, "src", None) or getattr(args, "rcv", None))
    has_recipe = bool(getattr(args, "recipe", None))
    if has_pair == has_recipe:
        raise err.ConfigError("give either --src and --rcv, or --recipe (exactly one input source)")

    bandpass = _bandpass(args)
    seed = getattr(args, "seed", None)

    if has_pair:
        if not (getattr(args, "src", None) and getattr(args, "rcv", None)):
            raise err.ConfigError("--src and --rcv must be given together")
        src = _load_recording_arg(args.src, "source recording", getattr(args, "fs", None))
        rcv = _load_recording_arg(args.rcv, "receiver recording", getattr(args, "fs", None))
        plan = _plan_from_flags(args, src.sample_rate_hz, src.num_samples, required=True)
        frames = frames_from_recordings(src, rcv, plan, bandpass)
        return frames, None, None, None, (src, rcv, plan)

    recipe = load_recipe(args.recipe)
    if isinstance(recipe, TimeDomainRecipe):
        if seed is not None:
            recipe = recipe.with_seed(seed)
        data = gen_time_domain(recipe)
        plan = _plan_from_flags(
            args,
            recipe.sample_rate_hz,
            data.src.num_samples,
            recipe_plan=recipe.plan,
            required=True,
        )
        frames = frames_from_recordings(data.src, data.rcv, plan, bandpass)
        truth = truth_tensor_for_plan(data, plan)
        truth_fn = lambda p: truth_tensor_for_plan(data, p)  # noqa: E731
        graph = _recipe_graph(recipe, data.rcv.num_channels)
        return frames, graph, truth, truth_fn, (data.src, data.rcv, plan)
    if isinstance(recipe, FrequencyDomainRecipe):
        ch = recipe.channel
        if seed is not None:
            ch = dataclasses.replace(ch, seed=seed)
        snr = _effective(args, "snr_db", recipe.snr_db)
        graph = recipe.build_graph()
        dataset = gen_dataset(ch, graph, recipe.symbols_per_frame_M, snr)
        return list(dataset.frames), graph, dataset.true_channels, None, None
    raise err.ConfigError(f"unsupported recipe type {type(recipe).__name__}")


def _recipe_graph(recipe: TimeDomainRecipe, n_rcv: int):
    return build_recipe_graph(recipe.rcv_graph, n_rcv)


def _plan_from_flags(args, fs, num_samples, recipe_plan=None, required=False):
    rp = recipe_plan or {}
    L = _effective(args, "symbol_len", rp.get("symbol_len"))
    M = _effective(args, "frame_symbols", rp.get("frame_symbols"))
    max_freq = _effective(args, "max_freq", rp.get("max_freq", 30.0))
    if L is None or M is None:
        if required:
            raise err.ConfigError("--symbol-len and --frame-symbols are required for this input")
        return None
    return SegmentationPlan(int(L), int(M), fs, float(max_freq), num_samples)


def _out_dir(args) -> str:
    out = _effective(args, "out", None)
    if not out:
        raise err.ConfigError("--out is required")
    os.makedirs(out, exist_ok=True)
    return out


def _formats(args) -> tuple[bool, bool]:
    fmt = _effective(args, "format", "both")
    return fmt in ("csv", "both"), fmt in ("json", "both")


def _estimator_list(args) -> list[str]:
    est = _effective(args, "estimator", "ls")
    return ["ls", "mmse", "stare"] if est == "all" else [est]


def cmd_estimate(args) -> int:
    frames, recipe_graph, truth, _, _ = _gather_inputs(args)
    methods = _estimator_list(args)
    graph = _build_graph_from_flags(args) or recipe_graph
    if "stare" in methods and graph is None:
        raise err.ConfigError(
            "the regularized estimator needs --graph-preset, --edges, or --positions/--threshold"
        )
    out = _out_dir(args)
    want_csv, want_json = _formats(args)
    jobs = _effective(args, "jobs", 1)
    cfg = _stare_cfg(args)
    mode = _effective(args, "eval_mode", "insample")

    reports = {}
    for method in methods:
        tensor = estimate_sequence(
            frames,
            method=method,
            graph=graph,
            cfg=cfg,
            noise_var=getattr(args, "noise_var", None),
            first_anchor=_effective(args, "anchor", "ls"),
            jobs=jobs,
        )
        report = evaluate_tensor(tensor, frames, true_channels=truth, mode=mode)
        reports[method] = report
        _atomic_pair(save_tensor, tensor, os.path.join(out, f"tensor_{method}"))
        _atomic(
            lambda p, t=tensor: write_diagnostics_jsonl(t.diagnostics, p),
            os.path.join(out, f"diagnostics_{method}.jsonl"),
        )
        if want_csv:
            _atomic(lambda p, r=report: write_metrics_csv(r, p), os.path.join(out, f"metrics_{method}.csv"))
        if want_json:
            _atomic(lambda p, r=report: write_metrics_json(r, p), os.path.join(out, f"metrics_{method}.json"))

    if len(methods) > 1:
        table = comparison_from_means({m: r.mse_avg for m, r in reports.items()})
        if want_csv:
            _atomic(lambda p: write_compare_csv(table, p), os.path.join(out, "compare.csv"))
        if want_json:
            _atomic(lambda p: write_compare_json(table, p), os.path.join(out, "compare.json"))
    return 0


def cmd_sweep(args) -> int:
    grid_text = _effective(args, "grid", None)
    if grid_text:
        try:
            grid = [int(v) for v in str(grid_text).split(",") if v.strip()]
        except ValueError:
            raise err.ConfigError(f"--grid expects comma-separated integers, got {grid_text!r}") from None
    else:
        grid = list(DEFAULT_SWEEP_GRID)
    if not grid:
        raise err.ConfigError("empty sweep grid")

    has_pair = bool(getattr(args, "src", None) or getattr(args, "rcv", None))
    bandpass = _bandpass(args)
    if has_pair:
        if not (getattr(args, "src", None) and getattr(args, "rcv", None)):
            raise err.ConfigError("--src and --rcv must be given together")
        src = _load_recording_arg(args.src, "source recording", getattr(args, "fs", None))
        rcv = _load_recording_arg(args.rcv, "receiver recording", getattr(args, "fs", None))
        truth_fn = None
        recipe_graph = None
    elif getattr(args, "recipe", None):
        recipe = load_recipe(args.recipe)
        if not isinstance(recipe, TimeDomainRecipe):
            raise err.ConfigError("sweep needs recordings or a time-domain recipe")
        seed = getattr(args, "seed", None)
        if seed is not None:
            recipe = recipe.with_seed(seed)
        data = gen_time_domain(recipe)
        src, rcv = data.src, data.rcv
        truth_fn = lambda p: truth_tensor_for_plan(data, p)  # noqa: E731
        recipe_graph = _recipe_graph(recipe, data.rcv.num_channels)
    else:
        raise err.ConfigError("give either --src and --rcv, or --recipe")

    methods = _estimator_list(args)
    graph = _build_graph_from_flags(args) or recipe_graph
    if "stare" in methods and graph is None:
        raise err.ConfigError("the regularized estimator needs an electrode graph")
    M = _effective(args, "frame_symbols", None)
    if M is None:
        raise err.ConfigError("--frame-symbols is required for sweep")

    result = sweep_symbol_length(
        src,
        rcv,
        grid,
        int(M),
        estimators=methods,
        graph=graph,
        stare_cfg=_stare_cfg(args),
        noise_var=getattr(args, "noise_var", None),
        max_freq_hz=_effective(args, "max_freq", 30.0),
        bandpass=bandpass,
        true_channels_fn=truth_fn,
        jobs=_effective(args, "jobs", 1),
        timing=bool(getattr(args, "timing", False)),
    )
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)

    out = _out_dir(args)
    want_csv, want_json = _formats(args)
    if want_csv:
        _atomic(lambda p: write_sweep_csv(result, p), os.path.join(out, "sweep.csv"))
    if want_json:
        _atomic(lambda p: write_sweep_json(result, p), os.path.join(out, "sweep.json"))
    return 0


def cmd_simulate(args) -> int:
    if not getattr(args, "recipe", None):
        raise err.ConfigError("--recipe is required for simulate")
    recipe = load_recipe(args.recipe)
    if not isinstance(recipe, TimeDomainRecipe):
        raise err.ConfigError("simulate needs a time-domain recipe (it writes recordings)")
    seed = getattr(args, "seed", None)
    if seed is not None:
        recipe = recipe.with_seed(seed)
    data = gen_time_domain(recipe)
    plan = _plan_from_flags(
        args, recipe.sample_rate_hz, data.src.num_samples, recipe_plan=recipe.plan, required=True
    )
    truth = truth_tensor_for_plan(data, plan)
    out = _out_dir(args)
    _atomic_pair(save_recording, data.src, os.path.join(out, "src_recording"))
    _atomic_pair(save_recording, data.rcv, os.path.join(out, "rcv_recording"))
    _atomic_pair(save_tensor, truth, os.path.join(out, "true_channels"))
    return 0


def cmd_graph_build(args) -> int:
    graph = _build_graph_from_flags(args)
    if graph is None:
        raise err.ConfigError("give --graph-preset, --edges, or --positions with --threshold")
    out = _out_dir(args)
    _atomic(lambda p: save_edge_list(graph, p), os.path.join(out, "edges.txt"))
    print(f"{graph.node_count} nodes, {graph.num_edges} edges")
    return 0


_COMMANDS = {
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "graph-build": cmd_graph_build,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        _merge_config_file(args)
        return _COMMANDS[args.command](args)
    except _CONFIG_ERRORS as exc:
        return _fail(2, str(exc))
    except OSError as exc:
        return _fail(3, str(exc))
    except _NUMERIC_ERRORS as exc:
        return _fail(4, str(exc))


if __name__ == "__main__":
    sys.exit(main())
