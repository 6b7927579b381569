"""Experiment harness: gen | run | sweep | compare.

Configuration is a flat key = value text file ('#' starts a comment); CLI
flags override file keys.  Data goes to files under the output directory,
stdout carries a one-line summary, diagnostics go to stderr.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 internal
invariant violation.

Config keys:
    seq_len, dim, heads     attention geometry (ints)
    format                  fixed-point format string, default Q8.8
    rho_b, tau_h            pruning parameters (floats)
    pruned_logit            exclude | zero
    seed                    synthetic generator seed (int)
    simulate                true | false, run the co-processor model too
    dist                    gaussian | uniform
    mu, sigma               gaussian parameters
    low, high               uniform parameters
    input_q, input_k, input_v   HDPT paths (omit to use synthetic inputs)
    out_dir                 artifact directory
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .fxp import FxpFormat
from .mask import BlockMask, mask_overlap, save_masks_csv
from .pruning import PruneParams, PruneStats, hdp_attention
from .reference import (
    PRUNED_EXCLUDE,
    PRUNED_LOGIT_MODES,
    AttentionConfig,
    exact_attention,
    exact_head_scores,
    masked_softmax_attention,
    topk_block_prune,
)
from .simulator import SimReport, simulate_layer
from .tensorio import Gaussian, Matrix, TensorFileError, Uniform, gen_synthetic, load_tensor, save_tensor

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INTERNAL = 4


class ConfigError(Exception):
    pass


class InternalCheckError(Exception):
    pass


@dataclass
class RunConfig:
    seq_len: int = 0
    dim: int = 0
    heads: int = 1
    format: str = "Q8.8"
    rho_b: float = 0.0
    tau_h: float = 0.0
    pruned_logit: str = PRUNED_EXCLUDE
    seed: int = 0
    simulate: bool = False
    dist: str = "gaussian"
    mu: float = 0.0
    sigma: float = 1.0
    low: float = -1.0
    high: float = 1.0
    input_q: str = ""
    input_k: str = ""
    input_v: str = ""
    out_dir: str = "hdp_out"

    def validated(self) -> "RunConfig":
        if self.seq_len < 2 or self.seq_len % 2:
            raise ConfigError(f"seq_len: need an even value >= 2, got {self.seq_len}")
        if self.dim < 1:
            raise ConfigError(f"dim: need a positive value, got {self.dim}")
        if self.heads < 1 or self.dim % self.heads:
            raise ConfigError(f"heads: {self.heads} must be positive and divide dim={self.dim}")
        try:
            FxpFormat.parse(self.format)
        except ValueError as e:
            raise ConfigError(f"format: {e}") from None
        if not -1.0 < self.rho_b < 1.0:
            raise ConfigError(f"rho_b: must lie in (-1, 1), got {self.rho_b}")
        if self.tau_h < 0:
            raise ConfigError(f"tau_h: must be >= 0, got {self.tau_h}")
        if self.pruned_logit not in PRUNED_LOGIT_MODES:
            raise ConfigError(f"pruned_logit: must be one of {PRUNED_LOGIT_MODES}")
        if self.dist not in ("gaussian", "uniform"):
            raise ConfigError(f"dist: must be gaussian or uniform, got {self.dist!r}")
        if self.sigma < 0:
            raise ConfigError(f"sigma: must be >= 0, got {self.sigma}")
        if self.high < self.low:
            raise ConfigError(f"high: must be >= low, got low={self.low} high={self.high}")
        given = [p for p in (self.input_q, self.input_k, self.input_v) if p]
        if given and len(given) != 3:
            raise ConfigError("input_q/input_k/input_v: give all three paths or none")
        return self


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def parse_config(path) -> RunConfig:
    cfg = RunConfig()
    known = {f.name: f.type for f in fields(RunConfig)}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"config file: {e}") from None
    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw_line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _coerce(key, value))
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: {key}: {e}") from None
    return cfg


def _coerce(key: str, value: str):
    current = getattr(RunConfig(), key)
    if isinstance(current, bool):
        if value.lower() not in _BOOL_WORDS:
            raise ValueError(f"expected a boolean, got {value!r}")
        return _BOOL_WORDS[value.lower()]
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def _distribution(cfg: RunConfig):
    if cfg.dist == "gaussian":
        return Gaussian(cfg.mu, cfg.sigma)
    return Uniform(cfg.low, cfg.high)


def _load_inputs(cfg: RunConfig) -> tuple[Matrix, Matrix, Matrix, AttentionConfig]:
    fmt = FxpFormat.parse(cfg.format)
    attn = AttentionConfig(cfg.seq_len, cfg.dim, cfg.heads, fmt)
    if cfg.input_q:
        q = load_tensor(cfg.input_q, expect_fmt=fmt)
        k = load_tensor(cfg.input_k, expect_fmt=fmt)
        v = load_tensor(cfg.input_v, expect_fmt=fmt)
        for name, m in (("input_q", q), ("input_k", k), ("input_v", v)):
            if (m.rows, m.cols) != (cfg.seq_len, cfg.dim):
                raise ConfigError(
                    f"{name}: tensor is {m.rows}x{m.cols}, config wants {cfg.seq_len}x{cfg.dim}"
                )
        return q, k, v, attn
    dist = _distribution(cfg)
    q = gen_synthetic(cfg.seq_len, cfg.dim, dist, cfg.seed, fmt)
    k = gen_synthetic(cfg.seq_len, cfg.dim, dist, cfg.seed + 1, fmt)
    v = gen_synthetic(cfg.seq_len, cfg.dim, dist, cfg.seed + 2, fmt)
    return q, k, v, attn


# --- evaluation shared by run/sweep/compare ---


@dataclass
class PointResult:
    params: PruneParams
    output: Matrix
    masks: list[BlockMask]
    stats: PruneStats
    max_abs_error: float
    mean_abs_error: float
    topk_overlap: float
    topk_max_abs_error: float
    topk_mean_abs_error: float
    topk_keep_fraction: float
    sim: SimReport | None = None


def evaluate_point(
    Q: Matrix,
    K: Matrix,
    V: Matrix,
    attn: AttentionConfig,
    params: PruneParams,
    pruned_logit: str,
    simulate: bool,
    self_compare: bool = False,
) -> PointResult:
    out, masks, stats = hdp_attention(Q, K, V, params, attn, pruned_logit)
    golden = exact_attention(Q, K, V, attn)
    diff = np.abs(out.to_reals() - golden)
    scores = exact_head_scores(Q, K, attn)
    v_real = V.to_reals()
    d_h = attn.head_dim

    pruned_fraction = stats.block_pruned_fraction()
    keep_fraction = min(1.0, max(1.0 - pruned_fraction, 1.0 / (attn.seq_len // 2)))
    topk_out = np.empty_like(golden)
    inter = 0
    hdp_kept = 0
    for h in range(attn.num_heads):
        tmask = topk_block_prune(scores[h], keep_fraction)
        base = tmask if self_compare else masks[h]
        inter += int(np.logical_and(base.bits, tmask.bits).sum())
        hdp_kept += base.kept()
        topk_out[:, h * d_h : (h + 1) * d_h] = masked_softmax_attention(
            scores[h], tmask, v_real[:, h * d_h : (h + 1) * d_h], pruned_logit
        )
    overlap = 1.0 if hdp_kept == 0 else inter / hdp_kept
    if not 0.0 <= overlap <= 1.0:
        raise InternalCheckError(f"mask overlap {overlap} outside [0, 1]")
    tdiff = np.abs(topk_out - golden)

    sim = None
    if simulate:
        sim_out, sim, sim_masks = simulate_layer(Q, K, V, params, attn, pruned_logit)
        if any(sm != m for sm, m in zip(sim_masks, masks)):
            raise InternalCheckError("simulator masks diverged from pruning pipeline")
    return PointResult(
        params=params,
        output=out,
        masks=masks,
        stats=stats,
        max_abs_error=float(diff.max()),
        mean_abs_error=float(diff.mean()),
        topk_overlap=overlap,
        topk_max_abs_error=float(tdiff.max()),
        topk_mean_abs_error=float(tdiff.mean()),
        topk_keep_fraction=keep_fraction,
        sim=sim,
    )


# --- CSV writers ---

STATS_COLUMNS = [
    "blocks_total",
    "blocks_pruned",
    "heads_total",
    "heads_pruned",
    "macs_integer",
    "macs_frac_executed",
    "macs_frac_skipped",
    "macs_av",
    "k_elements_fetch_skipped",
    "block_pruned_fraction",
    "head_pruned_fraction",
]

SWEEP_COLUMNS = [
    "rho_b",
    "tau_h",
    "block_pruned_fraction",
    "head_pruned_fraction",
    "max_abs_error",
    "mean_abs_error",
    "topk_overlap",
    *STATS_COLUMNS[:9],
    "sim_tile_steps",
    "sim_dram_fetched_bytes",
    "sim_dram_skipped_bytes",
    "sim_softmax_max_abs_err",
]

COMPARE_COLUMNS = [
    "rho_b",
    "tau_h",
    "hdp_pruned_fraction",
    "topk_keep_fraction",
    "mask_overlap",
    "hdp_max_abs_error",
    "hdp_mean_abs_error",
    "topk_max_abs_error",
    "topk_mean_abs_error",
]


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _stats_cells(stats: PruneStats) -> list:
    return [
        stats.blocks_total,
        stats.blocks_pruned,
        stats.heads_total,
        stats.heads_pruned,
        stats.macs_integer,
        stats.macs_frac_executed,
        stats.macs_frac_skipped,
        stats.macs_av,
        stats.k_elements_fetch_skipped,
        stats.block_pruned_fraction(),
        stats.head_pruned_fraction(),
    ]


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _sweep_row(result: PointResult) -> list:
    row = [
        result.params.block_ratio,
        result.params.head_threshold,
        result.stats.block_pruned_fraction(),
        result.stats.head_pruned_fraction(),
        result.max_abs_error,
        result.mean_abs_error,
        result.topk_overlap,
        *_stats_cells(result.stats)[:9],
    ]
    if result.sim is not None:
        row += [
            result.sim.total("tile_steps"),
            result.sim.total("dram_fetched_bytes"),
            result.sim.total("dram_skipped_bytes"),
            result.sim.softmax_max_abs_err,
        ]
    else:
        row += ["", "", "", ""]
    return row


# --- subcommands ---


def cmd_gen(args) -> int:
    fmt = FxpFormat.parse(args.format)
    if args.dist == "gaussian":
        dist = Gaussian(args.mu, args.sigma)
    else:
        dist = Uniform(args.low, args.high)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for offset, name in enumerate(("q", "k", "v")):
        m = gen_synthetic(args.rows, args.cols, dist, args.seed + offset, fmt)
        save_tensor(out_dir / f"{name}.hdpt", m)
    print(f"gen: wrote q.hdpt k.hdpt v.hdpt ({args.rows}x{args.cols}, {fmt}) to {out_dir}")
    return EXIT_OK


def _config_from_args(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.format is not None:
        overrides["format"] = args.format
    if args.pruned_logit is not None:
        overrides["pruned_logit"] = args.pruned_logit
    if getattr(args, "simulate", False):
        overrides["simulate"] = True
    if cfg is not None and overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def _single_param_override(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "rho", None):
        values = _parse_float_list(args.rho, "--rho")
        if len(values) != 1:
            raise ConfigError("--rho: run takes a single value")
        cfg = replace(cfg, rho_b=values[0])
    if getattr(args, "tau", None):
        values = _parse_float_list(args.tau, "--tau")
        if len(values) != 1:
            raise ConfigError("--tau: run takes a single value")
        cfg = replace(cfg, tau_h=values[0])
    return cfg


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigError(f"{flag}: expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise ConfigError(f"{flag}: empty list")
    return values


def cmd_run(args) -> int:
    cfg = _single_param_override(_config_from_args(args), args).validated()
    Q, K, V, attn = _load_inputs(cfg)
    params = PruneParams(cfg.rho_b, cfg.tau_h)
    result = evaluate_point(Q, K, V, attn, params, cfg.pruned_logit, cfg.simulate)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_tensor(out_dir / "output.hdpt", result.output)
    save_masks_csv(out_dir / "masks.csv", result.masks)
    _write_csv(out_dir / "stats.csv", STATS_COLUMNS, [_stats_cells(result.stats)])
    extra = ""
    if result.sim is not None:
        result.sim.to_csv(out_dir / "sim_report.csv")
        extra = " + sim_report.csv"
    print(
        f"run: wrote output.hdpt masks.csv stats.csv{extra} to {out_dir} "
        f"(blocks pruned {result.stats.block_pruned_fraction():.3f}, "
        f"heads pruned {result.stats.heads_pruned}/{result.stats.heads_total})"
    )
    return EXIT_OK


def _grid(args, cfg: RunConfig) -> tuple[list[float], list[float]]:
    rhos = _parse_float_list(args.rho, "--rho") if args.rho else [cfg.rho_b]
    taus = _parse_float_list(args.tau, "--tau") if args.tau else [cfg.tau_h]
    return rhos, taus


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args).validated()
    rhos, taus = _grid(args, cfg)
    Q, K, V, attn = _load_inputs(cfg)
    rows = []
    for rho in rhos:
        for tau in taus:
            params = PruneParams(rho, tau)
            result = evaluate_point(Q, K, V, attn, params, cfg.pruned_logit, cfg.simulate)
            rows.append(_sweep_row(result))
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "sweep.csv", SWEEP_COLUMNS, rows)
    print(f"sweep: {len(rows)} points ({len(rhos)} rho x {len(taus)} tau) -> {out_dir / 'sweep.csv'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _config_from_args(args).validated()
    rhos, taus = _grid(args, cfg)
    Q, K, V, attn = _load_inputs(cfg)
    rows = []
    for rho in rhos:
        for tau in taus:
            params = PruneParams(rho, tau)
            result = evaluate_point(
                Q, K, V, attn, params, cfg.pruned_logit, simulate=False, self_compare=args.self_compare
            )
            rows.append(
                [
                    rho,
                    tau,
                    result.stats.block_pruned_fraction(),
                    result.topk_keep_fraction,
                    result.topk_overlap,
                    result.max_abs_error,
                    result.mean_abs_error,
                    result.topk_max_abs_error,
                    result.topk_mean_abs_error,
                ]
            )
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "compare.csv", COMPARE_COLUMNS, rows)
    print(f"compare: {len(rows)} points -> {out_dir / 'compare.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdp", description="Pruned-attention experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate synthetic Q/K/V HDPT files")
    gen.add_argument("--rows", type=int, required=True)
    gen.add_argument("--cols", type=int, required=True)
    gen.add_argument("--dist", choices=("gaussian", "uniform"), default="gaussian")
    gen.add_argument("--mu", type=float, default=0.0)
    gen.add_argument("--sigma", type=float, default=1.0)
    gen.add_argument("--low", type=float, default=-1.0)
    gen.add_argument("--high", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--format", default="Q8.8")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=cmd_gen)

    for name, func, needs_lists in (
        ("run", cmd_run, False),
        ("sweep", cmd_sweep, True),
        ("compare", cmd_compare, True),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--rho", help="comma-separated block pruning ratios" if needs_lists else "block pruning ratio")
        p.add_argument("--tau", help="comma-separated head thresholds" if needs_lists else "head threshold")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory override")
        p.add_argument("--format", help="fixed-point format, e.g. Q8.8")
        p.add_argument("--pruned-logit", dest="pruned_logit", choices=PRUNED_LOGIT_MODES)
        if name == "run" or name == "sweep":
            p.add_argument("--simulate", action="store_true", help="also run the co-processor model")
        if name == "compare":
            p.add_argument("--self-compare", dest="self_compare", action="store_true")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"file not found: {e.filename or e}", file=sys.stderr)
        return EXIT_IO
    except (TensorFileError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except InternalCheckError as e:
        print(f"internal invariant violation: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


def entry() -> None:
    sys.exit(main())
