"""Command-line entry point.

Subcommands: model demo/validate, tok train/encode/decode/stats,
moe upcycle, decontam scan, attn bench, config show. Exit codes: 0 success,
1 validation or runtime failure, 2 usage error. The QWENKIT_VERBOSITY
environment variable (quiet, info, debug) controls diagnostics on stderr;
every run prints a header line naming the subcommand and its seed.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import decontam as dc
from . import tokenizer as tok
from .config import format_config, preset, preset_names
from .errors import ConfigError, QwenKitError
from .layers import AttentionParams, RopeParams, gqa_attention
from .longctx import DcaParams, dca_attention
from .model import build_model, greedy_decode, upcycle_model
from .moe import MoeConfig
from .ops import Rng
from .serialize import load_weights, save_weights

VERBOSITY_LEVELS = ("quiet", "info", "debug")
ENV_VERBOSITY = "QWENKIT_VERBOSITY"

# Published architecture table used by `model validate` as an independent
# cross-check of the preset registry.
_EXPECTED = {
    "qwen2-0.5b": dict(hidden=896, n_layers=24, n_q_heads=14, n_kv_heads=2,
                       head_dim=64, ffn_intermediate=4864, tie_embeddings=True,
                       vocab_size=151646),
    "qwen2-1.5b": dict(hidden=1536, n_layers=28, n_q_heads=12, n_kv_heads=2,
                       head_dim=128, ffn_intermediate=8960, tie_embeddings=True,
                       vocab_size=151646),
    "qwen2-7b": dict(hidden=3584, n_layers=28, n_q_heads=28, n_kv_heads=4,
                     head_dim=128, ffn_intermediate=18944, tie_embeddings=False,
                     vocab_size=151646),
    "qwen2-72b": dict(hidden=8192, n_layers=80, n_q_heads=64, n_kv_heads=8,
                      head_dim=128, ffn_intermediate=29568, tie_embeddings=False,
                      vocab_size=151646),
    "qwen2-57b-a14b": dict(hidden=3584, n_layers=28, n_q_heads=28, n_kv_heads=4,
                           head_dim=128, ffn_intermediate=2560, tie_embeddings=False,
                           vocab_size=151646, n_routed=64, k_active=8, n_shared=8),
}


def _id_list(raw: str) -> list[int]:
    try:
        return [int(part) for part in raw.split(",") if part.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}")


def _verbosity() -> str | None:
    level = os.environ.get(ENV_VERBOSITY, "info")
    if level not in VERBOSITY_LEVELS:
        print(f"usage error: {ENV_VERBOSITY} must be one of {VERBOSITY_LEVELS}, "
              f"got {level!r}", file=sys.stderr)
        return None
    return level


class _Run:
    """Per-invocation diagnostics respecting the verbosity level."""

    def __init__(self, command: str, seed: int | None, level: str):
        self.level = level
        if level != "quiet":
            line = f"# qwenkit {command}"
            if seed is not None:
                line += f" seed={seed}"
            print(line, file=sys.stderr)

    def debug(self, message: str) -> None:
        if self.level == "debug":
            print(f"# {message}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qwenkit",
        description="Desk-scale grouped-query transformer mechanisms: "
                    "attention, long-context remapping, mixture-of-experts, "
                    "byte-level BPE, and contamination scans.",
    )
    top = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p_model = top.add_parser("model", help="build, run, and validate model presets")
    model_sub = p_model.add_subparsers(dest="subcommand", required=True, metavar="SUB")
    p_demo = model_sub.add_parser("demo", help="greedy-decode from a prompt of token ids")
    p_demo.add_argument("--preset", default="nano", choices=preset_names())
    p_demo.add_argument("--prompt-ids", type=_id_list, required=True,
                        help="comma-separated token ids")
    p_demo.add_argument("--max-new", type=int, default=8)
    p_demo.add_argument("--seed", type=int, default=0)
    p_demo.set_defaults(func=_cmd_model_demo, needs_seed=True)
    p_val = model_sub.add_parser("validate", help="check a preset against the published table")
    p_val.add_argument("--preset", required=True, choices=preset_names())
    p_val.set_defaults(func=_cmd_model_validate, needs_seed=False)

    p_tok = top.add_parser("tok", help="byte-level BPE workflows")
    tok_sub = p_tok.add_subparsers(dest="subcommand", required=True, metavar="SUB")
    p_train = tok_sub.add_parser("train", help="train a vocabulary on text files")
    p_train.add_argument("--corpus", action="append", required=True,
                         help="input file; repeat for more")
    p_train.add_argument("--vocab-size", type=int, required=True)
    p_train.add_argument("--out", required=True, help="vocabulary file to write")
    p_train.set_defaults(func=_cmd_tok_train, needs_seed=False)
    p_enc = tok_sub.add_parser("encode", help="encode text to token ids")
    p_enc.add_argument("--vocab", required=True)
    enc_src = p_enc.add_mutually_exclusive_group(required=True)
    enc_src.add_argument("--text", help="literal text to encode")
    enc_src.add_argument("--infile", help="file whose bytes are encoded")
    p_enc.set_defaults(func=_cmd_tok_encode, needs_seed=False)
    p_dec = tok_sub.add_parser("decode", help="decode token ids to bytes")
    p_dec.add_argument("--vocab", required=True)
    p_dec.add_argument("--ids", type=_id_list, required=True,
                       help="comma-separated token ids")
    p_dec.set_defaults(func=_cmd_tok_decode, needs_seed=False)
    p_stats = tok_sub.add_parser("stats", help="vocabulary and compression statistics")
    p_stats.add_argument("--vocab", required=True)
    p_stats.add_argument("--corpus", action="append", required=True)
    p_stats.set_defaults(func=_cmd_tok_stats, needs_seed=False)

    p_moe = top.add_parser("moe", help="mixture-of-experts tools")
    moe_sub = p_moe.add_subparsers(dest="subcommand", required=True, metavar="SUB")
    p_up = moe_sub.add_parser("upcycle", help="initialize a MoE model from a dense one")
    p_up.add_argument("--in", dest="in_path", required=True, metavar="IN",
                      help="dense weight container")
    p_up.add_argument("--out", required=True, help="MoE weight container to write")
    p_up.add_argument("--experts", type=int, required=True, help="routed expert count")
    p_up.add_argument("--expert-dim", type=int, required=True,
                      help="per-expert intermediate size")
    p_up.add_argument("--activated", type=int, default=2, help="experts used per token")
    p_up.add_argument("--shared", type=int, default=0, help="always-on expert count")
    p_up.add_argument("--seed", type=int, default=0)
    p_up.set_defaults(func=_cmd_moe_upcycle, needs_seed=True)

    p_dc = top.add_parser("decontam", help="contamination scans")
    dc_sub = p_dc.add_subparsers(dest="subcommand", required=True, metavar="SUB")
    p_scan = dc_sub.add_parser("scan", help="scan a training corpus against test sets")
    p_scan.add_argument("--train", required=True,
                        help="file (one document per line) or directory of text files")
    p_scan.add_argument("--tests", required=True,
                        help="directory; each file is one test set, one sample per line")
    p_scan.add_argument("--mode", required=True, choices=dc.MODES)
    p_scan.add_argument("--format", default="tsv", choices=("tsv", "text"))
    p_scan.add_argument("--verdicts", help="write per-sample verdicts to this file")
    p_scan.add_argument("--ngram-n", type=int, default=13)
    p_scan.add_argument("--lcs-min-len", type=int, default=13)
    p_scan.add_argument("--lcs-min-frac", type=float, default=0.6)
    p_scan.set_defaults(func=_cmd_decontam_scan, needs_seed=False)

    p_attn = top.add_parser("attn", help="attention micro-benchmarks")
    attn_sub = p_attn.add_subparsers(dest="subcommand", required=True, metavar="SUB")
    p_bench = attn_sub.add_parser("bench", help="vanilla vs dual-chunk wall time and max diff")
    p_bench.add_argument("--seq", type=int, required=True, help="sequence length")
    p_bench.add_argument("--chunk", type=int, required=True, help="chunk size")
    p_bench.add_argument("--q-heads", type=int, default=4)
    p_bench.add_argument("--kv-heads", type=int, default=2)
    p_bench.add_argument("--head-dim", type=int, default=16)
    p_bench.add_argument("--rope-base", type=float, default=10000.0)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.set_defaults(func=_cmd_attn_bench, needs_seed=True)

    p_cfg = top.add_parser("config", help="configuration inspection")
    cfg_sub = p_cfg.add_subparsers(dest="subcommand", required=True, metavar="SUB")
    p_show = cfg_sub.add_parser("show", help="print a preset in the key = value format")
    p_show.add_argument("--preset", required=True, choices=preset_names())
    p_show.set_defaults(func=_cmd_config_show, needs_seed=False)

    return parser


def _cmd_model_demo(args, run: _Run) -> int:
    cfg = preset(args.preset)
    run.debug(f"building {args.preset}: {cfg.n_layers} layers, hidden {cfg.hidden}")
    weights = build_model(cfg, args.seed)
    ids = greedy_decode(weights, cfg, args.prompt_ids, args.max_new)
    print(" ".join(str(i) for i in ids))
    return 0


def _check(label: str, actual, expected, failures: list[str]) -> None:
    if actual != expected:
        failures.append(f"{label}: preset has {actual}, table says {expected}")
    else:
        print(f"{label}: {actual} ok")


def _cmd_model_validate(args, run: _Run) -> int:
    cfg = preset(args.preset)
    cfg.validate()
    failures: list[str] = []
    if args.preset in _EXPECTED:
        exp = _EXPECTED[args.preset]
        for key in ("hidden", "n_layers", "n_q_heads", "n_kv_heads", "head_dim",
                    "ffn_intermediate", "tie_embeddings", "vocab_size"):
            _check(key, getattr(cfg, key), exp[key], failures)
        if "n_routed" in exp:
            if cfg.moe is None:
                failures.append("moe: preset is dense, table says MoE")
            else:
                for key in ("n_routed", "k_active", "n_shared"):
                    _check(f"moe.{key}", getattr(cfg.moe, key), exp[key], failures)
        elif cfg.moe is not None:
            failures.append("moe: preset is MoE, table says dense")
    print(f"regular+control tokens: {cfg.regular_tokens}+{cfg.control_tokens} "
          f"<= vocab {cfg.vocab_size} ok")
    if failures:
        for f in failures:
            print(f"validation failure: {f}", file=sys.stderr)
        return 1
    print(f"{args.preset}: valid")
    return 0


def _read_corpus(paths: list[str]) -> list[bytes]:
    docs = []
    for raw in paths:
        p = Path(raw)
        try:
            docs.append(p.read_bytes())
        except OSError as exc:
            raise QwenKitError(f"cannot read corpus file {p}: {exc}") from exc
    return docs


def _cmd_tok_train(args, run: _Run) -> int:
    corpus = _read_corpus(args.corpus)
    vocab = tok.bpe_train(corpus, args.vocab_size)
    tok.save_vocab(vocab, args.out)
    run.debug(f"trained on {len(corpus)} files, {sum(map(len, corpus))} bytes")
    print(f"vocab: {vocab.vocab_size} ids ({len(vocab.merges)} merges, "
          f"{len(vocab.control_names)} control) -> {args.out}")
    return 0


def _cmd_tok_encode(args, run: _Run) -> int:
    vocab = tok.load_vocab(args.vocab)
    if args.text is not None:
        data = args.text.encode("utf-8")
    else:
        data = Path(args.infile).read_bytes()
    ids = tok.encode(vocab, data)
    print(" ".join(str(i) for i in ids))
    return 0


def _cmd_tok_decode(args, run: _Run) -> int:
    vocab = tok.load_vocab(args.vocab)
    data = tok.decode(vocab, args.ids)
    sys.stdout.buffer.write(data)
    sys.stdout.buffer.write(b"\n")
    sys.stdout.buffer.flush()
    return 0


def _cmd_tok_stats(args, run: _Run) -> int:
    vocab = tok.load_vocab(args.vocab)
    corpus = _read_corpus(args.corpus)
    rate = tok.compression_rate(vocab, corpus)
    print(f"vocab_size={vocab.vocab_size} merges={len(vocab.merges)} "
          f"compression_rate={rate:.4f}")
    return 0


def _cmd_moe_upcycle(args, run: _Run) -> int:
    weights, dense_cfg = load_weights(args.in_path)
    if dense_cfg.moe is not None:
        raise ConfigError(f"{args.in_path} already holds a MoE model")
    moe_cfg = MoeConfig(n_routed=args.experts, k_active=args.activated,
                        n_shared=args.shared, expert_dim=args.expert_dim,
                        hidden=dense_cfg.hidden)
    new_weights, new_cfg = upcycle_model(weights, dense_cfg, moe_cfg, args.seed)
    save_weights(new_weights, new_cfg, args.out)
    run.debug(f"dense intermediate {dense_cfg.ffn_intermediate} -> "
              f"{moe_cfg.n_routed} experts of {moe_cfg.expert_dim}")
    print(f"upcycled {args.in_path} -> {args.out}: {moe_cfg.n_routed} routed / "
          f"{moe_cfg.k_active} activated / {moe_cfg.n_shared} shared experts")
    return 0


def _cmd_decontam_scan(args, run: _Run) -> int:
    train = dc.load_docs(args.train)
    tests = dc.load_test_sets(args.tests)
    run.debug(f"{len(train)} training docs, "
              f"{sum(len(s) for s in tests.values())} test samples")
    kept, removed, report = dc.filter_corpus(
        train, tests, args.mode, ngram_n=args.ngram_n,
        lcs_min_len=args.lcs_min_len, lcs_min_frac=args.lcs_min_frac)
    sys.stdout.write(dc.format_report(report, args.format))
    if args.verdicts:
        Path(args.verdicts).write_text(dc.format_verdicts(report), encoding="utf-8")
        run.debug(f"wrote {len(report.verdicts)} verdicts to {args.verdicts}")
    return 0


def _cmd_attn_bench(args, run: _Run) -> int:
    params = AttentionParams(args.q_heads, args.kv_heads, args.head_dim)
    rope = RopeParams(args.rope_base, args.head_dim)
    dca = DcaParams(args.chunk)
    rng = Rng(args.seed)
    shape_q = (params.n_q_heads, args.seq, params.head_dim)
    shape_kv = (params.n_kv_heads, args.seq, params.head_dim)
    q = rng.normals(int(np.prod(shape_q))).astype(np.float32).reshape(shape_q)
    k = rng.normals(int(np.prod(shape_kv))).astype(np.float32).reshape(shape_kv)
    v = rng.normals(int(np.prod(shape_kv))).astype(np.float32).reshape(shape_kv)
    positions = list(range(args.seq))

    def _time(fn):
        fn()  # warm up
        best = min(_timed(fn) for _ in range(3))
        return best

    def _timed(fn):
        t0 = time.perf_counter()
        fn()
        return time.perf_counter() - t0

    vanilla = lambda: gqa_attention(q, k, v, params, positions, rope)  # noqa: E731
    chunked = lambda: dca_attention(q, k, v, params, dca, rope)  # noqa: E731
    t_vanilla = _time(vanilla)
    t_dca = _time(chunked)
    diff = float(np.max(np.abs(vanilla() - chunked())))
    print(f"seq={args.seq} chunk={args.chunk} vanilla_ms={t_vanilla * 1e3:.3f} "
          f"dca_ms={t_dca * 1e3:.3f} max_diff={diff:.3e}")
    return 0


def _cmd_config_show(args, run: _Run) -> int:
    sys.stdout.write(format_config(preset(args.preset)))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = _verbosity()
    if level is None:
        return 2
    command = args.command + (f" {args.subcommand}" if getattr(args, "subcommand", None) else "")
    seed = getattr(args, "seed", None) if getattr(args, "needs_seed", False) else None
    run = _Run(command, seed, level)
    try:
        return args.func(args, run)
    except QwenKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
