"""Command-line surface.

Commands: gen-corpus, stitch, train, eval, stream, gradcheck. Exit codes:
0 success, 1 usage error, 2 data or model error. Every run echoes the seed
it resolved (to stderr) so artifacts can be regenerated exactly.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import evaluation, models, streaming, training
from .corpus import (CorpusError, build_vocab, dump_streams, gen_synthetic, load_corpus,
                     save_corpus, stitch_streams)
from .models import CheckpointError, Variant, load_checkpoint, save_checkpoint
from .training import TrainSpec

VARIANT_CHOICES = tuple(v.value for v in Variant)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this surface reserves 2 for data
    errors, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _echo_seed(seed) -> None:
    print(f"seed: {seed}", file=sys.stderr)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty integer list")
    return values


def _variant(text: str) -> str:
    return text.lower()


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="islu", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--intents", type=int, required=True)
    p.add_argument("--utts", type=int, required=True)
    p.add_argument("--len-min", type=int, default=4)
    p.add_argument("--len-max", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("stitch", help="stitch a corpus into streams and dump them")
    p.add_argument("--corpus", required=True)
    p.add_argument("--max-utts", type=int, required=True)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_stitch)

    p = sub.add_parser("train", help="train one variant and write a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--variant", type=_variant, choices=VARIANT_CHOICES, required=True)
    p.add_argument("--config", help="key=value training options file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="write per-epoch CSV here")
    p.add_argument("--embedding-dim", type=int, default=556)
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--eos-threshold", type=float, default=0.5)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--max-utts", type=int, default=None, dest="max_utts")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--grid", action="store_true",
                   help="grid-search hidden_dim and dropout instead of a single run")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--eos-checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--max-utts", type=_int_list, default=(1,), dest="max_utts",
                   help="comma-separated list; one CSV row per value")
    p.add_argument("--mode", choices=("oracle", "predicted"), default="oracle")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="write the CSV table here")
    p.add_argument("--early-out", dest="early_out",
                   help="write the early-detection histogram CSV here "
                        "(single --max-utts value only)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("stream", help="read tokens from stdin, emit events")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--eos-checkpoint")
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=_cmd_stream)

    p = sub.add_parser("gradcheck", help="finite-difference check one variant")
    p.add_argument("--variant", type=_variant, choices=VARIANT_CHOICES, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def _cmd_gen_corpus(args) -> int:
    _echo_seed(args.seed)
    corpus = gen_synthetic(args.intents, args.utts, (args.len_min, args.len_max), args.seed)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} utterances, {len(corpus.intent_set)} intents to {args.out}")
    return 0


def _cmd_stitch(args) -> int:
    _echo_seed(args.seed)
    corpus = load_corpus(args.corpus)
    vocab = build_vocab(corpus, args.min_count)
    streams = stitch_streams(corpus, vocab, args.max_utts, args.seed)
    dump_streams(streams, vocab, args.out)
    print(f"wrote {len(streams)} streams to {args.out}")
    return 0


def _cmd_train(args) -> int:
    options = training.parse_train_options(args.config) if args.config else {}
    # explicit flags override the options file
    for key, value in (("epochs", args.epochs), ("lr", args.lr),
                       ("max_utts_train", args.max_utts), ("seed", args.seed)):
        if value is not None:
            options[key] = value
    seed = options.get("seed", 0)
    _echo_seed(seed)

    train_corpus = load_corpus(args.corpus)
    dev_corpus = load_corpus(args.dev)
    config = training.make_config(args.variant, train_corpus, min_count=args.min_count,
                                  embedding_dim=args.embedding_dim,
                                  hidden_dim=args.hidden_dim, dropout=args.dropout,
                                  eos_threshold=args.eos_threshold, seed=seed)
    spec = TrainSpec(config=config, **options)
    if args.grid:
        result = training.grid_search(spec, train_corpus, dev_corpus)
        params, config, history = result.params, result.config, result.history
    else:
        params, history = training.train(spec, train_corpus, dev_corpus)
    save_checkpoint(params, config, args.out)
    if args.history:
        training.save_history(history, args.history)
    print(f"best_epoch={history.best_epoch} best_dev={history.best_dev:.6f}")
    return 0


def _cmd_eval(args) -> int:
    if args.early_out and len(args.max_utts) != 1:
        print("error: --early-out requires a single --max-utts value", file=sys.stderr)
        return 1
    _echo_seed(args.seed)
    params, config = load_checkpoint(args.checkpoint)
    vocab = training.config_vocab(config)
    eos_source = None
    model_name = config.variant.value
    if args.eos_checkpoint:
        eos_params, eos_config = load_checkpoint(args.eos_checkpoint)
        eos_source = (eos_params, eos_config)
        model_name = f"{config.variant.value}+{eos_config.variant.value}"
    corpus = load_corpus(args.corpus)

    rows = [evaluation.REPORT_CSV_HEADER]
    early_csv = None
    for max_utts in args.max_utts:
        streams = stitch_streams(corpus, vocab, max_utts, args.seed, config.intent_labels)
        if args.mode == "oracle":
            report = evaluation.eval_oracle(params, config, streams)
        else:
            intent_source = (params, config) if config.variant.has_intent else None
            if eos_source is not None:
                source = eos_source
            elif config.variant.has_eos:
                source = (params, config)
            else:
                print(f"error: variant {config.variant.value} has no EOS branch; "
                      "supply --eos-checkpoint for predicted mode", file=sys.stderr)
                return 2
            report = evaluation.eval_predicted(intent_source, source, streams,
                                               args.threshold)
        rows.append(evaluation.report_csv_row(model_name, max_utts, report))
        if args.early_out:
            result = evaluation.early_detection(params, config, streams)
            early_csv = evaluation.histogram_csv(result.stable)

    table = "\n".join(rows)
    print(table)
    if args.report:
        Path(args.report).write_text(table + "\n", encoding="utf-8")
    if args.early_out and early_csv is not None:
        Path(args.early_out).write_text(early_csv + "\n", encoding="utf-8")
    return 0


def _cmd_stream(args) -> int:
    _echo_seed("none")
    params, config = load_checkpoint(args.checkpoint)
    vocab = training.config_vocab(config)
    labels = config.labels
    if args.eos_checkpoint:
        eos_params, eos_config = load_checkpoint(args.eos_checkpoint)
        session = streaming.open_composite((params, config), (eos_params, eos_config),
                                           args.threshold)
        advance = streaming.push_composite
    else:
        session = streaming.open_session(params, config, streaming.PREDICTED_EOS,
                                         args.threshold)
        advance = streaming.push
    for line in sys.stdin:
        for token in line.split():
            for event in advance(session, vocab.lookup(token.lower())):
                print(streaming.format_event(event, labels), flush=True)
    return 0


def _cmd_gradcheck(args) -> int:
    _echo_seed(args.seed)
    max_err, per_tensor = models.gradcheck_variant(args.variant, args.seed)
    for name in sorted(per_tensor):
        print(f"{name} {per_tensor[name]:.6e}")
    print(f"max_rel_err={max_err:.6e}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (CorpusError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
