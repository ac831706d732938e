"""Command-line entry point: ingest, selftrain, baseline, evaluate.

Exit codes: 0 success, 1 unexpected failure, 2 usage/config/corpus error,
3 invariant or leakage abort.
"""

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .baselines import run_baseline
from .config import RunConfig, config
from .dataset import (
    DatasetSplit, FeatureAssembler, FeatureVector, FoldPlan, NewsRecord, NormalizationStats,
    compute_stats, corpus_summary, index_records, load_records, make_folds, split, write_jsonl
)
from .errors import ConfigError, ContractError, CorpusError, DimensionError, SentimentLookupError
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .selftrain import RoundReport, SelfTrainConfig, SelfTrainer, evaluate
from .sentiment import make_encoder
from .text import Vocabulary, build_vocab, tokenize


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_INVARIANT = 3


@dataclass
class Prepared:
    """Corpus, split and features shared by every command."""

    records: Dict[str, NewsRecord]
    split: DatasetSplit
    vocab: Vocabulary
    stats: NormalizationStats
    assembler: FeatureAssembler
    features: Dict[str, FeatureVector]


def prepare(
    run: RunConfig,
    vocab: Optional[Vocabulary] = None,
    stats: Optional[NormalizationStats] = None
) -> Prepared:
    """Load, split and featurize; vocabulary and statistics come from train only."""
    records = index_records(load_records(Path(run.data_path), run.format))
    split_ = split(list(records.values()), tuple(run.ratios), seed=run.seed)
    train_records = [records[i] for i in split_.train]

    if vocab is None:
        vocab = build_vocab(
            (tokenize(r.news_text) + tokenize(r.tweet_text) for r in train_records),
            min_frequency=run.min_frequency,
            max_size=run.max_vocab_size,
        )
    if stats is None:
        stats = compute_stats(records, split_.train)

    assembler = FeatureAssembler(
        vocab,
        make_encoder(run.encoder, run.sidecar_path),
        stats,
        max_seq_len=run.max_seq_len,
        use_sentiment=run.use_sentiment,
        device_features=run.device_features,
        train_fingerprint=split_.train_fingerprint(),
    )
    features = assembler.assemble_all(records.values())
    return Prepared(records, split_, vocab, stats, assembler, features)


def model_config_for(run: RunConfig, prepared: Prepared) -> ModelConfig:
    return ModelConfig(
        vocab_size=len(prepared.vocab),
        aux_dim=prepared.assembler.aux_dim,
        embed_dim=run.embed_dim,
        hidden_dim=run.hidden_dim,
        dense_dim=run.dense_dim,
        max_seq_len=run.max_seq_len,
        pooling=run.pooling,
    )


def render_table(reports: Sequence[RoundReport]) -> str:
    """Fixed-width table, one row per round."""
    header = f"{'Round':<14}" + "".join(f"{c:>11}" for c in RoundReport.COLUMNS)
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.label:<14}{r.accuracy:>11.4f}{r.precision:>11.4f}{r.recall:>11.4f}"
            f"{r.f1:>11.4f}{r.train_size:>11d}{r.accepted:>11d}{r.rejected:>11d}"
        )
    return "\n".join(lines) + "\n"


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def _run_config(args: argparse.Namespace) -> RunConfig:
    """File values first, then explicit flags."""
    base = RunConfig.from_file(Path(args.config)) if args.config else RunConfig()
    overrides = {
        name: getattr(args, name)
        for name in (
            "data_path", "data_format", "seed", "output_dir", "k", "sigma", "reject_policy",
            "epochs_per_round", "batch_size", "learning_rate", "embed_dim", "hidden_dim",
            "dense_dim", "max_seq_len", "pooling", "min_frequency", "max_vocab_size",
            "encoder", "sidecar_path", "use_sentiment", "device_features",
        )
        if hasattr(args, name)
    }
    if getattr(args, "ratios", None) is not None:
        overrides["ratios"] = tuple(args.ratios)
    run = base.merged(overrides)
    run.validate()
    return run


def _run_dir(args: argparse.Namespace, run: RunConfig, default_name: str) -> Path:
    run_dir = Path(args.run_dir) if getattr(args, "run_dir", None) else Path(run.output_dir) / default_name
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def cmd_ingest(args: argparse.Namespace) -> int:
    """Validate and load a corpus, print counts, write a normalized JSONL copy and its config."""
    run = _run_config(args)
    records = load_records(Path(run.data_path), run.format)
    summary = corpus_summary(records)

    output = Path(args.output) if args.output else Path(run.output_dir) / "normalized.jsonl"
    output.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(records, output)
    _write_json(output.parent / "config.json", run.to_dict())

    print(json.dumps(summary, indent=2))
    logger.info(f"Wrote normalized corpus to {output}")
    return EXIT_OK


def cmd_selftrain(args: argparse.Namespace) -> int:
    """Run self-training and write the round log, checkpoint and report."""
    run = _run_config(args)
    run_dir = _run_dir(args, run, "selftrain")
    _write_json(run_dir / "config.json", run.to_dict())

    prepared = prepare(run)
    if args.fold_plan:
        fold_plan = FoldPlan.load(Path(args.fold_plan))
    else:
        fold_plan = make_folds(prepared.split, prepared.records, k=run.k, seed=run.seed)
    fold_plan.save(run_dir / "fold_plan.json")
    prepared.vocab.save(run_dir / "vocab.tsv")
    prepared.stats.save(run_dir / "stats.json")

    trainer = SelfTrainer(
        prepared.split,
        fold_plan,
        prepared.records,
        prepared.features,
        model_config_for(run, prepared),
        SelfTrainConfig(
            k=run.k,
            sigma=run.sigma,
            epochs_per_round=run.epochs_per_round,
            seed=run.seed,
            reject_policy=run.reject_policy,
            batch_size=run.batch_size,
            learning_rate=run.learning_rate,
        ),
        log_path=run_dir / "rounds.jsonl",
    )
    reports = trainer.run()

    save_checkpoint(trainer.model, run_dir / "model.npz")
    _write_json(run_dir / "report.json", [r.to_dict() for r in reports])
    table = render_table(reports)
    (run_dir / "report.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    logger.info(f"Self-training run written to {run_dir}")
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    """Train a supervised baseline on the labeled train split; report test metrics."""
    run = _run_config(args)
    run_dir = _run_dir(args, run, f"baseline-{args.method}")
    _write_json(run_dir / "config.json", run.to_dict())

    prepared = prepare(run)
    report = run_baseline(
        args.method,
        prepared.records,
        prepared.split,
        prepared.assembler,
        seed=run.seed,
        alpha=args.alpha,
        l2=args.l2,
        epochs=args.epochs,
        lr=args.lr,
    )
    _write_json(run_dir / "report.json", report.to_dict())
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Re-score a self-training checkpoint on one split."""
    run_dir = Path(args.run_dir)
    for name in ("config.json", "vocab.tsv", "stats.json", "model.npz"):
        if not (run_dir / name).exists():
            raise ConfigError(f"{run_dir} is not a self-training run directory (no {name})")

    run = RunConfig.from_file(run_dir / "config.json")
    run.validate()
    prepared = prepare(
        run,
        vocab=Vocabulary.load(run_dir / "vocab.tsv"),
        stats=NormalizationStats.load(run_dir / "stats.json"),
    )
    model = load_checkpoint(run_dir / "model.npz")
    labels = {i: r.label for i, r in prepared.records.items() if r.is_labeled}
    ids = prepared.split.ids(args.split)
    metrics = evaluate(model, ids, prepared.split, args.split, prepared.features, labels)

    result = {"split": args.split, "records": len(ids), **metrics.to_dict()}
    _write_json(run_dir / f"evaluate-{args.split}.json", result)
    print(json.dumps(result, indent=2))
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run configuration; flags override it")
    parser.add_argument("--data", dest="data_path", help="corpus file (.jsonl or .csv)")
    parser.add_argument("--format", dest="data_format", choices=["jsonl", "csv"])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--output-dir", dest="output_dir")


def _add_pipeline(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--ratios", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    parser.add_argument("--max-seq-len", dest="max_seq_len", type=int)
    parser.add_argument("--min-frequency", dest="min_frequency", type=int)
    parser.add_argument("--max-vocab-size", dest="max_vocab_size", type=int)
    parser.add_argument("--encoder", choices=["lexicon", "precomputed"])
    parser.add_argument("--sidecar", dest="sidecar_path", help="precomputed sentiment CSV")
    parser.add_argument("--no-sentiment", dest="use_sentiment", action="store_const",
                        const=False, help="drop the six sentiment columns")
    parser.add_argument("--device-features", dest="device_features", action="store_const",
                        const=True, help="one-hot the posting device")
    parser.add_argument("--run-dir", dest="run_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="veraz",
        description="Self-training fake news classifier",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="validate a corpus and write a normalized copy")
    _add_common(ingest)
    ingest.add_argument("--output", help="normalized JSONL path")
    ingest.set_defaults(func=cmd_ingest)

    selftrain = sub.add_parser("selftrain", help="run fold-wise self-training")
    _add_common(selftrain)
    _add_pipeline(selftrain)
    selftrain.add_argument("--k", type=int)
    selftrain.add_argument("--sigma", type=float)
    selftrain.add_argument("--reject-policy", dest="reject_policy", choices=["drop", "defer"])
    selftrain.add_argument("--epochs", dest="epochs_per_round", type=int)
    selftrain.add_argument("--batch-size", dest="batch_size", type=int)
    selftrain.add_argument("--lr", dest="learning_rate", type=float)
    selftrain.add_argument("--embed-dim", dest="embed_dim", type=int)
    selftrain.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    selftrain.add_argument("--dense-dim", dest="dense_dim", type=int)
    selftrain.add_argument("--pooling", choices=["attention", "last"])
    selftrain.add_argument("--fold-plan", dest="fold_plan", help="reuse a saved fold plan")
    selftrain.set_defaults(func=cmd_selftrain)

    baseline = sub.add_parser("baseline", help="supervised logistic regression or naive Bayes")
    baseline.add_argument("method", choices=["logreg", "nb"])
    _add_common(baseline)
    _add_pipeline(baseline)
    baseline.add_argument("--alpha", type=float, default=1.0, help="naive Bayes smoothing")
    baseline.add_argument("--l2", type=float, default=0.0, help="logistic regression penalty")
    baseline.add_argument("--epochs", type=int, default=200)
    baseline.add_argument("--lr", type=float, default=0.1)
    baseline.set_defaults(func=cmd_baseline)

    evaluate_ = sub.add_parser("evaluate", help="re-score a checkpoint on a split")
    evaluate_.add_argument("--run-dir", dest="run_dir", required=True)
    evaluate_.add_argument("--split", choices=["validation", "test"], default="test")
    evaluate_.set_defaults(func=cmd_evaluate)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else config.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        return args.func(args)
    except (ConfigError, CorpusError, SentimentLookupError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ContractError, DimensionError) as e:
        logger.error(f"{args.command} aborted: {e}")
        print(f"aborted: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly: {e}")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
