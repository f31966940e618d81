"""Command-line interface: corpus generation, training, calibration,
extraction, evaluation, explanation, title normalization and the batch-size
sweep. Exit codes: 0 success, 1 usage error, 2 data/runtime error."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    CORPUS_FORMAT_VERSION,
    DataFormatError,
    generate_synthetic_corpus,
    load_annotations,
    load_pairs,
    load_predictions,
    load_taxonomy,
    save_predictions,
    write_corpus,
)
from .encoder import EncoderConfig
from .evaluation import evaluation_report, scored_sentences
from .extraction import ExtractionConfig, calibrate_threshold, explain, extract
from .objective import TaskKind
from .titles import (
    PairBelowMinimumSkills,
    TitleTrainingConfig,
    build_pair,
    load_title_model,
    normalize,
    save_title_model,
    train_title_model,
)
from .training import (
    CHECKPOINT_FORMAT_VERSION,
    AblationFlags,
    Checkpoint,
    DivergenceError,
    TrainingConfig,
    batch_size_sweep,
    description_pairs,
    synonym_pairs,
    train,
)

import json


def _encoder_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--layers", type=int, default=2)
    parser.add_argument("--heads", type=int, default=2)
    parser.add_argument("--ff-dim", type=int, default=128)
    parser.add_argument("--max-seq-len", type=int, default=128)
    parser.add_argument("--vocab-size", type=int, default=4096)


def _encoder_config(args, seed: int) -> EncoderConfig:
    return EncoderConfig(
        dim=args.dim, layers=args.layers, heads=args.heads, ff_dim=args.ff_dim,
        max_sequence_length=args.max_seq_len, vocab_size=args.vocab_size, seed=seed,
    )


def _training_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--batch-size", type=int, default=256)
    parser.add_argument("--micro-batch-size", type=int, default=64)
    parser.add_argument("--lr", type=float, default=5e-4)
    parser.add_argument("--warmup", type=float, default=0.10)
    parser.add_argument("--scale", type=float, default=20.0)
    parser.add_argument("--epochs", type=int, default=1)
    parser.add_argument("--eval-every", type=float, default=0.10)
    parser.add_argument("--patience", type=int, default=2)
    parser.add_argument("--no-context", action="store_true")
    parser.add_argument("--no-augmentation", action="store_true")
    parser.add_argument("--asymmetric-loss", action="store_true")
    parser.add_argument("--no-descriptions", action="store_true")
    parser.add_argument("--with-synonyms", action="store_true")


def _training_config(args) -> TrainingConfig:
    return TrainingConfig(
        batch_size=args.batch_size,
        micro_batch_size=args.micro_batch_size,
        learning_rate=args.lr,
        warmup_fraction=args.warmup,
        scale=args.scale,
        max_epochs=args.epochs,
        seed=args.seed,
        ablation=AblationFlags(
            no_context=args.no_context,
            no_augmentation=args.no_augmentation,
            asymmetric_loss=args.asymmetric_loss,
            no_descriptions=args.no_descriptions,
            with_synonyms=args.with_synonyms,
        ),
        eval_every=args.eval_every,
        patience=args.patience,
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillmatch",
        description="Token-level attention matching for skill extraction.",
    )
    parser.add_argument(
        "--version", action="version",
        version=(
            f"skillmatch {__version__} "
            f"(checkpoint format {CHECKPOINT_FORMAT_VERSION}, "
            f"corpus format {CORPUS_FORMAT_VERSION})"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus directory")
    p.add_argument("--out", required=True)
    p.add_argument("--skills", type=int, default=50)
    p.add_argument("--sentences-per-skill", type=int, default=10)
    p.add_argument("--heldout-per-skill", type=int, default=2)
    p.add_argument("--corpus-vocab-size", type=int, default=250)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train an extraction model")
    p.add_argument("--pairs", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _training_args(p)
    _encoder_args(p)

    p = sub.add_parser("calibrate", help="grid-search the decision threshold")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--no-filter", action="store_true")
    p.add_argument("--out", default=None, help="write the TSV grid here instead of stdout")

    p = sub.add_parser("extract", help="extract skills from sentences")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--input", required=True, help="JSONL with a 'sentence' field per line")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--no-filter", action="store_true")
    p.add_argument("--top", type=int, default=None, help="keep at most this many predictions")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score predictions against gold annotations")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--metrics", default="rp@1,rp@5,rp@10,mrr,prf,redundancy")
    p.add_argument("--out", required=True)

    p = sub.add_parser("explain", help="render a token-attention heatmap")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--sentence", required=True)
    p.add_argument("--skill", required=True, help="skill id from the taxonomy")
    p.add_argument("--format", choices=("ansi", "html"), default="ansi")
    p.add_argument("--out", default=None)

    p = sub.add_parser("title-train", help="train the title normalization model")
    p.add_argument("--pairs", required=True, help="JSONL with 'title' and 'skills' fields")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--micro-batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--scale", type=float, default=20.0)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--tied-projections", action="store_true")
    p.add_argument("--skill-cap", type=int, default=25)
    _encoder_args(p)

    p = sub.add_parser("title-rank", help="rank reference titles for a query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--references", required=True, help="text file, one title per line")
    p.add_argument("--top", type=int, default=10)

    p = sub.add_parser("batch-sweep", help="dev RP@5 across batch sizes and seeds")
    p.add_argument("--corpus", required=True, help="directory written by gen-corpus")
    p.add_argument("--sizes", default="16,64,256")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0, help="unused; kept for symmetry")
    _training_args(p)
    _encoder_args(p)

    return parser


def _write_or_print(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _cmd_gen_corpus(args) -> int:
    corpus = generate_synthetic_corpus(
        skill_count=args.skills,
        sentences_per_skill=args.sentences_per_skill,
        vocab_size=args.corpus_vocab_size,
        noise_rate=args.noise,
        seed=args.seed,
        heldout_per_skill=args.heldout_per_skill,
    )
    write_corpus(corpus, args.out)
    print(f"wrote corpus with {len(corpus.taxonomy)} skills and "
          f"{len(corpus.pairs)} pairs to {args.out}")
    return 0


def _cmd_train(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    pairs = load_pairs(args.pairs, taxonomy)
    dev_ads = load_annotations(args.dev, taxonomy)
    datasets = {
        TaskKind.SENTENCE_SKILL: pairs,
        TaskKind.DESCRIPTION_SKILL: description_pairs(taxonomy),
        TaskKind.SKILL_SYNONYM: synonym_pairs(taxonomy),
    }
    checkpoint = train(
        _training_config(args), datasets, dev_ads, taxonomy,
        encoder_config=_encoder_config(args, args.seed),
    )
    checkpoint.save(args.out)
    best = max(v for _, v in checkpoint.dev_history)
    print(f"trained {checkpoint.step} steps; best dev RP@5 {best:.4f}; "
          f"saved to {args.out}")
    return 0


def _cmd_calibrate(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    taxonomy = load_taxonomy(args.taxonomy)
    dev_ads = load_annotations(args.dev, taxonomy)
    result = calibrate_threshold(
        dev_ads, taxonomy, checkpoint, use_filter=not args.no_filter
    )
    lines = ["tau\tprecision\trecall\tf1\tredundancy"]
    for row in result.rows:
        lines.append(
            f"{row.tau:.2f}\t{row.precision:.6f}\t{row.recall:.6f}"
            f"\t{row.f1:.6f}\t{row.redundancy:.6f}"
        )
    lines.append(
        f"# selected\ttau={result.tau:.2f}\tf1={result.f1:.6f}"
        f"\tredundancy={result.redundancy:.6f}"
    )
    _write_or_print("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_extract(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    taxonomy = load_taxonomy(args.taxonomy)
    config = ExtractionConfig(tau=args.tau, use_filter=not args.no_filter)
    records = []
    for line_no, record in _input_sentences(args.input):
        predictions = extract(record["sentence"], taxonomy, checkpoint, config)
        if args.top is not None:
            predictions = predictions[: args.top]
        out_record = dict(record)
        out_record["predictions"] = [
            {"skill_id": p.skill_id, "score": p.score} for p in predictions
        ]
        records.append(out_record)
    save_predictions(records, args.out)
    print(f"extracted skills for {len(records)} sentences into {args.out}")
    return 0


def _input_sentences(path: str):
    from .data import _iter_records, _require

    for line_no, record in _iter_records(path):
        _require(record, "sentence", str, path, line_no)
        yield line_no, record


def _cmd_evaluate(args) -> int:
    gold_ads = load_annotations(args.gold)
    records = load_predictions(args.pred)
    sentences = scored_sentences(gold_ads)

    keyed = all("ad_id" in r and "sentence_index" in r for r in records)
    if keyed:
        positions = {}
        for ad in gold_ads:
            for index, sentence in enumerate(ad.sentences):
                if sentence.relevant and sentence.clusters:
                    positions[(ad.ad_id, index)] = sentence
        aligned = []
        for record in records:
            key = (record["ad_id"], record["sentence_index"])
            if key not in positions:
                raise DataFormatError(
                    args.pred, None,
                    f"prediction for unknown gold sentence {key!r}",
                )
            aligned.append((positions[key], record))
    else:
        if len(records) != len(sentences):
            raise DataFormatError(
                args.pred, None,
                f"{len(records)} prediction records vs "
                f"{len(sentences)} gold scored sentences",
            )
        aligned = list(zip(sentences, records))

    rankings = []
    golds = []
    prf_items = []
    for sentence, record in aligned:
        ordered = sorted(
            record["predictions"], key=lambda e: (-e["score"], e["skill_id"])
        )
        rankings.append([e["skill_id"] for e in ordered])
        golds.append(sentence.gold_labels)
        prf_items.append(({e["skill_id"] for e in ordered}, sentence.clusters))

    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    report = evaluation_report(rankings, golds, prf_items, metrics)
    Path(args.out).write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {args.out}")
    return 0


def _cmd_explain(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    taxonomy = load_taxonomy(args.taxonomy)
    if args.skill not in taxonomy:
        raise DataFormatError(args.taxonomy, None, f"unknown skill id {args.skill!r}")
    rendering = explain(
        args.sentence, taxonomy.get(args.skill), checkpoint, fmt=args.format
    )
    _write_or_print(rendering, args.out)
    return 0


def _cmd_title_train(args) -> int:
    from .data import _iter_records, _require

    rng = np.random.default_rng(args.seed)
    pairs = []
    dropped = 0
    for line_no, record in _iter_records(args.pairs):
        title = _require(record, "title", str, args.pairs, line_no)
        skills = _require(record, "skills", list, args.pairs, line_no)
        if any(not isinstance(s, str) for s in skills):
            raise DataFormatError(args.pairs, line_no, "'skills' must be a string list")
        try:
            pairs.append(build_pair(title, skills, rng, cap=args.skill_cap))
        except PairBelowMinimumSkills:
            dropped += 1
    config = TitleTrainingConfig(
        batch_size=args.batch_size,
        micro_batch_size=args.micro_batch_size,
        learning_rate=args.lr,
        scale=args.scale,
        max_epochs=args.epochs,
        seed=args.seed,
        tied_projections=args.tied_projections,
    )
    model = train_title_model(
        pairs, config, encoder_config=_encoder_config(args, args.seed)
    )
    save_title_model(model, args.out)
    print(f"trained on {len(pairs)} pairs ({dropped} dropped); saved to {args.out}")
    return 0


def _cmd_title_rank(args) -> int:
    model = load_title_model(args.checkpoint)
    references = [
        line.strip()
        for line in Path(args.references).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    if not references:
        raise DataFormatError(args.references, None, "no reference titles")
    ranked = normalize(args.query, references, model)
    for title, score in ranked[: args.top]:
        print(f"{score:.6f}\t{title}")
    return 0


def _cmd_batch_sweep(args) -> int:
    corpus_dir = Path(args.corpus)
    taxonomy = load_taxonomy(corpus_dir / "taxonomy.jsonl")
    pairs = load_pairs(corpus_dir / "pairs.jsonl", taxonomy)
    dev_ads = load_annotations(corpus_dir / "dev.jsonl", taxonomy)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    datasets = {
        TaskKind.SENTENCE_SKILL: pairs,
        TaskKind.DESCRIPTION_SKILL: description_pairs(taxonomy),
    }
    rows = batch_size_sweep(
        _training_config(args), datasets, dev_ads, taxonomy, sizes, seeds,
        encoder_config=_encoder_config(args, 0),
    )
    lines = ["batch_size\tdev_rp5_mean\tdev_rp5_std"]
    for row in rows:
        lines.append(f"{row.batch_size}\t{row.mean_rp5:.6f}\t{row.std_rp5:.6f}")
    _write_or_print("\n".join(lines) + "\n", args.out)
    return 0


_COMMANDS = {
    "gen-corpus": _cmd_gen_corpus,
    "train": _cmd_train,
    "calibrate": _cmd_calibrate,
    "extract": _cmd_extract,
    "evaluate": _cmd_evaluate,
    "explain": _cmd_explain,
    "title-train": _cmd_title_train,
    "title-rank": _cmd_title_rank,
    "batch-sweep": _cmd_batch_sweep,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help/--version
        return 0 if exc.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except (DataFormatError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
