"""Command-line surface: one binary with one subcommand per pipeline stage.

Exit codes: 0 success, 1 stage failure, 2 usage or missing-input error.
Every stage is deterministic given the same inputs, seed, and --threads 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, RunConfig
from .evalbench import EvalReport, run_suite, write_rank_frequency_csv
from .fixture import make_fixture, pair_sample_id
from .geometry import Detection, nms
from .infer import ScoredTriplet, WebIndex, predict_triplets, write_predictions
from .ingest import (
    AnnotationError,
    SplitError,
    SplitSpec,
    WordVectorTable,
    build_splits,
    build_vocabulary,
    canonicalize_records,
    classify_human,
    compute_stats,
    load_lemma_table,
    merge_objects,
    parse_annotations,
    resolve_lemma_chains,
    write_annotations,
)
from .metric import MetricModel, TrainConfig, TrainingDiverged, save_loss_curve, train
from .plots import (
    save_loss_curve_plot,
    save_recall_grid_plot,
    save_subtype_distribution_plot,
    save_type_frequency_plot,
)
from .storeio import (
    CheckpointError,
    FeatureStoreError,
    features_by_id,
    read_checkpoint,
    read_features,
    write_checkpoint,
)
from .types import (
    FeatureVector,
    ImageRecord,
    RelationshipType,
    Vocabulary,
    VocabularyError,
)
from .webfilter import WebCorpus, filter_top, load_corpus, train_filter, write_manifest

log = logging.getLogger("hcrel")

SUITES = ("full", "longtail", "zeroshot")


class StageError(RuntimeError):
    """A stage-level failure that should exit with code 1."""


# ---------------------------------------------------------------------------
# shared artifact plumbing


def _artifact(cfg: RunConfig, name: str) -> Path:
    return Path(cfg.output_dir) / name


def _read_canonical(cfg: RunConfig) -> list[ImageRecord]:
    path = _artifact(cfg, "canonical.jsonl")
    if not path.exists():
        raise FileNotFoundError(f"missing input: {path} (run `hcrel ingest` first)")
    return list(parse_annotations(path))


def _read_split(cfg: RunConfig) -> SplitSpec:
    path = _artifact(cfg, "split.json")
    if not path.exists():
        raise FileNotFoundError(f"missing input: {path} (run `hcrel split` first)")
    return SplitSpec.load(path)


def _read_web_labels(path: Path) -> dict[str, RelationshipType]:
    labels: dict[str, RelationshipType] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            cls = obj["class"]
            labels[str(obj["sample_id"])] = (str(cls[0]), str(cls[1]), str(cls[2]))
        except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
            raise StageError(f"{path}:{line_no}: bad web label record: {exc}") from None
    return labels


def _read_kept_ids(cfg: RunConfig) -> Optional[set[str]]:
    """Sample ids marked kept by filter-web, or None when no manifest exists."""
    path = _artifact(cfg, "web_filter_manifest.jsonl")
    if not path.exists():
        return None
    kept = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if obj.get("kept"):
            kept.add(str(obj["sample_id"]))
    return kept


def _load_web_corpus(cfg: RunConfig, apply_filter: bool = True) -> WebCorpus:
    cfg.require("web_features", "web_labels")
    features = read_features(cfg.web_features)
    labels = _read_web_labels(Path(cfg.web_labels))
    kept = _read_kept_ids(cfg) if apply_filter else None
    if kept is not None:
        features = [fv for fv in features if fv.sample_id in kept]
        log.info("web corpus filtered to %d kept samples", len(features))
    return load_corpus(features, labels)


def _wrote(path: Path) -> None:
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# stages


def cmd_ingest(cfg: RunConfig) -> None:
    cfg.require("annotations")
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    records = list(parse_annotations(cfg.annotations))

    lemma_table = None
    if cfg.lemmas is not None:
        cfg.require("lemmas")
        lemma_table = resolve_lemma_chains(load_lemma_table(cfg.lemmas))
    subtype_table = None
    if cfg.subtypes is not None:
        cfg.require("subtypes")
        subtype_table = json.loads(Path(cfg.subtypes).read_text(encoding="utf-8"))

    merge_map = None
    if cfg.word_vectors is not None:
        cfg.require("word_vectors")
        vectors = WordVectorTable.load(cfg.word_vectors)
        counts: dict[str, int] = {}
        for rec in records:
            for region in rec.regions:
                label = region.category.strip().lower()
                if classify_human(label, subtype_table) is None:
                    counts[label] = counts.get(label, 0) + 1
        merge_map = merge_objects(counts, vectors, cfg.merge_threshold)

    canonical, summary = canonicalize_records(
        records, lemma_table, subtype_table=subtype_table, merge_map=merge_map
    )
    vocab = build_vocabulary(canonical)

    canonical_path = _artifact(cfg, "canonical.jsonl")
    write_annotations(canonical, canonical_path)
    _wrote(canonical_path)
    for name, index in (("predicates.txt", vocab.predicates), ("objects.txt", vocab.objects)):
        index.save(_artifact(cfg, name))
        _wrote(_artifact(cfg, name))
    vocab.save_triples(_artifact(cfg, "triples.tsv"))
    _wrote(_artifact(cfg, "triples.tsv"))
    summary_path = _artifact(cfg, "ingest_summary.json")
    summary_path.write_text(
        json.dumps(summary.__dict__, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _wrote(summary_path)


def cmd_stats(cfg: RunConfig) -> None:
    records = _read_canonical(cfg)
    split = None
    split_path = _artifact(cfg, "split.json")
    if split_path.exists():
        split = SplitSpec.load(split_path)
    stats = compute_stats(records, split)
    path = _artifact(cfg, "stats.json")
    path.write_text(
        json.dumps(stats.to_json_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _wrote(path)
    print(
        f"{stats.n_images} images, {stats.n_instances} instances, "
        f"{stats.n_relationship_types} seen types, {stats.n_zeroshot_types} zero-shot types"
    )


def cmd_split(cfg: RunConfig) -> None:
    records = _read_canonical(cfg)
    n = len(records)
    train_size = cfg.train_size or int(0.6 * n)
    test_seen_size = cfg.test_seen_size or int(0.25 * n)
    split, moves = build_splits(records, train_size, test_seen_size, cfg.seed)
    split_path = _artifact(cfg, "split.json")
    split.save(split_path)
    _wrote(split_path)
    moves_path = _artifact(cfg, "split_moves.json")
    moves_path.write_text(
        json.dumps([list(m) for m in moves], indent=2) + "\n", encoding="utf-8"
    )
    _wrote(moves_path)
    print(
        f"train {len(split.train)}, test_seen {len(split.test_seen)}, "
        f"test_zeroshot {len(split.test_zeroshot)}, repairs {len(moves)}"
    )


def cmd_filter_web(cfg: RunConfig) -> None:
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    corpus = _load_web_corpus(cfg, apply_filter=False)
    _, confidences = train_filter(
        corpus,
        group_size=cfg.group_size,
        epochs=cfg.filter_epochs,
        lr=cfg.filter_lr,
        seed=cfg.seed,
    )
    kept = filter_top(corpus, cfg.keep_ratio)
    path = _artifact(cfg, "web_filter_manifest.jsonl")
    write_manifest(corpus, kept, path)
    _wrote(path)
    n_kept = kept.n_samples()
    print(f"kept {n_kept} of {corpus.n_samples()} web samples ({len(confidences)} scored)")


def _dataset_training_samples(
    records: Sequence[ImageRecord],
    split: SplitSpec,
    store: dict[str, FeatureVector],
) -> tuple[list[tuple[FeatureVector, RelationshipType]], int]:
    samples: list[tuple[FeatureVector, RelationshipType]] = []
    missing = 0
    for rec in records:
        if rec.image_id not in split.train:
            continue
        categories = {r.region_id: r.category for r in rec.regions}
        for rel in rec.relationships:
            fv = store.get(pair_sample_id(rec.image_id, rel.subject_region, rel.object_region))
            if fv is None:
                missing += 1
                continue
            t = (categories[rel.subject_region], rel.predicate, categories[rel.object_region])
            samples.append((fv, t))
    return samples, missing


def cmd_train(cfg: RunConfig) -> None:
    cfg.require("dataset_features")
    records = _read_canonical(cfg)
    split = _read_split(cfg)
    store = features_by_id(read_features(cfg.dataset_features))
    corpus = _load_web_corpus(cfg)

    typed_samples, missing = _dataset_training_samples(records, split, store)
    if missing:
        log.warning("%d training relationships lack a pair feature", missing)
    if not typed_samples:
        raise StageError("no training samples with features found")

    class_ids = {t: i for i, t in enumerate(sorted({t for _, t in typed_samples} | set(corpus.classes)))}
    dataset_samples = [(fv, class_ids[t]) for fv, t in typed_samples]
    web_samples = [
        (s.feature, class_ids[t]) for t in corpus.class_list() for s in corpus.classes[t]
    ]
    if not web_samples:
        raise StageError("web corpus is empty after filtering")

    dim = dataset_samples[0][0].dim
    model = MetricModel.initialize(
        input_dim=dim, hidden_dim=cfg.hidden_dim, embed_dim=cfg.embed_dim, seed=cfg.seed
    )
    tc = TrainConfig(
        learning_rate=cfg.learning_rate,
        decay_factor=cfg.decay_factor,
        decay_every=cfg.decay_every,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        margin=cfg.margin,
        per_anchor_negatives=cfg.per_anchor_negatives,
    )
    model, curve = train(model, dataset_samples, web_samples, tc)

    model_path = _artifact(cfg, "model.hcvm")
    write_checkpoint(model, model_path)
    _wrote(model_path)
    curve_path = _artifact(cfg, "loss_curve.csv")
    save_loss_curve(curve, curve_path)
    _wrote(curve_path)
    if curve:
        print(f"final epoch mean loss {curve[-1][1]:.6f}")


def _image_predictions(
    rec: ImageRecord,
    store: dict[str, FeatureVector],
    model: MetricModel,
    index: WebIndex,
    vocab: Vocabulary,
    cfg: RunConfig,
    universe: Optional[set[RelationshipType]],
    apply_nms: bool,
) -> tuple[list[tuple[str, ScoredTriplet]], int]:
    dets = [
        Detection(box=r.box, category=r.category, score=r.score, region_id=r.region_id)
        for r in rec.regions
    ]
    if apply_nms:
        dets = nms(dets, iou_threshold=cfg.nms_iou, score_threshold=cfg.nms_score)
    pair_feats: dict[tuple[str, str], FeatureVector] = {}
    for det in dets:
        for other in dets:
            if det.region_id is None or other.region_id is None:
                continue
            fv = store.get(pair_sample_id(rec.image_id, det.region_id, other.region_id))
            if fv is not None:
                pair_feats[(det.region_id, other.region_id)] = fv
    triplets, diags = predict_triplets(
        dets,
        pair_feats,
        model,
        index,
        vocab,
        top_k=cfg.top_k,
        k=cfg.k,
        aggregate=cfg.aggregate,
        universe=universe,
    )
    return [(rec.image_id, st) for st in triplets], diags.pairs_missing_feature


def cmd_infer(cfg: RunConfig, suite: str, apply_nms: bool) -> None:
    cfg.require("dataset_features")
    records = _read_canonical(cfg)
    split = _read_split(cfg)
    vocab = build_vocabulary(records)
    model_path = _artifact(cfg, "model.hcvm")
    if not model_path.exists():
        raise FileNotFoundError(f"missing input: {model_path} (run `hcrel train` first)")
    model = read_checkpoint(model_path)
    corpus = _load_web_corpus(cfg)
    index = WebIndex.build(model, corpus)
    if len(index) == 0:
        raise StageError("web index is empty")
    store = features_by_id(read_features(cfg.dataset_features))

    if suite == "zeroshot":
        image_ids = sorted(split.test_zeroshot)
        universe: Optional[set[RelationshipType]] = set(vocab.relationship_types)
    else:
        image_ids = sorted(split.test_seen)
        universe = None
    by_id = {rec.image_id: rec for rec in records}
    targets = [by_id[i] for i in image_ids if i in by_id]

    def work(rec: ImageRecord):
        return _image_predictions(rec, store, model, index, vocab, cfg, universe, apply_nms)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(work, targets))
    else:
        results = [work(rec) for rec in targets]

    rows: list[tuple[str, ScoredTriplet]] = []
    missing = 0
    for image_rows, image_missing in results:
        rows.extend(image_rows)
        missing += image_missing
    if missing:
        log.warning("%d pairs lacked a union-region feature", missing)

    path = _artifact(cfg, f"predictions_{suite}.jsonl")
    write_predictions(path, rows, vocab)
    _wrote(path)
    print(f"{len(rows)} predictions over {len(targets)} images")


def cmd_eval(cfg: RunConfig, suite: str, predictions: Optional[Path]) -> None:
    records = _read_canonical(cfg)
    split = _read_split(cfg)
    vocab = build_vocabulary(records)
    if predictions is None:
        source = "predictions_zeroshot.jsonl" if suite == "zeroshot" else "predictions_full.jsonl"
        predictions = _artifact(cfg, source)
    if not Path(predictions).exists():
        raise FileNotFoundError(f"missing input: {predictions}")

    report = run_suite(predictions, records, split, vocab, suite=suite)
    report_path = _artifact(cfg, f"report_{suite}.json")
    report.save(report_path)
    _wrote(report_path)
    report.write_cells_csv(_artifact(cfg, f"cells_{suite}.csv"))
    _wrote(_artifact(cfg, f"cells_{suite}.csv"))
    write_rank_frequency_csv(report.per_type, _artifact(cfg, f"rank_frequency_{suite}.csv"))
    _wrote(_artifact(cfg, f"rank_frequency_{suite}.csv"))

    for task, grid in report.cells.items():
        for budget, tops in grid.items():
            cells = ", ".join(
                f"{name} {'n/a' if v is None else f'{v:.4f}'}" for name, v in tops.items()
            )
            print(f"{suite} {task} {budget}: {cells}")


def cmd_report(cfg: RunConfig) -> None:
    out = Path(cfg.output_dir)
    if not out.exists():
        raise FileNotFoundError(f"missing input: {out}")
    summary: dict = {"suites": {}}
    figures: list[Path] = []

    stats_path = _artifact(cfg, "stats.json")
    if stats_path.exists():
        stats = json.loads(stats_path.read_text(encoding="utf-8"))
        summary["stats"] = stats
        histogram = [
            ((row[0][0], row[0][1], row[0][2]), row[1])
            for row in stats["type_frequency_histogram"]
        ]
        fig = _artifact(cfg, "type_frequency.png")
        save_type_frequency_plot(histogram, fig)
        figures.append(fig)
        fig = _artifact(cfg, "subtype_distribution.png")
        save_subtype_distribution_plot(stats["human_subtype_distribution"], fig)
        figures.append(fig)

    curve_path = _artifact(cfg, "loss_curve.csv")
    if curve_path.exists():
        curve = []
        for line in curve_path.read_text(encoding="utf-8").splitlines()[1:]:
            epoch, loss = line.split(",")
            curve.append((int(epoch), float(loss)))
        summary["loss_curve"] = [[e, l] for e, l in curve]
        if curve:
            fig = _artifact(cfg, "loss_curve.png")
            save_loss_curve_plot(curve, fig)
            figures.append(fig)

    reports = []
    for suite in SUITES:
        path = _artifact(cfg, f"report_{suite}.json")
        if path.exists():
            report = EvalReport.load(path)
            reports.append(report)
            summary["suites"][suite] = {
                "cells": report.cells,
                "gt_instances": report.gt_instances,
                "diagnostics": report.diagnostics,
            }
    if reports:
        fig = _artifact(cfg, "recall_grid.png")
        save_recall_grid_plot(reports, fig)
        figures.append(fig)

    if not summary["suites"] and "stats" not in summary and "loss_curve" not in summary:
        raise StageError("nothing to report: no stats, loss curve, or eval reports found")

    summary_path = _artifact(cfg, "summary.json")
    summary_path.write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _wrote(summary_path)
    for fig in figures:
        _wrote(fig)


def cmd_make_fixture(cfg: RunConfig, out: Optional[Path], images: int) -> None:
    target = out if out is not None else Path(cfg.output_dir) / "fixture"
    paths = make_fixture(target, n_images=images, seed=cfg.seed)
    for path in paths.values():
        _wrote(path)


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hcrel",
        description="Human-centric relationship benchmark pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="TOML config file")
    common.add_argument("--output-dir", dest="output_dir", type=Path, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("ingest", parents=[common], help="normalize annotations, build vocabularies")
    p.add_argument("--annotations", type=Path, default=None)
    p.add_argument("--lemmas", type=Path, default=None)
    p.add_argument("--subtypes", type=Path, default=None)
    p.add_argument("--word-vectors", dest="word_vectors", type=Path, default=None)
    p.add_argument("--merge-threshold", dest="merge_threshold", type=float, default=None)

    sub.add_parser("stats", parents=[common], help="dataset statistics")

    p = sub.add_parser("split", parents=[common], help="build train/test/zero-shot split")
    p.add_argument("--train-size", dest="train_size", type=int, default=None)
    p.add_argument("--test-seen-size", dest="test_seen_size", type=int, default=None)

    p = sub.add_parser("filter-web", parents=[common], help="score and filter the web corpus")
    p.add_argument("--web-features", dest="web_features", type=Path, default=None)
    p.add_argument("--web-labels", dest="web_labels", type=Path, default=None)
    p.add_argument("--group-size", dest="group_size", type=int, default=None)
    p.add_argument("--keep-ratio", dest="keep_ratio", type=float, default=None)
    p.add_argument("--filter-epochs", dest="filter_epochs", type=int, default=None)
    p.add_argument("--filter-lr", dest="filter_lr", type=float, default=None)

    p = sub.add_parser("train", parents=[common], help="train the two-branch metric")
    p.add_argument("--dataset-features", dest="dataset_features", type=Path, default=None)
    p.add_argument("--web-features", dest="web_features", type=Path, default=None)
    p.add_argument("--web-labels", dest="web_labels", type=Path, default=None)
    for flag in (
        "learning-rate",
        "decay-factor",
        "margin",
    ):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=float, default=None)
    for flag in (
        "decay-every",
        "epochs",
        "batch-size",
        "per-anchor-negatives",
        "hidden-dim",
        "embed-dim",
    ):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=int, default=None)

    p = sub.add_parser("infer", parents=[common], help="predict relationships for test images")
    p.add_argument("--dataset-features", dest="dataset_features", type=Path, default=None)
    p.add_argument("--web-features", dest="web_features", type=Path, default=None)
    p.add_argument("--web-labels", dest="web_labels", type=Path, default=None)
    p.add_argument("--suite", choices=("full", "zeroshot"), default="full")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    p.add_argument("--aggregate", choices=("distance", "vote"), default=None)
    p.add_argument("--apply-nms", action="store_true", help="suppress overlapping regions first")
    p.add_argument("--nms-iou", dest="nms_iou", type=float, default=None)
    p.add_argument("--nms-score", dest="nms_score", type=float, default=None)

    p = sub.add_parser("eval", parents=[common], help="score a prediction file")
    p.add_argument("--suite", choices=SUITES, default="full")
    p.add_argument("--predictions", type=Path, default=None)

    sub.add_parser("report", parents=[common], help="aggregate artifacts, render figures")

    p = sub.add_parser("make-fixture", parents=[common], help="generate the synthetic fixture")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--images", type=int, default=100)

    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    known = set(RunConfig.field_names())
    overrides = {k: v for k, v in vars(args).items() if k in known and v is not None}
    return RunConfig.load(args.config, overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        cfg = _config_from_args(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "ingest":
            cmd_ingest(cfg)
        elif args.command == "stats":
            cmd_stats(cfg)
        elif args.command == "split":
            cmd_split(cfg)
        elif args.command == "filter-web":
            cmd_filter_web(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "infer":
            cmd_infer(cfg, args.suite, args.apply_nms)
        elif args.command == "eval":
            cmd_eval(cfg, args.suite, args.predictions)
        elif args.command == "report":
            cmd_report(cfg)
        elif args.command == "make-fixture":
            cmd_make_fixture(cfg, args.out, args.images)
        else:  # pragma: no cover - argparse enforces the choices
            parser.error(f"unknown command {args.command!r}")
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (
        StageError,
        AnnotationError,
        SplitError,
        VocabularyError,
        TrainingDiverged,
        FeatureStoreError,
        CheckpointError,
        ValueError,
    ) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


def entrypoint() -> None:
    sys.exit(main())
