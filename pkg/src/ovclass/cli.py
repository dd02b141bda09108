"""Command-line pipeline driver.

One verb per pipeline stage: resolve-exemplars, build-text, train-aggregator,
build-visual, fuse, plan-tta, eval, sweep-k. Every subcommand is
deterministic given its inputs and seed, performs no network I/O, and writes
outputs atomically (temp file + rename). Exit codes: 0 success, 1 validation
or usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import aggregator as agg
from . import average_precision as apmod
from . import fusion, report, scoring, text, training
from .bank import (ClassifierBank, atomic_write_bytes, classifier_bank_to_json,
                   load_bank, load_classifier_bank, load_vocabulary,
                   save_classifier_bank)
from .errors import ConfigError, ValidationError
from .exemplars import CandidatePool, Candidate, apply_alias_table, catalog_from_json, resolve_exemplars


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _write_text(path: str, payload: str) -> None:
    atomic_write_bytes(path, payload.encode("utf-8"))


def _render_atomic(render, path: str, *args) -> None:
    tmp = path + ".tmp.png"
    render(*args, tmp)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_resolve_exemplars(args) -> int:
    vocab = load_vocabulary(args.vocab)
    with open(args.pools, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    if not isinstance(spec, list):
        raise ValidationError("pools file must contain a JSON list of pools")
    pools: list[CandidatePool] = []
    for i, entry in enumerate(spec):
        kind = entry.get("kind")
        if kind is None:
            raise ValidationError(f"pool {i} has no 'kind'")
        if "aliases" in entry:
            source_index = entry.get("source")
            if not isinstance(source_index, int) or not 0 <= source_index < len(pools):
                raise ValidationError(f"pool {i}: 'source' must index an earlier pool")
            pools.append(apply_alias_table(entry["aliases"], pools[source_index]))
            continue
        items = {
            cid: [Candidate(c["id"], c.get("area")) for c in cands]
            for cid, cands in entry.get("items", {}).items()
        }
        pools.append(CandidatePool(kind=kind, items=items))
    catalog = resolve_exemplars(vocab, pools, min_full=args.min_full,
                                min_reduced=args.min_reduced,
                                min_box_area=args.min_box_area)
    _write_text(args.out, catalog.to_json() + "\n")
    shortfall = catalog.shortfall_report()
    print(f"resolved {len(catalog.entries)} classes ({len(shortfall)} shortfall)")
    return 0


def _cmd_build_text(args) -> int:
    sets = text.ingest_descriptions(args.descriptions)
    if not sets:
        raise ValidationError(f"{args.descriptions}: no descriptions found")
    template = text.PromptTemplate(args.prompt_template) if args.prompt_template \
        else text.PromptTemplate()
    dimension = None
    for ds in sets.values():
        for emb in ds.embeddings:
            if emb is not None:
                dimension = emb.shape[0]
                break
        if dimension is not None:
            break
    if dimension is None:
        raise ValidationError("descriptions carry no embeddings; run the extractor first")
    bank = ClassifierBank(dimension=dimension)
    for cid in sorted(sets):
        ds = sets[cid]
        classifier = text.build_text_classifier(ds.embedding_matrix())
        bank.add(cid, classifier.astype(np.float32), "text",
                 note=f"mean of {ds.count} descriptions")
    save_classifier_bank(bank, args.bank)
    if args.json_out:
        _write_text(args.json_out, classifier_bank_to_json(bank) + "\n")
    print(f"wrote {len(bank.entries)} text classifiers (dim {dimension}) to {args.bank}")
    # template echo keeps the prompt used on record for reproducibility
    print(f"prompt template: {template.pattern!r}")
    return 0


def _cmd_train_aggregator(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    agg_spec = raw.pop("aggregator", None)
    config = training.TrainConfig(**raw)
    if args.seed is not None:
        config.seed = args.seed
    bank = load_bank(args.bank)
    vocab = load_vocabulary(args.vocab) if args.vocab else None
    agg_config = None
    if agg_spec is not None:
        agg_config = agg.AggregatorConfig(**agg_spec)

    def checkpoint(model):
        agg.save_model(model, args.out)

    model, train_report = training.train(config, bank, vocab=vocab,
                                         aggregator_config=agg_config,
                                         checkpoint_callback=checkpoint)
    agg.save_model(model, args.out)
    if args.report:
        _write_text(args.report, train_report.to_json() + "\n")
    if args.curves:
        _write_text(args.curves, train_report.to_csv())
    if args.figure:
        _render_atomic(report.render_training_curve, args.figure, train_report.epoch_losses)
    print(f"seed {config.seed}: {train_report.steps} steps, "
          f"final loss {train_report.final_loss:.6f} "
          f"({train_report.wall_clock_seconds:.1f}s) -> {args.out}")
    return 0


def _select_exemplars(bank, class_id: str, k: int | None) -> np.ndarray:
    matrix = bank.embeddings(class_id)
    if k is not None:
        if k < 1:
            raise ValidationError("--k must be at least 1")
        matrix = matrix[:k]
    return matrix


def _cmd_build_visual(args) -> int:
    bank = load_bank(args.bank)
    modality = args.modality
    if modality not in ("vision-agg", "vision-mean"):
        raise ValidationError("--modality must be vision-agg or vision-mean here")
    model = None
    if modality == "vision-agg":
        if not args.model:
            raise ValidationError("vision-agg classifiers need --model")
        model = agg.load_model(args.model)
        if model.config.dim != bank.dimension:
            raise ConfigError(f"model dim {model.config.dim} != bank dim {bank.dimension}")
    out = ClassifierBank(dimension=bank.dimension)
    for cid in bank.classes():
        matrix = _select_exemplars(bank, cid, args.k)
        if modality == "vision-agg":
            vector = agg.aggregate(model, matrix)
        else:
            vector = fusion.mean_baseline(matrix)
        out.add(cid, vector.astype(np.float32), modality,
                note=f"{matrix.shape[0]} exemplars")
    save_classifier_bank(out, args.out)
    print(f"wrote {len(out.entries)} {modality} classifiers to {args.out}")
    return 0


def _cmd_fuse(args) -> int:
    text_bank = load_classifier_bank(args.text)
    vision_bank = load_classifier_bank(args.visual)
    if text_bank.dimension != vision_bank.dimension:
        raise ValidationError(
            f"dimension mismatch: text {text_bank.dimension}, vision {vision_bank.dimension}")
    shared = sorted(set(text_bank.entries) & set(vision_bank.entries))
    if not shared:
        raise ValidationError("no classes common to both banks")
    skipped = sorted(set(text_bank.entries) ^ set(vision_bank.entries))
    out = ClassifierBank(dimension=text_bank.dimension)
    for cid in shared:
        fused = fusion.fuse_multimodal(text_bank.entries[cid].vector,
                                       vision_bank.entries[cid].vector)
        out.add(cid, fused.astype(np.float32), "multimodal",
                note=f"text:{text_bank.entries[cid].modality}+vision:{vision_bank.entries[cid].modality}")
    save_classifier_bank(out, args.out)
    if skipped:
        print(f"skipped {len(skipped)} classes missing a modality: {', '.join(skipped[:8])}"
              + ("..." if len(skipped) > 8 else ""), file=sys.stderr)
    print(f"wrote {len(out.entries)} multimodal classifiers to {args.out}")
    return 0


def _cmd_plan_tta(args) -> int:
    with open(args.catalog, "r", encoding="utf-8") as fh:
        catalog = catalog_from_json(fh.read())
    recipe = fusion.get_recipe(args.recipe)
    jobs, skipped = fusion.plan_tta(catalog, recipe, seed=args.seed)
    _write_text(args.out, fusion.jobs_to_jsonl(jobs))
    if skipped:
        _write_text(args.out + ".skipped.json",
                    json.dumps(skipped, indent=2, sort_keys=True) + "\n")
    print(f"planned {len(jobs)} jobs ({recipe.name}, seed {args.seed}); "
          f"{len(skipped)} classes skipped")
    return 0


def _flatten_query_bank(bank) -> tuple[np.ndarray, list[str]]:
    feats, labels = [], []
    for cid in bank.classes():
        for row in bank.embeddings(cid):
            feats.append(row)
            labels.append(cid)
    if not feats:
        raise ValidationError("query bank is empty")
    return np.stack(feats), labels


def _encode_queries(features: np.ndarray, model) -> np.ndarray:
    """Vision-agg classifiers live in aggregator-output space, so queries are
    encoded through the aggregator as singleton sets when a model is given."""
    if model is None:
        return features
    return np.stack([agg.aggregate(model, row.reshape(1, -1)) for row in features])


def _cmd_eval(args) -> int:
    vocab = load_vocabulary(args.vocab) if args.vocab else None
    head = scoring.ScoringHead(logit_scale=args.logit_scale, bias=args.bias)
    result = apmod.EvalResult()
    if args.detections:
        if not args.gt:
            raise ValidationError("--detections mode requires --gt")
        detections = apmod.load_detections(args.detections)
        groundtruth = apmod.load_groundtruth(args.gt)
        result = apmod.compute_ap(detections, groundtruth, vocab=vocab,
                                  include_zero_gt=args.include_zero_gt)
    else:
        if not (args.bank and args.queries):
            raise ValidationError("eval needs --bank and --queries (or --detections)")
        bank = load_classifier_bank(args.bank)
        qbank = load_bank(args.queries)
        model = agg.load_model(args.model) if args.model else None
        features, labels = _flatten_query_bank(qbank)
        encoded = _encode_queries(features, model)
        scores, class_ids = scoring.score_queries(encoded, bank, head)
        retrieval = scoring.evaluate_retrieval(scores, labels, class_ids)
        if args.gt:
            groundtruth = apmod.load_groundtruth(args.gt)
            if len(groundtruth) != scores.shape[0]:
                raise ValidationError(
                    f"{len(groundtruth)} ground-truth lines for {scores.shape[0]} queries")
            detections = []
            for i, gt_line in enumerate(groundtruth):
                for j, cid in enumerate(class_ids):
                    detections.append(apmod.DetectionRecord(
                        gt_line.image_id, cid, gt_line.box, float(scores[i, j])))
            result = apmod.compute_ap(detections, groundtruth, vocab=vocab,
                                      include_zero_gt=args.include_zero_gt)
        result.top1 = retrieval["top1"]
        result.top5 = retrieval["top5"]
    _write_text(args.out + ".json", result.to_json() + "\n")
    _write_text(args.out + ".txt", result.table() + "\n")
    metrics = {"APr": result.ap_rare, "APc": result.ap_common,
               "APf": result.ap_frequent, "mAP": result.map}
    shown = {k: (None if v is None or np.isnan(v) else v) for k, v in metrics.items()}
    if any(v is not None for v in shown.values()):
        _render_atomic(report.render_eval_summary, args.out + ".png", shown)
    print(result.table())
    return 0


def _cmd_sweep_k(args) -> int:
    model = agg.load_model(args.model)
    bank = load_bank(args.bank)
    qbank = load_bank(args.queries)
    if model.config.dim != bank.dimension:
        raise ConfigError(f"model dim {model.config.dim} != bank dim {bank.dimension}")
    ks = sorted({int(v) for v in args.ks.split(",") if v.strip()})
    if not ks or ks[0] < 1:
        raise ValidationError("--ks must list positive integers")
    features, labels = _flatten_query_bank(qbank)
    agg_queries = _encode_queries(features, model)
    mean_queries = features / np.linalg.norm(features, axis=1, keepdims=True)
    head = scoring.ScoringHead(logit_scale=args.logit_scale, bias=args.bias)
    rows = []
    for k in ks:
        agg_bank = ClassifierBank(dimension=bank.dimension)
        mean_bank = ClassifierBank(dimension=bank.dimension)
        for cid in bank.classes():
            matrix = _select_exemplars(bank, cid, k)
            agg_bank.add(cid, agg.aggregate(model, matrix).astype(np.float32), "vision-agg")
            mean_bank.add(cid, fusion.mean_baseline(matrix).astype(np.float32), "vision-mean")
        s_agg, ids = scoring.score_queries(agg_queries, agg_bank, head)
        s_mean, _ = scoring.score_queries(mean_queries, mean_bank, head)
        rows.append({
            "k": k,
            "aggregator_top1": scoring.evaluate_retrieval(s_agg, labels, ids)["top1"],
            "mean_top1": scoring.evaluate_retrieval(s_mean, labels, ids)["top1"],
        })
    lines = ["k,aggregator_top1,mean_top1"]
    for row in rows:
        lines.append(f"{row['k']},{row['aggregator_top1']:.6f},{row['mean_top1']:.6f}")
    _write_text(args.out, "\n".join(lines) + "\n")
    if args.figure:
        _render_atomic(report.render_sweep, args.figure, rows)
    for row in rows:
        print(f"K={row['k']:>3}  aggregator {100 * row['aggregator_top1']:6.2f}%  "
              f"mean {100 * row['mean_top1']:6.2f}%")
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ovclass",
                     description="build and evaluate open-vocabulary classifier banks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("resolve-exemplars", parents=[], help="run the exemplar sourcing cascade")
    p.add_argument("--vocab", required=True)
    p.add_argument("--pools", required=True, help="JSON list of candidate pools")
    p.add_argument("--out", required=True)
    p.add_argument("--min-full", type=int, default=40)
    p.add_argument("--min-reduced", type=int, default=10)
    p.add_argument("--min-box-area", type=float, default=32.0 * 32.0)
    p.set_defaults(func=_cmd_resolve_exemplars)

    p = sub.add_parser("build-text", help="average description embeddings into text classifiers")
    p.add_argument("--descriptions", required=True)
    p.add_argument("--bank", required=True, help="output classifier bank (.ovcb)")
    p.add_argument("--json-out", default=None, help="also export the bank as JSON")
    p.add_argument("--prompt-template", default=None)
    p.set_defaults(func=_cmd_build_text)

    p = sub.add_parser("train-aggregator", help="contrastively train the visual aggregator")
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--bank", required=True, help="exemplar embedding bank (.oveb)")
    p.add_argument("--out", required=True, help="checkpoint path (.ovag)")
    p.add_argument("--vocab", default=None)
    p.add_argument("--report", default=None, help="training report JSON path")
    p.add_argument("--curves", default=None, help="per-epoch loss CSV path")
    p.add_argument("--figure", default=None, help="loss-curve PNG path")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(func=_cmd_train_aggregator)

    p = sub.add_parser("build-visual", help="build vision classifiers from exemplars")
    p.add_argument("--bank", required=True, help="exemplar embedding bank (.oveb)")
    p.add_argument("--out", required=True, help="output classifier bank (.ovcb)")
    p.add_argument("--model", default=None, help="aggregator checkpoint (.ovag)")
    p.add_argument("--modality", default="vision-agg",
                   choices=["vision-agg", "vision-mean"])
    p.add_argument("--k", type=int, default=None, help="exemplars per class (default: all)")
    p.set_defaults(func=_cmd_build_visual)

    p = sub.add_parser("fuse", help="fuse text and vision classifier banks")
    p.add_argument("--text", required=True)
    p.add_argument("--visual", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("plan-tta", help="plan augmentation jobs for an exemplar catalog")
    p.add_argument("--catalog", required=True)
    p.add_argument("--recipe", default="gentle", choices=["none", "harsh", "gentle"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="jobs JSONL path")
    p.set_defaults(func=_cmd_plan_tta)

    p = sub.add_parser("eval", help="score queries and compute AP/retrieval metrics")
    p.add_argument("--bank", default=None, help="classifier bank (.ovcb)")
    p.add_argument("--queries", default=None, help="query embedding bank (.oveb)")
    p.add_argument("--model", default=None,
                   help="aggregator checkpoint for encoding queries (vision-agg banks)")
    p.add_argument("--detections", default=None, help="detections JSONL (skips scoring)")
    p.add_argument("--gt", default=None, help="ground-truth JSONL")
    p.add_argument("--vocab", default=None)
    p.add_argument("--out", required=True, help="output prefix (.json/.txt/.png)")
    p.add_argument("--logit-scale", type=float, default=50.0)
    p.add_argument("--bias", type=float, default=-2.0)
    p.add_argument("--include-zero-gt", action="store_true",
                   help="count vocabulary classes without ground truth as AP 0")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep-k", help="retrieval accuracy vs exemplar count")
    p.add_argument("--model", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--ks", default="1,2,5,10")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--figure", default=None, help="PNG path")
    p.add_argument("--logit-scale", type=float, default=50.0)
    p.add_argument("--bias", type=float, default=-2.0)
    p.set_defaults(func=_cmd_sweep_k)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
