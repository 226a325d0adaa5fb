"""Single executable binding all pipelines.

Exit codes: 0 success, 1 usage error, 2 data/config error. Every run that
writes a file artifact also writes a JSON manifest beside its primary output
(input hashes, resolved configuration, seed, artifact paths, duration).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

from . import baselines as bl
from . import dstc2 as dstc2_mod
from . import report as report_mod
from . import synthetic as synth
from .candidates import CandidateConfig, generate_candidates, label_candidates
from .data import SchemaCatalog, build_schema_catalog, load_corpus, write_corpus
from .embeddings import (
    build_label_embeddings,
    load_embeddings,
    load_label_embeddings,
    save_embedding_table,
    save_label_embeddings,
)
from .errors import ConfigError, SlotCarryError
from .evaluate import domain_breakdown, predict_corpus, reference_sets, score, sweep, user_turns
from .model import (
    CarryoverModel,
    ModelConfig,
    file_sha256,
    load_checkpoint,
    predict_turn,
    save_checkpoint,
)
from .training import TrainConfig, train


def _write_manifest(
    subcommand: str,
    resolved: dict,
    inputs: list[Path | str],
    artifacts: list[Path | str],
    seed: int | None,
    started: float,
) -> None:
    if not artifacts:
        return
    manifest = {
        "subcommand": subcommand,
        "resolved_config": resolved,
        "inputs": {str(p): file_sha256(p) for p in inputs if Path(p).is_file()},
        "seed": seed,
        "artifacts": [str(p) for p in artifacts],
        "duration_seconds": time.time() - started,
    }
    primary = Path(str(artifacts[0]))
    path = primary.with_name(primary.name + ".manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _as_dict(obj) -> dict:
    return dataclasses.asdict(obj) if dataclasses.is_dataclass(obj) else dict(obj)


def _candidate_config(args, base: CandidateConfig | None = None) -> CandidateConfig:
    base = base or CandidateConfig()
    updates = {}
    if getattr(args, "beta", None) is not None:
        updates["beta"] = args.beta
    if getattr(args, "window", None) is not None:
        updates["window"] = args.window
    if getattr(args, "dstc2_mode", False):
        updates["include_system_candidates"] = False
    if getattr(args, "no_entity_expansion", False):
        updates["entity_expansion"] = False
    return dataclasses.replace(base, **updates)


def _load_tables(args, expected_dim: int | None = None):
    table = load_embeddings(args.emb, oov_policy=getattr(args, "oov", "zero"))
    labels = load_label_embeddings(args.labels)
    if table.dim != labels.dim:
        raise ConfigError(
            f"embedding dimension {table.dim} does not match label dimension {labels.dim}"
        )
    if expected_dim is not None and table.dim != expected_dim:
        raise ConfigError(
            f"embedding dimension {table.dim} does not match checkpoint dimension "
            f"{expected_dim}"
        )
    return table, labels


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_convert(args) -> int:
    started = time.time()
    summary = dstc2_mod.convert_dstc2(args.dstc2_dir, args.out)
    summary_path = Path(args.out + ".summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary.to_dict(), sort_keys=True))
    _write_manifest(
        "convert", {"dstc2_dir": args.dstc2_dir}, [], [args.out, summary_path], None, started
    )
    return 0


def _cmd_gen(args) -> int:
    started = time.time()
    config = synth.load_generator_config(args.config)
    dialogs = synth.generate_synthetic(config, args.seed)
    write_corpus(dialogs, args.out)
    stats = synth.corpus_statistics(dialogs, config)
    stats_path = Path(args.out + ".stats.json")
    with open(stats_path, "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(stats, sort_keys=True))
    artifacts: list[Path | str] = [args.out, stats_path]
    if args.emb_out:
        table = synth.synthetic_embedding_table(config, dim=args.emb_dim, seed=args.seed)
        save_embedding_table(table, args.emb_out)
        artifacts.append(args.emb_out)
    _write_manifest("gen", config.to_dict(), [args.config], artifacts, args.seed, started)
    return 0


def _cmd_build_labels(args) -> int:
    started = time.time()
    table = load_embeddings(args.emb, oov_policy=args.oov)
    dialogs = load_corpus(args.corpus)
    labels = build_label_embeddings(table, dialogs)
    save_label_embeddings(labels, args.out)
    print(
        json.dumps(
            {"keys": len(labels.key_vectors), "acts": len(labels.act_vectors)}, sort_keys=True
        )
    )
    _write_manifest(
        "build-labels", {"oov": args.oov}, [args.emb, args.corpus], [args.out], None, started
    )
    return 0


def _cmd_candidates(args) -> int:
    started = time.time()
    labels = load_label_embeddings(args.labels)
    dialogs = load_corpus(args.corpus)
    catalog = build_schema_catalog(dialogs)
    config = _candidate_config(args)
    stats: dict = {}
    with open(args.out, "w", encoding="utf-8") as fh:
        for dialog in dialogs:
            for t in dialog.user_turn_indices():
                cands = generate_candidates(dialog, t, labels, catalog, config, stats=stats)
                refs = dialog.turns[t].references or frozenset()
                for cand in label_candidates(cands, refs):
                    record = {
                        "dialog_id": dialog.dialog_id,
                        "turn_index": t,
                        "original_key": cand.original_key,
                        "mapped_key": cand.mapped_key,
                        "value": cand.value,
                        "stream": cand.stream,
                        "distance": cand.distance,
                        "similarity": cand.similarity,
                        "label": cand.label,
                    }
                    fh.write(json.dumps(record, sort_keys=True))
                    fh.write("\n")
    print(json.dumps(stats, sort_keys=True))
    _write_manifest(
        "candidates",
        _as_dict(config),
        [args.corpus, args.labels],
        [args.out],
        None,
        started,
    )
    return 0


def _cmd_train(args) -> int:
    started = time.time()
    raw = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    table, labels = _load_tables(args)
    train_dialogs = load_corpus(args.corpus)
    dev_dialogs = load_corpus(args.dev)
    catalog = build_schema_catalog(train_dialogs)

    model_kwargs = dict(raw.get("model", {}))
    model_kwargs["embedding_dim"] = table.dim
    if args.seed is not None:
        model_kwargs["seed"] = args.seed
    model_config = ModelConfig(**model_kwargs)

    train_kwargs = dict(raw.get("train", {}))
    if "manual_weights" in train_kwargs and train_kwargs["manual_weights"] is not None:
        train_kwargs["manual_weights"] = tuple(train_kwargs["manual_weights"])
    if args.seed is not None:
        train_kwargs["seed"] = args.seed
    if args.epochs is not None:
        train_kwargs["epochs"] = args.epochs
    train_config = TrainConfig(**train_kwargs)

    cand_config = CandidateConfig(**raw.get("candidates", {}))
    cand_config = _candidate_config(args, cand_config)
    cand_config = dataclasses.replace(cand_config, window=model_config.window)

    model = CarryoverModel.initialize(model_config)
    result = train(
        model, train_dialogs, dev_dialogs, labels, table, train_config, cand_config, catalog
    )
    save_checkpoint(
        result.model,
        args.out,
        label_embeddings_sha256=file_sha256(args.labels),
        candidate_config=cand_config,
        catalog=catalog,
    )
    log_path = Path(args.out + ".log.jsonl")
    report_mod.write_training_log(result.log, log_path)
    curves_path = Path(args.out + ".curves.png")
    report_mod.render_training_curves(result.log, curves_path)
    print(
        json.dumps(
            {
                "best_epoch": result.best_epoch,
                "best_dev_f1": result.best_dev_f1,
                "epochs_run": len(result.log),
                "class_weights": list(result.class_weights),
            },
            sort_keys=True,
        )
    )
    _write_manifest(
        "train",
        {
            "model": model_config.to_dict(),
            "train": _as_dict(train_config),
            "candidates": _as_dict(cand_config),
        },
        [args.corpus, args.dev, args.emb, args.labels]
        + ([args.config] if args.config else []),
        [args.out, log_path, curves_path],
        train_config.seed,
        started,
    )
    return 0


def _model_predictor(args):
    """Build (predict_fn, resolved candidate config, inputs) from CLI args."""
    model, extras = load_checkpoint(args.ckpt)
    table, labels = _load_tables(args, expected_dim=model.config.embedding_dim)
    recorded = extras.get("label_embeddings_sha256")
    if recorded and recorded != file_sha256(args.labels):
        print(
            "warning: label embeddings differ from the ones recorded in the checkpoint",
            file=sys.stderr,
        )
    config = _candidate_config(args, extras.get("candidate_config"))
    catalog = extras.get("schema_catalog")
    if catalog is None:
        catalog = build_schema_catalog(load_corpus(args.corpus))
    tau = args.tau if args.tau is not None else 0.5

    def predict(dialog, t):
        return predict_turn(model, labels, table, dialog, t, catalog, config, tau)

    return predict, config, tau, model, labels, table, catalog


def _baseline_predictor(args):
    config = _candidate_config(args)
    if args.baseline == "naive":
        def predict(dialog, t):
            return bl.naive_predict(dialog, t, config)

        return predict, config
    rules = bl.load_rules(args.rules or bl.demo_rules_path())
    labels = load_label_embeddings(args.labels)
    catalog = build_schema_catalog(load_corpus(args.corpus))

    def predict(dialog, t):
        return bl.predict_with_rules(dialog, t, rules, labels, catalog, config)

    return predict, config


def _cmd_predict(args) -> int:
    started = time.time()
    dialogs = load_corpus(args.corpus)
    if args.baseline:
        predict, config = _baseline_predictor(args)
        tau = None
    else:
        if not args.ckpt:
            raise ConfigError("predict needs either --ckpt or --baseline")
        predict, config, tau, *_ = _model_predictor(args)
    with open(args.out, "w", encoding="utf-8") as fh:
        for dialog, t in user_turns(dialogs):
            slots = sorted(predict(dialog, t))
            record = {
                "dialog_id": dialog.dialog_id,
                "turn_index": t,
                "slots": [{"key": s.key, "value": s.value} for s in slots],
            }
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
    inputs = [args.corpus] + [p for p in (args.ckpt, args.emb, args.labels, args.rules) if p]
    _write_manifest(
        "predict",
        {"candidates": _as_dict(config), "tau": tau, "baseline": args.baseline},
        inputs,
        [args.out],
        None,
        started,
    )
    return 0


def _cmd_eval(args) -> int:
    started = time.time()
    dialogs = load_corpus(args.corpus)
    if args.baseline:
        predict, config = _baseline_predictor(args)
        tau = None
    else:
        if not args.ckpt:
            raise ConfigError("eval needs either --ckpt or --baseline")
        predict, config, tau, *_ = _model_predictor(args)
    hyps = predict_corpus(predict, dialogs)
    refs = reference_sets(dialogs)
    report = score(hyps, refs, tau=tau, beta=config.beta)
    output = {"combined": report.to_dict()}
    labeled = [("combined", report)]
    if args.breakdown:
        result = domain_breakdown(dialogs, hyps, refs)
        if result.warning:
            output["warning"] = result.warning
        else:
            output["within_domain"] = result.within.to_dict()
            output["cross_domain"] = result.cross.to_dict()
            labeled += [("within-domain", result.within), ("cross-domain", result.cross)]
    print(json.dumps(output, indent=2, sort_keys=True))
    if args.report_dir:
        report_dir = Path(args.report_dir)
        report_dir.mkdir(parents=True, exist_ok=True)
        tsv = report_dir / "report.tsv"
        fig = report_dir / "report.png"
        report_mod.write_report_tsv(labeled, tsv)
        report_mod.render_report_figure(labeled, fig)
        inputs = [args.corpus] + [
            p for p in (args.ckpt, args.emb, args.labels, args.rules) if p
        ]
        _write_manifest(
            "eval",
            {"candidates": _as_dict(config), "tau": tau, "baseline": args.baseline},
            inputs,
            [tsv, fig],
            None,
            started,
        )
    return 0


def _cmd_sweep(args) -> int:
    started = time.time()
    with open(args.grid, "r", encoding="utf-8") as fh:
        grid = json.load(fh)
    taus = [float(x) for x in grid.get("taus", [])]
    betas = [float(x) for x in grid.get("betas", [])]
    dialogs = load_corpus(args.corpus)
    _, config, _, model, labels, table, catalog = _model_predictor(args)
    best_tau, best_beta, best_report, rows = sweep(
        model, labels, table, dialogs, catalog, config, taus, betas
    )
    output = {
        "best_tau": best_tau,
        "best_beta": best_beta,
        "best": best_report.to_dict(),
        "grid_points": len(rows),
    }
    print(json.dumps(output, indent=2, sort_keys=True))
    if args.report_dir:
        report_dir = Path(args.report_dir)
        report_dir.mkdir(parents=True, exist_ok=True)
        tsv = report_dir / "sweep.tsv"
        fig = report_dir / "sweep.png"
        report_mod.write_sweep_tsv(rows, tsv)
        report_mod.render_sweep_heatmap(rows, fig)
        _write_manifest(
            "sweep",
            {"candidates": _as_dict(config), "taus": taus, "betas": betas},
            [args.corpus, args.ckpt, args.emb, args.labels, args.grid],
            [tsv, fig],
            None,
            started,
        )
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slotcarry", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a DSTC2 session tree to native JSONL")
    p.add_argument("--dstc2-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emb-out", help="also write a matching embedding table")
    p.add_argument("--emb-dim", type=int, default=16)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("build-labels", help="build label embeddings from a corpus")
    p.add_argument("--emb", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--oov", choices=("zero", "mean"), default="zero")
    p.set_defaults(func=_cmd_build_labels)

    p = sub.add_parser("candidates", help="emit labeled candidates for inspection")
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--dstc2-mode", action="store_true")
    p.add_argument("--no-entity-expansion", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_candidates)

    p = sub.add_parser("train", help="train a carryover model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--config", help="JSON with model/train/candidates sections")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--dstc2-mode", action="store_true")
    p.add_argument("--no-entity-expansion", action="store_true")
    p.set_defaults(func=_cmd_train)

    for name, handler in (("predict", _cmd_predict), ("eval", _cmd_eval)):
        p = sub.add_parser(name, help=f"{name} with a checkpoint or a baseline")
        p.add_argument("--corpus", required=True)
        p.add_argument("--ckpt")
        p.add_argument("--emb")
        p.add_argument("--labels")
        p.add_argument("--baseline", choices=("naive", "rule"))
        p.add_argument("--rules")
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--beta", type=float, default=None)
        p.add_argument("--window", type=int, default=None)
        p.add_argument("--dstc2-mode", action="store_true")
        p.add_argument("--no-entity-expansion", action="store_true")
        if name == "predict":
            p.add_argument("--out", required=True)
        else:
            p.add_argument("--breakdown", action="store_true")
            p.add_argument("--report-dir")
        p.set_defaults(func=handler)

    p = sub.add_parser("sweep", help="grid-search tau and beta on a dev corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--grid", required=True, help="JSON with taus and betas arrays")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--dstc2-mode", action="store_true")
    p.add_argument("--no-entity-expansion", action="store_true")
    p.add_argument("--report-dir")
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except SlotCarryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
