"""Command-line pipeline driver.

Every subcommand takes ``--config``, ``--seed``, ``--jobs`` and ``--out``
and writes, next to its artifacts, a canonical config snapshot plus a
``run_metadata.json`` (command, argv, config hash, versions, outputs).
Reruns with the same config and seed write byte-identical artifacts.

Exit codes: 0 ok, 1 validation error, 2 data error, 3 numeric error.
Errors are emitted as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .analysis import (
    EvalRecord,
    aggregate,
    abstraction_run,
    load_report_json,
    save_node_csv,
    save_report_json,
    save_span_bins_csv,
    save_suite_csv,
    save_word_cloud_csv,
    span_bins_report,
)
from .config import (
    RunConfig,
    config_hash,
    default_config,
    load_config,
    save_config,
    with_run_overrides,
)
from .errors import DataError, NumericError, ValidationError
from .hierarchy import (
    build_dag,
    filter_broad_words,
    load_dag_json,
    load_hypernym_file,
    save_dag_json,
)
from .metalearn import (
    FrozenLookup,
    gather_episode,
    init_mlp,
    load_checkpoint,
    load_frozen,
    run_meta_training,
    save_checkpoint,
    save_frozen,
    train_baseline,
    evaluate_episode,
)
from .montage import load_layout_csv, align_layouts, save_alignment_csv, load_alignment_csv
from .preprocess import (
    extract_word_windows,
    load_heeg1,
    load_manifest,
    preprocess_recording,
    save_manifest,
)
from .sampler import (
    ClassPool,
    SplitSpec,
    derive_seed,
    fixed_way_episode,
    load_suite_jsonl,
    make_splits,
    sample_eval_suite,
    save_suite_jsonl,
    training_episode,
)
from .synth import bayes_oracle_accuracy, gen_hierarchy_gaussians, write_synth_dataset

MODES = ("baseline", "fomaml", "proto")


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _int_list(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in raw.split(",") if p.strip())
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {raw!r}") from None


def _jobs(cfg: RunConfig) -> int:
    return cfg.jobs if cfg.jobs > 0 else (os.cpu_count() or 1)


def _pool_from_rows(rows, seed: int, name: str) -> ClassPool:
    classes: dict[str, list[str]] = {}
    for row in rows:
        classes.setdefault(row.word, []).append(row.sample_id)
    if not classes:
        raise DataError("no rows to build a class pool from")
    return ClassPool(
        classes={w: tuple(sorted(v)) for w, v in classes.items()},
        partition_seed=derive_seed(seed, "pool", name),
    )


def _load_windows(windows_dir: str) -> FrozenLookup:
    return load_frozen(
        os.path.join(windows_dir, "windows.heeg1"),
        os.path.join(windows_dir, "windows.csv"),
    )


def _write_csv(path: str, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def _suite_instances(cfg: RunConfig, split: str) -> int:
    return cfg.sampler.i_test if split == "meta-test" else cfg.sampler.i_val


def _train_embedder(cfg: RunConfig, mode: str, lookup, dag, rows):
    """Train one embedder in the requested mode; returns (params, log rows)."""
    d_in = lookup.vectors.shape[1]
    rng = np.random.default_rng(derive_seed(cfg.seed, "init", mode))
    params = init_mlp(d_in, cfg.embedding_dim, rng, dropout_rate=cfg.dropout)
    if mode == "baseline":
        classes = sorted({r.word for r in rows})
        if len(classes) < 2:
            raise DataError("baseline training needs >= 2 words")
        index = {w: i for i, w in enumerate(classes)}
        xs = np.stack([lookup[r.sample_id] for r in rows])
        ys = np.asarray([index[r.word] for r in rows], dtype=np.intp)
        params, _, losses = train_baseline(
            params, xs, ys, len(classes), cfg.adapt,
            np.random.default_rng(derive_seed(cfg.seed, "baseline")),
        )
        log = [("epoch_loss", i + 1, repr(l)) for i, l in enumerate(losses)]
        return params, log
    pool = _pool_from_rows(rows, cfg.seed, "meta-train")
    base = derive_seed(cfg.seed, "train-episodes")

    def source(index: int):
        ep = training_episode(dag, pool, base, index, cfg.sampler)
        return gather_episode(ep, lookup)

    params, stats = run_meta_training(
        params, source, cfg.adapt, mode, derive_seed(cfg.seed, "meta", mode)
    )
    log = [
        ("query_loss", i + 1, repr(s["query_loss"])) for i, s in enumerate(stats)
    ]
    return params, log


def _evaluate_suite(cfg: RunConfig, params, mode, episodes, lookup, dag, ways):
    """Score episodes (optionally at fixed ways) into EvalRecords."""

    def work(ep):
        subs = [(ep, "native")] if not ways else [
            (fixed_way_episode(ep, w), str(w)) for w in ways
        ]
        out = []
        for sub, label in subs:
            if sub is None:
                continue
            tensors = gather_episode(sub, lookup)
            plain, balanced = evaluate_episode(params, tensors, mode, cfg.adapt)
            out.append(
                EvalRecord(
                    node=sub.node,
                    way=len(sub.classes),
                    accuracy=balanced if cfg.balanced else plain,
                    mode=mode,
                    span_length=dag.span_length(sub.node),
                    way_label=label,
                )
            )
        return out

    n = _jobs(cfg)
    if n > 1 and len(episodes) > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            nested = list(pool.map(work, episodes))
    else:
        nested = [work(ep) for ep in episodes]
    return [rec for group in nested for rec in group]


def _write_report(out: str, report, stem: str = "") -> list[str]:
    from .figures import render_suite_figure

    prefix = f"{stem}_" if stem else ""
    paths = {
        "node": os.path.join(out, f"{prefix}node.csv"),
        "suite": os.path.join(out, f"{prefix}suite.csv"),
        "json": os.path.join(out, f"{prefix}report.json"),
        "png": os.path.join(out, f"{prefix}suite.png"),
    }
    save_node_csv(paths["node"], report)
    save_suite_csv(paths["suite"], report)
    save_report_json(paths["json"], report)
    render_suite_figure(paths["png"], report)
    return list(paths.values())


# ---------------------------------------------------------------------------
# subcommand handlers: each returns the list of artifact paths it wrote
# ---------------------------------------------------------------------------


def cmd_build_dag(args, cfg: RunConfig) -> list[str]:
    records = load_hypernym_file(args.hypernyms)
    dag = build_dag(records)
    out = os.path.join(args.out, "dag.json")
    save_dag_json(out, dag)
    return [out]


def cmd_filter_dag(args, cfg: RunConfig) -> list[str]:
    dag = load_dag_json(args.dag)
    filtered, removed = filter_broad_words(dag, cfg.broad_threshold)
    dag_path = os.path.join(args.out, "dag.json")
    removed_path = os.path.join(args.out, "removed_words.txt")
    save_dag_json(dag_path, filtered)
    with open(removed_path, "w", encoding="utf-8", newline="\n") as fh:
        for word in removed:
            fh.write(word + "\n")
    return [dag_path, removed_path]


def cmd_align_montage(args, cfg: RunConfig) -> list[str]:
    reference = load_layout_csv(args.reference)
    targets = [load_layout_csv(p) for p in args.target]
    amap = align_layouts(reference, targets)
    out = os.path.join(args.out, "alignment.csv")
    save_alignment_csv(out, amap)
    return [out]


def cmd_preprocess(args, cfg: RunConfig) -> list[str]:
    rows = load_manifest(args.manifest)
    amap = load_alignment_csv(args.alignment) if args.alignment else None
    by_uri: dict[str, list] = {}
    for row in rows:
        by_uri.setdefault(row.recording_uri, []).append(row)

    def work(uri: str):
        raw = load_heeg1(os.path.join(args.data_dir, uri))
        clean = preprocess_recording(
            raw, amap=amap, layout=args.layout, input_unit_uv=args.input_unit_uv
        )
        return extract_word_windows(clean, by_uri[uri], args.window_samples)

    uris = sorted(by_uri)
    with ThreadPoolExecutor(max_workers=_jobs(cfg)) as pool:
        per_uri = list(pool.map(work, uris))
    pairs = [pair for group in per_uri for pair in group]
    if not pairs:
        raise DataError("no windows extracted from any recording")
    pairs.sort(key=lambda p: p[0])
    lookup = FrozenLookup(
        ids=tuple(sid for sid, _ in pairs),
        vectors=np.stack([w.ravel() for _, w in pairs]),
    )
    tensor = os.path.join(args.out, "windows.heeg1")
    sidecar = os.path.join(args.out, "windows.csv")
    save_frozen(tensor, sidecar, lookup)
    return [tensor, sidecar]


def cmd_make_splits(args, cfg: RunConfig) -> list[str]:
    rows = load_manifest(args.manifest)
    dag = load_dag_json(args.dag)
    records = load_hypernym_file(args.hypernyms) if args.hypernyms else None
    spec = SplitSpec(
        min_occurrences=cfg.min_occurrences,
        val_fraction=cfg.val_fraction,
        source_session_prefix=cfg.source_session_prefix,
    )
    splits = make_splits(rows, dag, spec, cfg.seed, records=records)
    written: list[str] = []
    for split in splits:
        sub = os.path.join(args.out, split.name)
        os.makedirs(sub, exist_ok=True)
        save_dag_json(os.path.join(sub, "dag.json"), split.dag)
        save_manifest(os.path.join(sub, "rows.csv"), split.rows)
        written += [os.path.join(sub, "dag.json"), os.path.join(sub, "rows.csv")]
    summary = os.path.join(args.out, "splits.json")
    with open(summary, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(
            {
                "val_words": sorted(splits.val_words),
                "test_words": sorted(splits.test_words),
                "val_subjects": sorted(splits.val_subjects),
                "test_subjects": sorted(splits.test_subjects),
                "train_rows": len(splits.train.rows),
                "val_rows": len(splits.val.rows),
                "test_rows": len(splits.test.rows),
            },
            fh,
            indent=1,
            sort_keys=True,
        )
        fh.write("\n")
    return written + [summary]


def cmd_sample_episodes(args, cfg: RunConfig) -> list[str]:
    dag = load_dag_json(args.dag)
    rows = load_manifest(args.rows)
    pool = _pool_from_rows(rows, cfg.seed, args.split)
    suite = sample_eval_suite(
        dag,
        pool,
        args.split,
        _suite_instances(cfg, args.split),
        derive_seed(cfg.seed, "suite", args.split),
        cfg.sampler,
    )
    out = os.path.join(args.out, "episodes.jsonl")
    save_suite_jsonl(out, suite)
    written = [out]
    if suite.rejections:
        rej = os.path.join(args.out, "rejections.csv")
        _write_csv(rej, "node,instance,reason", suite.rejections)
        written.append(rej)
    return written


def cmd_train(args, cfg: RunConfig) -> list[str]:
    from .figures import render_training_curve

    lookup = _load_windows(args.windows)
    dag = load_dag_json(args.dag)
    rows = load_manifest(args.rows)
    params, log = _train_embedder(cfg, args.mode, lookup, dag, rows)
    model = os.path.join(args.out, "model.hmlc1")
    save_checkpoint(model, params, mode=args.mode, step=len(log))
    log_path = os.path.join(args.out, "train_log.csv")
    _write_csv(log_path, "stat,step,value", log)
    curve_path = os.path.join(args.out, "train_curve.png")
    render_training_curve(
        curve_path, [float(value) for _, _, value in log], f"{args.mode} training loss"
    )
    return [model, log_path, curve_path]


def cmd_evaluate(args, cfg: RunConfig) -> list[str]:
    params, header = load_checkpoint(args.checkpoint)
    mode = args.mode or header.get("mode")
    if mode not in MODES:
        raise ValidationError(
            f"checkpoint mode {mode!r} unusable; pass --mode baseline|fomaml|proto"
        )
    lookup = _load_windows(args.windows)
    dag = load_dag_json(args.dag)
    episodes = load_suite_jsonl(args.suite).episodes
    ways = _int_list(args.ways) if args.ways else ()
    records = _evaluate_suite(cfg, params, mode, episodes, lookup, dag, ways)
    if not records:
        raise DataError("no episodes could be scored")
    return _write_report(args.out, aggregate(records))


def cmd_analyze_span(args, cfg: RunConfig) -> list[str]:
    from .figures import render_span_figure, render_word_scatter

    report = load_report_json(args.report)
    span = span_bins_report(report, cfg.span_bins)
    bins_csv = os.path.join(args.out, "span_bins.csv")
    save_span_bins_csv(bins_csv, span)
    span_png = os.path.join(args.out, "span_bins.png")
    render_span_figure(span_png, span)
    written = [bins_csv, span_png]
    for (mode, way_label), rows in sorted(span.word_clouds.items()):
        stem = f"word_cloud_{mode}_{way_label}way"
        cloud_csv = os.path.join(args.out, stem + ".csv")
        save_word_cloud_csv(cloud_csv, rows)
        cloud_png = os.path.join(args.out, stem + ".png")
        render_word_scatter(cloud_png, rows)
        written += [cloud_csv, cloud_png]
    return written


def cmd_analyze_abstraction(args, cfg: RunConfig) -> list[str]:
    from .figures import render_abstraction_figure

    lookup = _load_windows(args.windows)
    eval_dag = load_dag_json(args.eval_dag)
    eval_rows = load_manifest(args.eval_rows)
    train_dag = load_dag_json(args.train_dag)
    train_rows = load_manifest(args.train_rows)
    eval_pool = _pool_from_rows(eval_rows, cfg.seed, "meta-test")
    train_pool = _pool_from_rows(train_rows, cfg.seed, "meta-train")
    levels = _int_list(args.levels)
    if not levels:
        raise ValidationError("--levels must name at least one level")

    def pipeline(level_dag, level_pool, h, train_level_dag, train_level_pool):
        if train_level_pool is None:
            return []  # training side infeasible at this level

        # retrain at this level: meta-train rows relabeled by the train map
        class Row:  # minimal view: _train_embedder touches word + sample_id
            __slots__ = ("word", "sample_id")

            def __init__(self, word, sample_id):
                self.word = word
                self.sample_id = sample_id

        rows = [
            Row(cls, sid)
            for cls in sorted(train_level_pool.classes)
            for sid in train_level_pool.classes[cls]
        ]
        params, _ = _train_embedder(cfg, args.mode, lookup, train_level_dag, rows)
        suite = sample_eval_suite(
            level_dag,
            level_pool,
            "meta-test",
            _suite_instances(cfg, "meta-test"),
            derive_seed(cfg.seed, "abstraction", h),
            cfg.sampler,
        )
        return _evaluate_suite(cfg, params, args.mode, suite.episodes, lookup, level_dag, ())

    results = abstraction_run(
        eval_dag, eval_pool, levels, pipeline, train_dag=train_dag, train_pool=train_pool
    )
    written: list[str] = []
    summary_rows = []
    fig_rows = []
    for level in results:
        if level.feasible and level.report is not None:
            sub = os.path.join(args.out, f"level_{level.h}")
            os.makedirs(sub, exist_ok=True)
            written += _write_report(sub, level.report)
            for s in level.report.suite:
                summary_rows.append(
                    (level.h, s.mode, s.way_label, repr(s.mean), repr(s.std),
                     "" if level.class_overlap is None else repr(level.class_overlap))
                )
                fig_rows.append((level.h, s.mode, s.mean))
        else:
            summary_rows.append((level.h, "-", "-", "", "", level.reason))
    summary = os.path.join(args.out, "abstraction_summary.csv")
    _write_csv(summary, "level,mode,way_label,mean,std,class_overlap_or_reason", summary_rows)
    written.append(summary)
    if fig_rows:
        png = os.path.join(args.out, "abstraction.png")
        render_abstraction_figure(png, fig_rows)
        written.append(png)
    return written


def cmd_synth_gen(args, cfg: RunConfig) -> list[str]:
    data = write_synth_dataset(cfg.synth, args.out)
    # only subjects that actually received rows get a recording file
    subjects = sorted({row.subject for row in data.manifest_rows()})
    return (
        [os.path.join(args.out, "hypernyms.tsv"), os.path.join(args.out, "manifest.csv")]
        + [os.path.join(args.out, f"{s}.heeg1") for s in subjects]
    )


def cmd_oracle(args, cfg: RunConfig) -> list[str]:
    from .figures import render_abstraction_figure

    data = gen_hierarchy_gaussians(cfg.synth)
    levels = _int_list(args.levels)
    ways = _int_list(args.ways) if args.ways else None
    rows = []
    for h in levels:
        acc = bayes_oracle_accuracy(
            data, h=h, ways=ways, trials=args.trials,
            base_seed=derive_seed(cfg.seed, "oracle"), cfg=cfg.sampler,
        )
        rows.append((h, args.trials, repr(acc)))
    out = os.path.join(args.out, "oracle.csv")
    _write_csv(out, "level,trials,normalized_accuracy", rows)
    png = os.path.join(args.out, "oracle.png")
    render_abstraction_figure(png, [(h, "oracle", float(acc)) for h, _, acc in rows])
    return [out, png]


# ---------------------------------------------------------------------------
# parser and entry
# ---------------------------------------------------------------------------


_HANDLERS = {
    "build-dag": cmd_build_dag,
    "filter-dag": cmd_filter_dag,
    "align-montage": cmd_align_montage,
    "preprocess": cmd_preprocess,
    "make-splits": cmd_make_splits,
    "sample-episodes": cmd_sample_episodes,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "analyze-span": cmd_analyze_span,
    "analyze-abstraction": cmd_analyze_abstraction,
    "synth-gen": cmd_synth_gen,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heeg", description="hierarchy-aware episodic EEG evaluation"
    )
    subs = parser.add_subparsers(dest="command", required=True)

    def sub(name: str, **kw) -> argparse.ArgumentParser:
        p = subs.add_parser(name, **kw)
        p.add_argument("--config", default=None, help="run config file (INI)")
        p.add_argument("--seed", type=int, default=None, help="override run seed")
        p.add_argument("--jobs", type=int, default=None, help="worker pool width")
        p.add_argument("--out", required=True, help="output directory")
        return p

    p = sub("build-dag", help="hypernym TSV -> concept DAG JSON")
    p.add_argument("--hypernyms", required=True)

    p = sub("filter-dag", help="remove overly broad words")
    p.add_argument("--dag", required=True)

    p = sub("align-montage", help="match electrode layouts to a reference")
    p.add_argument("--reference", required=True)
    p.add_argument("--target", action="append", required=True)

    p = sub("preprocess", help="recordings + manifest -> window store")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--alignment", default=None)
    p.add_argument("--layout", default=None)
    p.add_argument("--window-samples", type=int, default=200)
    p.add_argument("--input-unit-uv", type=float, default=100.0)

    p = sub("make-splits", help="word-and-subject disjoint splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dag", required=True)
    p.add_argument("--hypernyms", default=None, help="rebuild split DAGs from records")

    p = sub("sample-episodes", help="evaluation episode suite for one split")
    p.add_argument("--dag", required=True)
    p.add_argument("--rows", required=True)
    p.add_argument("--split", required=True)

    p = sub("train", help="train an embedder")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--windows", required=True, help="directory from preprocess")
    p.add_argument("--dag", required=True)
    p.add_argument("--rows", required=True)

    p = sub("evaluate", help="score a suite with a checkpoint")
    p.add_argument("--suite", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--dag", required=True)
    p.add_argument("--ways", default=None, help="fixed ways, e.g. 2,3")
    p.add_argument("--mode", choices=MODES, default=None)

    p = sub("analyze-span", help="span-bin tables and word scatters")
    p.add_argument("--report", required=True)

    p = sub("analyze-abstraction", help="retrain and evaluate per level")
    p.add_argument("--levels", required=True, help="e.g. 0,1,2")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--train-dag", required=True)
    p.add_argument("--train-rows", required=True)
    p.add_argument("--eval-dag", required=True)
    p.add_argument("--eval-rows", required=True)

    sub("synth-gen", help="write a synthetic dataset from [synth] config")

    p = sub("oracle", help="exact Bayes ceiling on synthetic data")
    p.add_argument("--levels", default="0")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--ways", default=None)

    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    return with_run_overrides(cfg, seed=args.seed, jobs=args.jobs)


def _write_metadata(args, cfg: RunConfig, argv: list[str], outputs: list[str]) -> None:
    snapshot = os.path.join(args.out, "config.used.cfg")
    save_config(snapshot, cfg)
    meta = {
        "command": args.command,
        "argv": argv,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "jobs": cfg.jobs,
        "outputs": sorted(os.path.relpath(p, args.out) for p in outputs),
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    with open(os.path.join(args.out, "run_metadata.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        os.makedirs(args.out, exist_ok=True)
        outputs = _HANDLERS[args.command](args, cfg)
        _write_metadata(args, cfg, argv, outputs)
    except ValidationError as exc:
        return _fail(1, exc)
    except (DataError, OSError) as exc:
        return _fail(2, exc)
    except NumericError as exc:
        return _fail(3, exc)
    return 0


def _fail(code: int, exc: Exception) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
