"""Chance-normalized metrics and the span / abstraction analyses.

Raw episode accuracies are rescaled so 0 means chance and 100 means
perfect, then aggregated per concept node (mean over episode instances)
and per suite (mean and population std over nodes). Span bins group
nodes by how many leaf words they cover; abstraction runs rerun the
whole train+eval pipeline on progressively pruned label spaces.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ValidationError
from .hierarchy import ConceptDag, LabelMap, prune_to_level
from .sampler import ClassPool

DEFAULT_SPAN_BINS: tuple[tuple[int, int], ...] = ((5, 15), (17, 36), (49, 82), (111, 119))
OVERFLOW_BIN = "overflow"


def normalized_accuracy(accuracy: float, way: int) -> float:
    """Rescale so chance maps to 0 and perfect to 100; may go negative."""
    if way < 2:
        raise ValidationError(f"way {way} must be >= 2")
    if not 0.0 <= accuracy <= 1.0:
        raise ValidationError(f"accuracy {accuracy} outside [0, 1]")
    chance = 1.0 / way
    return (accuracy - chance) / (1.0 - chance) * 100.0


@dataclass(frozen=True)
class EvalRecord:
    """One episode's score: raw accuracy plus its aggregation keys.

    ``way_label`` keys the reporting group; it defaults to the numeric
    way so fixed-way records group naturally, while variable-way suites
    can share one label (e.g. "native") without losing the true way
    used for chance correction.
    """

    node: str
    way: int
    accuracy: float
    mode: str
    span_length: int
    way_label: str = ""

    def __post_init__(self) -> None:
        if self.way < 2:
            raise ValidationError("way must be >= 2")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValidationError(f"accuracy {self.accuracy} outside [0, 1]")
        if self.span_length < 1:
            raise ValidationError("span_length must be >= 1")
        if not self.way_label:
            object.__setattr__(self, "way_label", str(self.way))

    @property
    def normalized(self) -> float:
        return normalized_accuracy(self.accuracy, self.way)


@dataclass(frozen=True)
class NodeStat:
    mode: str
    way_label: str
    node: str
    span_length: int
    instances: int
    mean: float
    std: float


@dataclass(frozen=True)
class SuiteStat:
    mode: str
    way_label: str
    nodes: int
    mean: float
    std: float


@dataclass
class EvalReport:
    per_node: list[NodeStat]
    suite: list[SuiteStat]

    def suite_mean(self, mode: str, way_label: str) -> float:
        for row in self.suite:
            if row.mode == mode and row.way_label == way_label:
                return row.mean
        raise DataError(f"no suite row for mode={mode!r} way={way_label!r}")


def _mean_std(values: list[float]) -> tuple[float, float]:
    """Population mean/std, invariant to input order, exact on constants."""
    arr = np.sort(np.asarray(values, dtype=np.float64))
    if arr[0] == arr[-1]:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std())


def aggregate(records: list[EvalRecord]) -> EvalReport:
    """Node means over instances, then suite mean +- population std over nodes."""
    if not records:
        raise DataError("no evaluation records to aggregate")
    cells: dict[tuple[str, str, str], list[EvalRecord]] = {}
    for r in records:
        cells.setdefault((r.mode, r.way_label, r.node), []).append(r)

    per_node: list[NodeStat] = []
    for (mode, way_label, node) in sorted(cells):
        group = cells[(mode, way_label, node)]
        spans = {r.span_length for r in group}
        if len(spans) != 1:
            raise DataError(f"node {node!r} reported with different span lengths")
        mean, std = _mean_std([r.normalized for r in group])
        per_node.append(
            NodeStat(
                mode=mode,
                way_label=way_label,
                node=node,
                span_length=spans.pop(),
                instances=len(group),
                mean=mean,
                std=std,
            )
        )

    suites: dict[tuple[str, str], list[float]] = {}
    for stat in per_node:
        suites.setdefault((stat.mode, stat.way_label), []).append(stat.mean)
    suite = []
    for (mode, way_label), means in sorted(suites.items()):
        mean, std = _mean_std(means)
        suite.append(
            SuiteStat(
                mode=mode, way_label=way_label, nodes=len(means), mean=mean, std=std
            )
        )
    return EvalReport(per_node=per_node, suite=suite)


# ---------------------------------------------------------------------------
# span bins
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinStat:
    mode: str
    way_label: str
    bin: str
    nodes: int
    mean: float
    std: float


@dataclass
class SpanReport:
    edges: tuple[tuple[int, int], ...]
    bins: list[BinStat]
    word_clouds: dict[tuple[str, str], list[tuple[str, int, float]]]


def _bin_label(lo: int, hi: int) -> str:
    return f"{lo}-{hi}"


def _check_edges(edges) -> tuple[tuple[int, int], ...]:
    out = []
    prev_hi = 0
    for pair in edges:
        lo, hi = int(pair[0]), int(pair[1])
        if lo < 1 or hi < lo:
            raise ValidationError(f"bin ({lo}, {hi}) malformed")
        if lo <= prev_hi:
            raise ValidationError("bins must be strictly increasing and disjoint")
        out.append((lo, hi))
        prev_hi = hi
    if not out:
        raise ValidationError("need at least one span bin")
    return tuple(out)


def span_bins_report(
    report: EvalReport, edges=DEFAULT_SPAN_BINS
) -> SpanReport:
    """Group per-node stats into span bins; build word-cloud rows.

    Every node lands in exactly one bin: the first (lo, hi) pair with
    lo <= span <= hi, else the overflow bucket. Word-cloud rows are one
    per node and reporting group: (head word of the node id, span
    length, mean normalized accuracy).
    """
    edges = _check_edges(edges)
    labels = [_bin_label(lo, hi) for lo, hi in edges]

    def place(span: int) -> str:
        for (lo, hi), label in zip(edges, labels):
            if lo <= span <= hi:
                return label
        return OVERFLOW_BIN

    grouped: dict[tuple[str, str, str], list[float]] = {}
    clouds: dict[tuple[str, str], list[tuple[str, int, float]]] = {}
    for stat in report.per_node:
        label = place(stat.span_length)
        grouped.setdefault((stat.mode, stat.way_label, label), []).append(stat.mean)
        head = stat.node.split(".")[0]
        clouds.setdefault((stat.mode, stat.way_label), []).append(
            (head, stat.span_length, stat.mean)
        )

    order = {label: i for i, label in enumerate(labels + [OVERFLOW_BIN])}
    bins = []
    for key in sorted(grouped, key=lambda k: (k[0], k[1], order[k[2]])):
        mode, way_label, label = key
        means = grouped[key]
        mean, std = _mean_std(means)
        bins.append(
            BinStat(
                mode=mode,
                way_label=way_label,
                bin=label,
                nodes=len(means),
                mean=mean,
                std=std,
            )
        )
    return SpanReport(edges=edges, bins=bins, word_clouds=clouds)


# ---------------------------------------------------------------------------
# abstraction levels
# ---------------------------------------------------------------------------


@dataclass
class AbstractionLevel:
    h: int
    feasible: bool
    reason: str = ""
    label_map: LabelMap | None = None
    records: list[EvalRecord] = field(default_factory=list)
    report: EvalReport | None = None
    class_overlap: float | None = None


def abstraction_run(
    dag: ConceptDag,
    pool: ClassPool,
    levels: list[int],
    pipeline,
    train_dag: ConceptDag | None = None,
    train_pool: ClassPool | None = None,
) -> list[AbstractionLevel]:
    """Rerun the pipeline on pruned label spaces, one entry per level.

    ``pipeline(level_dag, level_pool, h, train_level_dag,
    train_level_pool) -> list[EvalRecord]`` owns training and episodic
    evaluation. Sample pools are remapped through each level's label
    map; infeasible levels are skipped with a reason. When a training
    side is supplied, the fraction of evaluation classes also present
    in the training classes is reported per level.
    """
    if (train_dag is None) != (train_pool is None):
        raise ValidationError("supply both train_dag and train_pool or neither")
    out: list[AbstractionLevel] = []
    for h in levels:
        if h < 0:
            out.append(AbstractionLevel(h=h, feasible=False, reason="negative level"))
            continue
        try:
            level_dag, label_map = prune_to_level(dag, h)
        except ValidationError as exc:
            out.append(AbstractionLevel(h=h, feasible=False, reason=str(exc)))
            continue
        level_pool = pool.relabel(label_map.classes)

        train_level_dag = train_level_pool = None
        overlap = None
        if train_dag is not None:
            try:
                train_level_dag, train_map = prune_to_level(train_dag, h)
                train_level_pool = train_pool.relabel(train_map.classes)
                eval_classes = set(level_pool.classes)
                overlap = len(eval_classes & set(train_level_pool.classes)) / len(
                    eval_classes
                )
            except ValidationError:
                train_level_dag = train_level_pool = None

        records = pipeline(level_dag, level_pool, h, train_level_dag, train_level_pool)
        out.append(
            AbstractionLevel(
                h=h,
                feasible=True,
                label_map=label_map,
                records=list(records),
                report=aggregate(list(records)) if records else None,
                class_overlap=overlap,
            )
        )
    return out


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def save_node_csv(path: str, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["mode", "way", "node", "span_length", "instances",
             "mean_normalized_accuracy", "std_normalized_accuracy"]
        )
        for s in report.per_node:
            writer.writerow(
                [s.mode, s.way_label, s.node, s.span_length, s.instances,
                 repr(s.mean), repr(s.std)]
            )


def save_suite_csv(path: str, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["mode", "way", "nodes", "mean_normalized_accuracy",
             "std_normalized_accuracy"]
        )
        for s in report.suite:
            writer.writerow([s.mode, s.way_label, s.nodes, repr(s.mean), repr(s.std)])


def save_span_bins_csv(path: str, span: SpanReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["mode", "way", "bin", "nodes", "mean_normalized_accuracy",
             "std_normalized_accuracy"]
        )
        for s in span.bins:
            writer.writerow([s.mode, s.way_label, s.bin, s.nodes, repr(s.mean), repr(s.std)])


def save_word_cloud_csv(path: str, rows: list[tuple[str, int, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["concept", "span_length", "normalized_accuracy"])
        for concept, span_length, acc in rows:
            writer.writerow([concept, span_length, repr(float(acc))])


def report_to_json(report: EvalReport) -> dict:
    return {
        "per_node": [vars(s) for s in report.per_node],
        "suite": [vars(s) for s in report.suite],
    }


def save_report_json(path: str, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_json(report), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_report_json(path: str) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        return EvalReport(
            per_node=[NodeStat(**row) for row in payload["per_node"]],
            suite=[SuiteStat(**row) for row in payload["suite"]],
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed report JSON: {exc}") from exc
