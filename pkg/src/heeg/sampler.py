"""Episode sampling over concept nodes, and meta-split assembly.

An episode is anchored at an internal concept node: its classes are
(up to) 10 leaves of the node's span, query shots are capped at half
of the scarcest class, and support shots follow a softmax over
log-class-size with a per-class imbalance exponent. Support and query
draws come from disjoint per-class reservoirs fixed once per pool, so
support and query sets are disjoint within and across episodes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ValidationError
from .hierarchy import (
    DEFAULT_EXCLUDED_NODES,
    DEFAULT_MIN_SPAN,
    ConceptDag,
    eligible_nodes,
    rebuild_for_split,
    restrict_to_words,
)
from .preprocess import ManifestRow

log = logging.getLogger(__name__)

QUERY_CAP = 10  # per-class query shots never exceed this
SPLIT_NAMES = ("meta-train", "meta-validation", "meta-test")

_alpha_interval_logged = False


@dataclass(frozen=True)
class SamplerConfig:
    """Episode-sampling knobs; defaults match the reference setup."""

    min_span: int = DEFAULT_MIN_SPAN
    way_cap: int = 10
    support_cap: int = 100
    alpha_low: float = math.log(0.5)
    alpha_high: float = math.log(2.0)
    i_val: int = 5
    i_test: int = 10
    excluded_nodes: tuple[str, ...] = DEFAULT_EXCLUDED_NODES
    # "per_episode": query shots from the episode's classes (default);
    # "global": one value from the whole pool, shared by all episodes.
    query_shots_mode: str = "per_episode"

    def __post_init__(self) -> None:
        if self.query_shots_mode not in ("per_episode", "global"):
            raise ValidationError(
                f"query_shots_mode {self.query_shots_mode!r} unknown"
            )
        if not self.alpha_low < self.alpha_high:
            raise ValidationError("alpha_low must be below alpha_high")


def derive_seed(*parts: object) -> int:
    """Stable 64-bit seed from arbitrary key parts (order-sensitive)."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class NodeUnsampleable(DataError):
    """Typed outcome for nodes whose pool cannot host an episode."""

    def __init__(self, node: str, reason: str):
        super().__init__(f"node {node!r} unsampleable: {reason}")
        self.node = node
        self.reason = reason


@dataclass
class ClassPool:
    """Per-class sample ids plus the support/query reservoir partition.

    The partition is fixed at construction from ``partition_seed``: each
    class's sorted ids are shuffled once, the first floor(n/2) form the
    query reservoir, the rest the support reservoir. floor(n/2) covers
    every feasible per-episode query-shot count.
    """

    classes: dict[str, tuple[str, ...]]
    partition_seed: int = 0

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for c in sorted(self.classes):
            ids = tuple(sorted(self.classes[c]))
            if not ids:
                raise DataError(f"class {c!r} has no samples")
            dup = seen.intersection(ids)
            if dup:
                raise DataError(f"sample id {next(iter(dup))!r} in several classes")
            seen.update(ids)
            self.classes[c] = ids
        self._query_res: dict[str, tuple[str, ...]] = {}
        self._support_res: dict[str, tuple[str, ...]] = {}
        for c in sorted(self.classes):
            ids = list(self.classes[c])
            rng = np.random.default_rng(derive_seed(self.partition_seed, "part", c))
            rng.shuffle(ids)
            half = len(ids) // 2
            self._query_res[c] = tuple(ids[:half])
            self._support_res[c] = tuple(ids[half:])

    def size(self, c: str) -> int:
        return len(self.classes[c])

    def query_reservoir(self, c: str) -> tuple[str, ...]:
        return self._query_res[c]

    def support_reservoir(self, c: str) -> tuple[str, ...]:
        return self._support_res[c]

    def class_ids(self) -> list[str]:
        return sorted(self.classes)

    def n_samples(self) -> int:
        return sum(len(v) for v in self.classes.values())

    def relabel(self, mapping: dict[str, str]) -> "ClassPool":
        """Pool whose classes are unions under a leaf -> class mapping."""
        merged: dict[str, list[str]] = {}
        for c, ids in self.classes.items():
            merged.setdefault(mapping.get(c, c), []).extend(ids)
        return ClassPool(
            classes={c: tuple(sorted(v)) for c, v in merged.items()},
            partition_seed=self.partition_seed,
        )


@dataclass
class Episode:
    node: str
    classes: tuple[str, ...]
    support: tuple[tuple[str, str], ...]  # (sample_id, class)
    query: tuple[tuple[str, str], ...]
    seed: int
    k_q: int
    shots: dict[str, int]

    def validate(self) -> None:
        support_ids = {sid for sid, _ in self.support}
        query_ids = {sid for sid, _ in self.query}
        if support_ids & query_ids:
            raise DataError("support and query overlap")
        if not 2 <= len(self.classes) <= 10:
            raise DataError(f"episode has {len(self.classes)} classes")
        per_q = {c: 0 for c in self.classes}
        for _, c in self.query:
            per_q[c] += 1
        if any(v != self.k_q for v in per_q.values()):
            raise DataError("query counts differ from k_q")
        per_s = {c: 0 for c in self.classes}
        for _, c in self.support:
            per_s[c] += 1
        for c in self.classes:
            if per_s[c] != self.shots[c] or per_s[c] < 1:
                raise DataError(f"support count for {c!r} inconsistent")


@dataclass
class EpisodeSuite:
    episodes: list[Episode]
    split: str
    instances_per_node: int
    rejections: list[tuple[str, int, str]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# the episode law
# ---------------------------------------------------------------------------


def sample_classes(
    dag: ConceptDag,
    node: str,
    rng: np.random.Generator,
    way_cap: int = 10,
    min_span: int = DEFAULT_MIN_SPAN,
) -> tuple[str, ...]:
    """Uniform way_cap-subset of the node's span, or the whole small span."""
    span = sorted(dag.span(node))
    if dag.kind.get(node) != "internal" or len(span) < min_span:
        raise ValidationError(f"node {node!r} is not eligible for sampling")
    if len(span) <= way_cap:
        return tuple(span)
    picked = rng.choice(len(span), size=way_cap, replace=False)
    return tuple(sorted(span[i] for i in picked))


def compute_query_shots(pool: ClassPool, classes: tuple[str, ...]) -> int:
    """Query shots per class: min(10, floor(|S(c)|/2) over classes)."""
    missing = [c for c in classes if c not in pool.classes]
    if missing:
        raise DataError(f"class {missing[0]!r} missing from pool")
    return min(QUERY_CAP, min(pool.size(c) // 2 for c in classes))


def global_query_shots(pool: ClassPool) -> int:
    """Pool-wide constant query-shot count (alternative reading)."""
    return min(QUERY_CAP, min(pool.size(c) // 2 for c in pool.class_ids()))


def compute_support_size(
    pool: ClassPool,
    classes: tuple[str, ...],
    k_q: int,
    beta: float,
    support_cap: int = 100,
) -> int:
    """Total support budget: min(cap, sum_c ceil(beta*min(cap, |S(c)|-k_q)))."""
    if not 0 < beta <= 1:
        raise ValidationError(f"beta {beta} outside (0, 1]")
    total = 0
    for c in classes:
        avail = pool.size(c) - k_q
        if avail <= 0:
            raise NodeUnsampleable(
                "?", f"class {c!r} has no samples left for support"
            )
        total += math.ceil(beta * min(support_cap, avail))
    return min(support_cap, total)


def compute_support_shots(
    pool: ClassPool,
    classes: tuple[str, ...],
    k_q: int,
    d_sup: int,
    rng: np.random.Generator,
    alpha_low: float = math.log(0.5),
    alpha_high: float = math.log(2.0),
) -> dict[str, int]:
    """Per-class support shots from a size-weighted softmax.

    alpha_c ~ U[alpha_low, alpha_high) perturbs log|S(c)| before the
    softmax; the +1 compensates the floor so every class gets a shot.
    """
    if d_sup < len(classes):
        raise ValidationError(f"support budget {d_sup} below way {len(classes)}")
    alphas = {c: float(rng.uniform(alpha_low, alpha_high)) for c in classes}
    weights = np.array([math.exp(alphas[c] + math.log(pool.size(c))) for c in classes])
    ratios = weights / weights.sum()
    shots = {}
    for c, r in zip(classes, ratios):
        shots[c] = min(int(r * (d_sup - len(classes))) + 1, pool.size(c) - k_q)
    return shots


def _log_alpha_interval(cfg: SamplerConfig) -> None:
    global _alpha_interval_logged
    if not _alpha_interval_logged:
        log.info(
            "class-imbalance exponent interval: [%.6f, %.6f) "
            "(uniform in log space, i.e. [log 0.5, log 2) by default)",
            cfg.alpha_low,
            cfg.alpha_high,
        )
        _alpha_interval_logged = True


def sample_episode(
    dag: ConceptDag,
    pool: ClassPool,
    node: str,
    seed: int,
    cfg: SamplerConfig = SamplerConfig(),
) -> Episode:
    """Draw one episode at ``node``, fully determined by ``seed``.

    RNG consumption order: classes, beta, per-class alphas, per-class
    query draws, per-class support draws. Query is drawn first from the
    query reservoirs; support comes from the support reservoirs, so
    support and query never share a sample id, within or across
    episodes on this pool.
    """
    _log_alpha_interval(cfg)
    uncovered = sorted(set(dag.span(node)) - set(pool.classes))
    if uncovered:
        raise DataError(f"pool does not cover span of {node!r}: {uncovered[:5]}")
    rng = np.random.default_rng(seed)
    classes = sample_classes(dag, node, rng, cfg.way_cap, cfg.min_span)

    if cfg.query_shots_mode == "global":
        k_q = global_query_shots(pool)
    else:
        k_q = compute_query_shots(pool, classes)
    if k_q == 0:
        raise NodeUnsampleable(node, "scarcest class leaves no query shots")

    beta = 1.0 - float(rng.random())  # uniform on (0, 1]
    try:
        d_sup = compute_support_size(pool, classes, k_q, beta, cfg.support_cap)
    except NodeUnsampleable as exc:
        raise NodeUnsampleable(node, exc.reason) from None
    shots_wanted = compute_support_shots(
        pool, classes, k_q, d_sup, rng, cfg.alpha_low, cfg.alpha_high
    )

    query: list[tuple[str, str]] = []
    for c in classes:
        res = pool.query_reservoir(c)
        if len(res) < k_q:
            raise NodeUnsampleable(
                node, f"query reservoir of {c!r} smaller than k_q"
            )
        picked = rng.choice(len(res), size=k_q, replace=False)
        query.extend((res[i], c) for i in picked)

    support: list[tuple[str, str]] = []
    shots: dict[str, int] = {}
    for c in classes:
        res = pool.support_reservoir(c)
        k_s = min(shots_wanted[c], len(res))
        if k_s < 1:
            raise NodeUnsampleable(node, f"support reservoir of {c!r} empty")
        picked = rng.choice(len(res), size=k_s, replace=False)
        support.extend((res[i], c) for i in picked)
        shots[c] = k_s

    episode = Episode(
        node=node,
        classes=classes,
        support=tuple(support),
        query=tuple(query),
        seed=seed,
        k_q=k_q,
        shots=shots,
    )
    episode.validate()
    return episode


def sample_eval_suite(
    dag: ConceptDag,
    pool: ClassPool,
    split: str,
    instances: int,
    base_seed: int,
    cfg: SamplerConfig = SamplerConfig(),
) -> EpisodeSuite:
    """I episodes per eligible node; seeds derive from (base, node, index)."""
    if instances < 1:
        raise ValidationError("instances must be >= 1")
    if split not in SPLIT_NAMES:
        raise ValidationError(f"split {split!r} not one of {SPLIT_NAMES}")
    episodes: list[Episode] = []
    rejections: list[tuple[str, int, str]] = []
    for node in eligible_nodes(dag, cfg.min_span, cfg.excluded_nodes):
        for i in range(instances):
            seed = derive_seed(base_seed, node, i)
            try:
                episodes.append(sample_episode(dag, pool, node, seed, cfg))
            except NodeUnsampleable as exc:
                rejections.append((node, i, exc.reason))
    return EpisodeSuite(
        episodes=episodes,
        split=split,
        instances_per_node=instances,
        rejections=rejections,
    )


def training_episode(
    dag: ConceptDag,
    pool: ClassPool,
    base_seed: int,
    index: int,
    cfg: SamplerConfig = SamplerConfig(),
) -> Episode:
    """Fresh training episode: node uniform over eligible, seeded by index."""
    nodes = eligible_nodes(dag, cfg.min_span, cfg.excluded_nodes)
    if not nodes:
        raise DataError("no eligible nodes to train on")
    rng = np.random.default_rng(derive_seed(base_seed, "train", index))
    order = rng.permutation(len(nodes))
    reasons = []
    for j in order:
        node = nodes[j]
        try:
            return sample_episode(
                dag, pool, node, derive_seed(base_seed, "train", index, node), cfg
            )
        except NodeUnsampleable as exc:
            reasons.append(exc.reason)
    raise DataError(f"no node is sampleable: {reasons[:3]}")


def fixed_way_episode(episode: Episode, way: int) -> Episode | None:
    """Sub-episode with exactly ``way`` classes, or None if too narrow.

    Classes are sub-sampled uniformly with a stream derived from the
    episode's own seed, so fixed-way tables are reproducible from the
    suite file alone.
    """
    if way < 2:
        raise ValidationError("way must be >= 2")
    if len(episode.classes) < way:
        return None
    if len(episode.classes) == way:
        return episode
    rng = np.random.default_rng(derive_seed(episode.seed, "way", way))
    picked = rng.choice(len(episode.classes), size=way, replace=False)
    chosen = tuple(sorted(episode.classes[i] for i in picked))
    keep = set(chosen)
    sub = Episode(
        node=episode.node,
        classes=chosen,
        support=tuple((s, c) for s, c in episode.support if c in keep),
        query=tuple((s, c) for s, c in episode.query if c in keep),
        seed=episode.seed,
        k_q=episode.k_q,
        shots={c: episode.shots[c] for c in chosen},
    )
    sub.validate()
    return sub


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    """Split rules: occurrence threshold and the eval-source session group."""

    min_occurrences: int = 23
    val_fraction: float = 0.2
    source_session_prefix: str = ""


@dataclass
class Split:
    name: str
    dag: ConceptDag
    pool: ClassPool
    rows: list[ManifestRow]

    @property
    def words(self) -> set[str]:
        return set(self.pool.classes)

    @property
    def subjects(self) -> set[str]:
        return {r.subject for r in self.rows}


@dataclass
class Splits:
    train: Split
    val: Split
    test: Split
    val_words: frozenset[str]
    test_words: frozenset[str]
    val_subjects: frozenset[str]
    test_subjects: frozenset[str]

    def __iter__(self):
        return iter((self.train, self.val, self.test))


def _partition(items: list[str], rng: np.random.Generator, val_fraction: float):
    items = sorted(items)
    order = rng.permutation(len(items))
    n_val = int(round(val_fraction * len(items)))
    n_val = min(max(n_val, 1), len(items) - 1) if len(items) >= 2 else n_val
    val = frozenset(items[i] for i in order[:n_val])
    test = frozenset(items[i] for i in order[n_val:])
    return val, test


def make_splits(
    manifest: list[ManifestRow],
    dag: ConceptDag,
    spec: SplitSpec,
    rng_seed: int,
    records=None,
    drop_nodes: tuple[str, ...] = (),
) -> Splits:
    """Partition samples into meta-train / meta-validation / meta-test.

    (word, subject) pairs with >= min_occurrences rows inside the source
    session group become evaluation pairs; their words and subjects are
    split between val and test by a seeded draw. Meta-train keeps only
    rows whose word AND subject appear in no evaluation pair, so the
    word sets of train vs (val u test) and the subject sets of val vs
    test are disjoint. Pairs whose word and subject land in different
    eval splits are dropped. Per-split DAGs are rebuilt from ``records``
    when given (re-applying ``drop_nodes``), else restricted from ``dag``.
    """
    leaves = set(dag.leaf_words())
    bad = sorted({r.word for r in manifest} - leaves)
    if bad:
        raise DataError(f"manifest words not in DAG: {bad[:5]}")

    counts: dict[tuple[str, str], int] = {}
    for row in manifest:
        if row.session.startswith(spec.source_session_prefix):
            counts[(row.word, row.subject)] = counts.get((row.word, row.subject), 0) + 1
    pairs = {k for k, n in counts.items() if n >= spec.min_occurrences}
    eval_words = sorted({w for w, _ in pairs})
    eval_subjects = sorted({s for _, s in pairs})
    if not eval_words:
        raise DataError(
            f"no (word, subject) pair reaches {spec.min_occurrences} occurrences"
        )

    rng = np.random.default_rng(rng_seed)
    val_words, test_words = _partition(eval_words, rng, spec.val_fraction)
    val_subjects, test_subjects = _partition(eval_subjects, rng, spec.val_fraction)

    rows = {name: [] for name in SPLIT_NAMES}
    eval_word_set = set(eval_words)
    eval_subject_set = set(eval_subjects)
    for row in manifest:
        key = (row.word, row.subject)
        if key in pairs:
            if row.word in val_words and row.subject in val_subjects:
                rows["meta-validation"].append(row)
            elif row.word in test_words and row.subject in test_subjects:
                rows["meta-test"].append(row)
            # mixed pairs are dropped entirely
        elif row.word not in eval_word_set and row.subject not in eval_subject_set:
            rows["meta-train"].append(row)

    splits = {}
    for name in SPLIT_NAMES:
        split_rows = rows[name]
        words = sorted({r.word for r in split_rows})
        if not words:
            raise DataError(f"split {name!r} came out empty")
        if records is not None:
            split_dag = rebuild_for_split(records, set(words), drop_nodes)
        else:
            split_dag = restrict_to_words(dag, set(words))
        classes: dict[str, list[str]] = {w: [] for w in words}
        for r in split_rows:
            classes[r.word].append(r.sample_id)
        pool = ClassPool(
            classes={w: tuple(sorted(v)) for w, v in classes.items()},
            partition_seed=derive_seed(rng_seed, "pool", name),
        )
        splits[name] = Split(name=name, dag=split_dag, pool=pool, rows=split_rows)

    return Splits(
        train=splits["meta-train"],
        val=splits["meta-validation"],
        test=splits["meta-test"],
        val_words=val_words,
        test_words=test_words,
        val_subjects=val_subjects,
        test_subjects=test_subjects,
    )


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def episode_to_dict(episode: Episode) -> dict:
    return {
        "node": episode.node,
        "seed": episode.seed,
        "classes": list(episode.classes),
        "support": [[sid, c] for sid, c in episode.support],
        "query": [[sid, c] for sid, c in episode.query],
    }


def episode_from_dict(payload: dict) -> Episode:
    try:
        classes = tuple(payload["classes"])
        support = tuple((sid, c) for sid, c in payload["support"])
        query = tuple((sid, c) for sid, c in payload["query"])
        node = payload["node"]
        seed = int(payload["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed episode JSON: {exc}") from exc
    per_q: dict[str, int] = {c: 0 for c in classes}
    for _, c in query:
        per_q[c] += 1
    shots = {c: 0 for c in classes}
    for _, c in support:
        shots[c] += 1
    k_q = min(per_q.values()) if per_q else 0
    episode = Episode(
        node=node,
        classes=classes,
        support=support,
        query=query,
        seed=seed,
        k_q=k_q,
        shots=shots,
    )
    episode.validate()
    return episode


def save_suite_jsonl(path: str, suite: EpisodeSuite) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for episode in suite.episodes:
            fh.write(json.dumps(episode_to_dict(episode), separators=(",", ":")))
            fh.write("\n")


def load_suite_jsonl(
    path: str, split: str = "meta-test", instances_per_node: int = 0
) -> EpisodeSuite:
    episodes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                episodes.append(episode_from_dict(json.loads(line)))
            except (json.JSONDecodeError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return EpisodeSuite(
        episodes=episodes, split=split, instances_per_node=instances_per_node
    )
