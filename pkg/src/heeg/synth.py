"""Hierarchical-Gaussian synthetic data with an exact Bayes oracle.

Class means diffuse down a balanced concept tree (child mean = parent
mean plus per-level Gaussian drift), samples add white observation
noise. Semantic proximity therefore equals mean proximity, which turns
qualitative claims about concept breadth and abstraction into
statements the exact Gaussian Bayes classifier can adjudicate. The
generator also writes ordinary hypernym/manifest/recording files so
the full ingestion pipeline can run on synthetic data unmodified.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .analysis import EvalRecord, aggregate
from .errors import ValidationError
from .hierarchy import (
    ConceptDag,
    HypernymRecord,
    build_dag,
    prune_to_level,
    save_hypernym_file,
)
from .preprocess import EegRecording, ManifestRow, save_heeg1, save_manifest
from .sampler import (
    ClassPool,
    SamplerConfig,
    derive_seed,
    eligible_nodes,
    fixed_way_episode,
    sample_eval_suite,
)

SYNTH_ROOT = "entity.n.01"
SYNTH_SESSION = "ses-synth-01"
SYNTH_RATE = 200


@dataclass(frozen=True)
class SynthSpec:
    """Balanced tree: `depth` concept levels under the root, then words.

    Level k holds branching^k concept nodes; each deepest concept has
    `branching` words, so there are branching^(depth+1) words and the
    drift walk from root to a word mean takes depth+1 steps.
    """

    branching: int = 3
    depth: int = 4
    sigma_level: float = 1.0
    sigma_obs: float = 3.0
    samples_per_leaf: int = 24
    n_channels: int = 4
    window_samples: int = 8
    n_subjects: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.branching < 2 or self.depth < 1:
            raise ValidationError("need branching >= 2 and depth >= 1")
        if self.sigma_level < 0 or self.sigma_obs < 0:
            raise ValidationError("noise scales must be non-negative")
        if self.samples_per_leaf < 1 or self.n_subjects < 1:
            raise ValidationError("need at least one sample and one subject")
        if self.n_channels < 2 or self.window_samples < 1:
            raise ValidationError("window dims too small")

    @property
    def n_features(self) -> int:
        return self.n_channels * self.window_samples

    @property
    def n_words(self) -> int:
        return self.branching ** (self.depth + 1)


@dataclass
class SynthData:
    spec: SynthSpec
    records: list[HypernymRecord]
    dag: ConceptDag
    pool: ClassPool
    windows: dict[str, np.ndarray]
    means: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def manifest_rows(self) -> list[ManifestRow]:
        """Subject assignment with deliberately uneven occupancy.

        Even-indexed words are concentrated on one subject from the
        first half of the roster (a rich word/subject pair, eligible for
        evaluation splits); odd-indexed words are spread thinly over the
        second half. With >= 2 subjects this gives occurrence-threshold
        splitters both rich and thin pairs to work with. Onsets stack
        each subject's windows back to back in time.
        """
        spec = self.spec
        n_eval = max(1, (spec.n_subjects + 1) // 2)
        eval_subjects = [f"sub-{i:02d}" for i in range(n_eval)]
        train_subjects = [f"sub-{i:02d}" for i in range(n_eval, spec.n_subjects)]
        counters: dict[str, int] = {}
        rows: list[ManifestRow] = []
        for w, word in enumerate(sorted(self.pool.classes)):
            for j, sid in enumerate(self.pool.classes[word]):
                if w % 2 == 0 or not train_subjects:
                    subject = eval_subjects[(w // 2) % len(eval_subjects)]
                else:
                    subject = train_subjects[j % len(train_subjects)]
                k = counters.get(subject, 0)
                counters[subject] = k + 1
                rows.append(
                    ManifestRow(
                        sample_id=sid,
                        word=word,
                        subject=subject,
                        session=SYNTH_SESSION,
                        recording_uri=f"{subject}.heeg1",
                        onset_seconds=k * (spec.window_samples / SYNTH_RATE),
                    )
                )
        return rows


def _node_id(level: int, index: int) -> str:
    return f"lv{level}_{index:04d}.n.01"


def gen_hierarchy_gaussians(spec: SynthSpec) -> SynthData:
    """Build the tree, diffuse means down it, and draw per-word samples.

    Every mean and sample stream is seeded from (spec.seed, node), so
    generation is deterministic and order-independent.
    """
    records: list[HypernymRecord] = []
    means: dict[str, np.ndarray] = {
        SYNTH_ROOT: np.zeros(spec.n_features, dtype=np.float64)
    }

    def drift(node: str, parent_mean: np.ndarray) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(spec.seed, "mean", node))
        return parent_mean + rng.normal(0.0, spec.sigma_level, size=spec.n_features)

    frontier: list[tuple[str, tuple[str, ...]]] = [(SYNTH_ROOT, (SYNTH_ROOT,))]
    word_index = 0
    for level in range(1, spec.depth + 1):
        nxt: list[tuple[str, tuple[str, ...]]] = []
        for i, (parent, path) in enumerate(frontier):
            for j in range(spec.branching):
                node = _node_id(level, i * spec.branching + j)
                means[node] = drift(node, means[parent])
                nxt.append((node, path + (node,)))
        frontier = nxt

    classes: dict[str, tuple[str, ...]] = {}
    windows: dict[str, np.ndarray] = {}
    for parent, path in frontier:
        for _ in range(spec.branching):
            word = f"W{word_index:04d}"
            word_index += 1
            records.append(HypernymRecord(word=word, synset=parent, path=path))
            means[word] = drift(word, means[parent])
            rng = np.random.default_rng(derive_seed(spec.seed, "samples", word))
            ids = []
            for k in range(spec.samples_per_leaf):
                sid = f"{word.lower()}-{k:03d}"
                noise = rng.normal(0.0, spec.sigma_obs, size=spec.n_features)
                windows[sid] = (means[word] + noise).reshape(
                    spec.n_channels, spec.window_samples
                )
                ids.append(sid)
            classes[word] = tuple(ids)

    dag = build_dag(records)
    pool = ClassPool(classes=classes, partition_seed=derive_seed(spec.seed, "pool"))
    return SynthData(
        spec=spec, records=records, dag=dag, pool=pool, windows=windows, means=means
    )


def write_synth_dataset(spec: SynthSpec, out_dir: str) -> SynthData:
    """Emit hypernym TSV, per-subject recordings, and the manifest CSV.

    Recordings are written at the pipeline target rate with windows laid
    back to back, so preprocessing resamples trivially and extraction
    recovers one window per manifest row.
    """
    data = gen_hierarchy_gaussians(spec)
    os.makedirs(out_dir, exist_ok=True)
    save_hypernym_file(os.path.join(out_dir, "hypernyms.tsv"), data.records)

    rows = data.manifest_rows()
    save_manifest(os.path.join(out_dir, "manifest.csv"), rows)

    by_subject: dict[str, list[ManifestRow]] = {}
    for row in rows:
        by_subject.setdefault(row.subject, []).append(row)
    labels = tuple(f"ch{c:03d}" for c in range(spec.n_channels))
    for subject, subject_rows in sorted(by_subject.items()):
        subject_rows = sorted(subject_rows, key=lambda r: r.onset_seconds)
        chunks = [data.windows[r.sample_id] for r in subject_rows]
        recording = EegRecording(
            data=np.concatenate(chunks, axis=1), rate=SYNTH_RATE, channel_labels=labels
        )
        save_heeg1(os.path.join(out_dir, f"{subject}.heeg1"), recording)
    return data


# ---------------------------------------------------------------------------
# exact Bayes oracle
# ---------------------------------------------------------------------------


def _class_members(data: SynthData, label_map) -> dict[str, list[str]]:
    members: dict[str, list[str]] = {}
    for word, cls in label_map.classes.items():
        members.setdefault(cls, []).append(word)
    return members


def _score_queries(
    data: SynthData,
    classes: tuple[str, ...],
    members: dict[str, list[str]],
    query: tuple[tuple[str, str], ...],
) -> float:
    """Fraction of query samples the exact mixture classifier gets right.

    A merged class is an equal-weight mixture of its member words'
    Gaussians (samples per word are equal by construction); with zero
    observation noise the rule degenerates to nearest member mean.
    """
    sigma2 = data.spec.sigma_obs ** 2
    mean_rows = {
        c: np.stack([data.means[w] for w in members[c]]) for c in classes
    }
    hits = 0
    index = {c: i for i, c in enumerate(classes)}
    for sid, true_class in query:
        x = data.windows[sid].ravel()
        scores = np.empty(len(classes))
        for c in classes:
            d2 = ((mean_rows[c] - x) ** 2).sum(axis=1)
            if sigma2 > 0:
                z = -d2 / (2.0 * sigma2) - math.log(len(members[c]))
                m = z.max()
                scores[index[c]] = m + math.log(np.exp(z - m).sum())
            else:
                scores[index[c]] = -d2.min()
        if classes[int(scores.argmax())] == true_class:
            hits += 1
    return hits / len(query)


def bayes_oracle_records(
    data: SynthData,
    h: int = 0,
    ways: tuple[int, ...] | None = None,
    trials: int = 200,
    base_seed: int = 0,
    cfg: SamplerConfig = SamplerConfig(),
) -> list[EvalRecord]:
    """Score sampler-generated episodes at abstraction level h.

    ``ways=None`` keeps each episode's native way (grouped under the
    "native" label); otherwise fixed-way sub-episodes are derived and
    episodes too narrow for a requested way are skipped.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    level_dag, label_map = prune_to_level(data.dag, h)
    level_pool = data.pool.relabel(label_map.classes)
    members = _class_members(data, label_map)

    nodes = eligible_nodes(level_dag, cfg.min_span, cfg.excluded_nodes)
    if not nodes:
        raise ValidationError(f"no eligible nodes at level {h}")
    instances = max(1, math.ceil(trials / len(nodes)))
    suite = sample_eval_suite(
        level_dag, level_pool, "meta-test", instances, derive_seed(base_seed, "oracle", h), cfg
    )
    episodes = suite.episodes[:trials]

    records: list[EvalRecord] = []
    for ep in episodes:
        subs = (
            [(ep, "native")]
            if ways is None
            else [(fixed_way_episode(ep, w), str(w)) for w in ways]
        )
        for sub, label in subs:
            if sub is None:
                continue
            acc = _score_queries(data, sub.classes, members, sub.query)
            records.append(
                EvalRecord(
                    node=sub.node,
                    way=len(sub.classes),
                    accuracy=acc,
                    mode="oracle",
                    span_length=level_dag.span_length(sub.node),
                    way_label=label,
                )
            )
    return records


def bayes_oracle_accuracy(
    data: SynthData | SynthSpec,
    h: int = 0,
    ways: tuple[int, ...] | None = None,
    trials: int = 200,
    base_seed: int = 0,
    cfg: SamplerConfig = SamplerConfig(),
) -> float:
    """Suite-level normalized accuracy of the exact Bayes classifier.

    With several fixed ways the per-way suite means are averaged.
    """
    if isinstance(data, SynthSpec):
        data = gen_hierarchy_gaussians(data)
    records = bayes_oracle_records(data, h, ways, trials, base_seed, cfg)
    report = aggregate(records)
    return float(np.mean([row.mean for row in report.suite]))
