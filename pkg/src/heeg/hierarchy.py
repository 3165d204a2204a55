"""Concept DAG construction, filtering, splitting and level pruning.

A concept DAG is built from hypernym paths: leaves are uppercase vocabulary
words, internal nodes are concept (synset-style) ids, and there is a single
root. The span of a node is the set of leaf words reachable from it; span
length drives both the broad-word filter and episode eligibility.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

from .errors import DataError, ValidationError

log = logging.getLogger(__name__)

DEFAULT_BROAD_WORD_THRESHOLD = 45
# Near-root concepts whose episodes would be degenerate; removing them also
# drops the handful of words only reachable through them.
DEFAULT_EXCLUDED_NODES = ("whole.n.02", "object.n.01", "physical_entity.n.01")
DEFAULT_MIN_SPAN = 5

_WORD_RE = re.compile(r"[A-Z][A-Z0-9_]*\Z")


@dataclass(frozen=True)
class HypernymRecord:
    """One hypernym path for a word.

    ``path`` lists concept ids from the root down to ``synset`` inclusive;
    ``synset`` is the word's parent concept. A word may carry several
    records (several senses or several paths of one sense).
    """

    word: str
    synset: str
    path: tuple[str, ...]

    def __post_init__(self) -> None:
        if not _WORD_RE.match(self.word):
            raise DataError(f"word {self.word!r} is not an uppercase token")
        if not self.path:
            raise DataError(f"record for {self.word!r} has an empty path")
        if self.path[-1] != self.synset:
            raise DataError(
                f"record for {self.word!r}: path must end at its synset "
                f"({self.path[-1]!r} != {self.synset!r})"
            )

    @property
    def chain(self) -> tuple[str, ...]:
        """Root-to-leaf node chain induced by this record."""
        return self.path + (self.word,)


@dataclass
class ConceptDag:
    """Rooted DAG of concepts with word leaves.

    ``children`` holds sorted child tuples for every node (empty for
    leaves). ``primary_parent`` remembers, for every non-root node, the
    parent on the first record chain that introduced it; pruning uses it
    to remap deleted nodes onto surviving ancestors.
    """

    root: str
    children: dict[str, tuple[str, ...]]
    kind: dict[str, str]  # id -> "internal" | "leaf"
    primary_parent: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._parents: dict[str, tuple[str, ...]] | None = None
        self._spans: dict[str, frozenset[str]] | None = None

    # -- basic views ------------------------------------------------------

    def nodes(self) -> list[str]:
        return sorted(self.children)

    def leaf_words(self) -> list[str]:
        return sorted(n for n, k in self.kind.items() if k == "leaf")

    def structural_leaves(self) -> list[str]:
        """Childless nodes; equals leaf_words() on freshly built DAGs."""
        return sorted(n for n, cs in self.children.items() if not cs)

    def internal_nodes(self) -> list[str]:
        return sorted(n for n, k in self.kind.items() if k == "internal")

    def parents(self, node: str) -> tuple[str, ...]:
        if self._parents is None:
            acc: dict[str, list[str]] = {n: [] for n in self.children}
            for parent, kids in self.children.items():
                for kid in kids:
                    acc[kid].append(parent)
            self._parents = {n: tuple(sorted(ps)) for n, ps in acc.items()}
        return self._parents[node]

    def edges(self) -> list[tuple[str, str]]:
        out = [(p, c) for p, kids in self.children.items() for c in kids]
        out.sort()
        return out

    def ancestors(self, node: str) -> set[str]:
        seen: set[str] = set()
        frontier = [node]
        while frontier:
            cur = frontier.pop()
            for p in self.parents(cur):
                if p not in seen:
                    seen.add(p)
                    frontier.append(p)
        return seen

    # -- validation -------------------------------------------------------

    def validate(self, leaves_are_words: bool = True) -> None:
        """Check structural invariants; raise DataError on violation."""
        if self.root not in self.children:
            raise DataError(f"root {self.root!r} is not a node")
        order = self.topological_order()
        if len(order) != len(self.children):
            raise DataError("cycle detected in concept DAG")
        reachable = {self.root}
        for node in order:
            if node in reachable:
                reachable.update(self.children[node])
        if len(reachable) != len(self.children):
            stranded = sorted(set(self.children) - reachable)[:5]
            raise DataError(f"nodes unreachable from root, e.g. {stranded}")
        for node, kids in self.children.items():
            if len(set(kids)) != len(kids):
                raise DataError(f"duplicate edges out of {node!r}")
            if self.kind[node] == "leaf" and kids:
                raise DataError(f"leaf {node!r} has children")
            if leaves_are_words and self.kind[node] == "internal" and not kids:
                raise DataError(f"internal node {node!r} has no children")

    def topological_order(self) -> list[str]:
        """Parents-before-children order (Kahn); ties by id."""
        indeg = {n: 0 for n in self.children}
        for kids in self.children.values():
            for kid in kids:
                indeg[kid] += 1
        import heapq

        ready = [n for n, d in indeg.items() if d == 0]
        heapq.heapify(ready)
        order: list[str] = []
        while ready:
            node = heapq.heappop(ready)
            order.append(node)
            for kid in self.children[node]:
                indeg[kid] -= 1
                if indeg[kid] == 0:
                    heapq.heappush(ready, kid)
        return order

    # -- spans --------------------------------------------------------------

    def span(self, node: str) -> frozenset[str]:
        """Childless nodes reachable from node (a childless node spans itself).

        On freshly built DAGs these are exactly the leaf words; on
        level-pruned DAGs they are the surviving class nodes.
        """
        if self._spans is None:
            spans: dict[str, frozenset[str]] = {}
            for n in reversed(self.topological_order()):
                if not self.children[n]:
                    spans[n] = frozenset((n,))
                else:
                    acc: set[str] = set()
                    for kid in self.children[n]:
                        acc.update(spans[kid])
                    spans[n] = frozenset(acc)
            self._spans = spans
        return self._spans[node]

    def span_length(self, node: str) -> int:
        return len(self.span(node))


# SpanIndex is the cached span view of a ConceptDag; kept as an alias so the
# concept has a name, the cache lives on the DAG itself.
SpanIndex = ConceptDag


@dataclass(frozen=True)
class LabelMap:
    """Mapping from the leaves of a DAG to their class under L-h pruning."""

    h: int
    classes: dict[str, str]

    def class_ids(self) -> list[str]:
        return sorted(set(self.classes.values()))


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def build_dag(
    records: list[HypernymRecord], words: set[str] | None = None
) -> ConceptDag:
    """Build the concept DAG from hypernym records.

    When ``words`` is given, only records for those words are used and any
    word without a record is reported as skipped (warning). All record
    paths must share one root id.
    """
    if words is not None:
        used = [r for r in records if r.word in words]
        covered = {r.word for r in used}
        skipped = sorted(words - covered)
        if skipped:
            log.warning(
                "%d words have no hypernym record and were skipped: %s",
                len(skipped),
                ", ".join(skipped[:10]) + ("..." if len(skipped) > 10 else ""),
            )
    else:
        used = list(records)
    if not used:
        raise DataError("no hypernym records to build from")

    roots = {r.path[0] for r in used}
    if len(roots) != 1:
        raise DataError(f"records declare multiple roots: {sorted(roots)}")
    root = next(iter(roots))

    children: dict[str, set[str]] = {}
    kind: dict[str, str] = {}
    primary_parent: dict[str, str] = {}

    def touch(node: str, node_kind: str) -> None:
        prev = kind.get(node)
        if prev is None:
            kind[node] = node_kind
            children.setdefault(node, set())
        elif prev != node_kind:
            raise DataError(f"id {node!r} used as both word and concept")

    for rec in used:
        chain = rec.chain
        for node in chain[:-1]:
            touch(node, "internal")
        touch(chain[-1], "leaf")
        for parent, child in zip(chain, chain[1:]):
            if child == parent:
                raise DataError(f"self-loop at {parent!r}")
            children[parent].add(child)
            primary_parent.setdefault(child, parent)

    dag = ConceptDag(
        root=root,
        children={n: tuple(sorted(cs)) for n, cs in children.items()},
        kind=kind,
        primary_parent=primary_parent,
    )
    dag.validate()
    return dag


def _restrict_to_leaves(dag: ConceptDag, keep: set[str]) -> ConceptDag:
    """Sub-DAG spanning ``keep`` leaves; empty internal nodes elided."""
    if not keep:
        raise DataError("no leaves survive the restriction")
    alive = {
        n
        for n in dag.children
        if (dag.kind[n] == "leaf" and n in keep)
        or (dag.kind[n] == "internal" and dag.span(n) & keep)
    }
    children = {
        n: tuple(c for c in dag.children[n] if c in alive)
        for n in sorted(alive)
    }
    out = ConceptDag(
        root=dag.root,
        children=children,
        kind={n: dag.kind[n] for n in alive},
        primary_parent={
            n: p for n, p in dag.primary_parent.items() if n in alive and p in alive
        },
    )
    out.validate()
    return out


def restrict_to_words(dag: ConceptDag, words: set[str]) -> ConceptDag:
    """Sub-DAG spanning exactly ``words``; unknown words are rejected."""
    unknown = sorted(set(words) - set(dag.leaf_words()))
    if unknown:
        raise DataError(f"words not in DAG: {unknown[:5]}")
    return _restrict_to_leaves(dag, set(words))


def filter_broad_words(
    dag: ConceptDag, threshold: int = DEFAULT_BROAD_WORD_THRESHOLD
) -> tuple[ConceptDag, list[str]]:
    """Remove leaves standing for broad concepts.

    For each parent of a leaf, the breadth metric is the parent's span
    length minus the leaf's sibling count under that parent (siblings =
    other children of any kind). A leaf whose metric, maximized over its
    parents, reaches ``threshold`` is removed.
    """
    removed: list[str] = []
    for leaf in dag.leaf_words():
        metric = None
        for parent in dag.parents(leaf):
            m = dag.span_length(parent) - (len(dag.children[parent]) - 1)
            metric = m if metric is None else max(metric, m)
        if metric is not None and metric >= threshold:
            removed.append(leaf)
    keep = set(dag.leaf_words()) - set(removed)
    return _restrict_to_leaves(dag, keep), sorted(removed)


def remove_named_nodes(
    dag: ConceptDag, ids: list[str]
) -> tuple[ConceptDag, list[str]]:
    """Delete specific internal nodes; report words that become unreachable."""
    present = []
    for node_id in ids:
        if node_id == dag.root:
            raise ValidationError("refusing to remove the root node")
        if node_id not in dag.children:
            log.warning("node %r not in DAG; ignoring", node_id)
        elif dag.kind[node_id] != "internal":
            raise ValidationError(f"{node_id!r} is a leaf, not an internal node")
        else:
            present.append(node_id)
    doomed = set(present)
    reachable = {dag.root}
    frontier = [dag.root]
    while frontier:
        node = frontier.pop()
        for kid in dag.children[node]:
            if kid not in doomed and kid not in reachable:
                reachable.add(kid)
                frontier.append(kid)
    survivors = {w for w in dag.leaf_words() if w in reachable}
    dropped = sorted(set(dag.leaf_words()) - survivors)
    if dropped:
        log.warning("%d words became unreachable and were dropped", len(dropped))

    pruned_children = {
        n: tuple(c for c in cs if c not in doomed)
        for n, cs in dag.children.items()
        if n in reachable
    }
    primary_parent = {
        n: p
        for n, p in dag.primary_parent.items()
        if n in reachable and p in reachable
    }
    # A survivor whose primary parent was removed adopts its smallest
    # surviving parent so primary chains stay total.
    surviving_parents: dict[str, list[str]] = {n: [] for n in pruned_children}
    for parent, kids in pruned_children.items():
        for kid in kids:
            surviving_parents[kid].append(parent)
    for node, parents in surviving_parents.items():
        if node != dag.root and node not in primary_parent and parents:
            primary_parent[node] = min(parents)
    interim = ConceptDag(
        root=dag.root,
        children=pruned_children,
        kind={n: dag.kind[n] for n in reachable},
        primary_parent=primary_parent,
    )
    return _restrict_to_leaves(interim, survivors), dropped


def rebuild_for_split(
    records: list[HypernymRecord],
    split_words: set[str],
    drop_nodes: tuple[str, ...] = (),
) -> ConceptDag:
    """DAG over one split's vocabulary, rebuilt from the raw records.

    ``drop_nodes`` re-applies the named-node removals of the global
    pipeline; split words must all survive it.
    """
    dag = build_dag(records, split_words)
    if drop_nodes:
        present = [n for n in drop_nodes if n in dag.children]
        dag, dropped = remove_named_nodes(dag, present)
        if dropped:
            raise DataError(
                f"split words {dropped[:5]} do not survive node removal; "
                "the split was made against a different DAG"
            )
    return dag


def eligible_nodes(
    dag: ConceptDag,
    min_span: int = DEFAULT_MIN_SPAN,
    excluded: tuple[str, ...] = DEFAULT_EXCLUDED_NODES,
) -> list[str]:
    """Internal nodes episodes may be sampled from, sorted by id."""
    banned = set(excluded) | {dag.root}
    return sorted(
        n
        for n in dag.internal_nodes()
        if n not in banned and dag.span_length(n) >= min_span
    )


def prune_to_level(dag: ConceptDag, h: int) -> tuple[ConceptDag, LabelMap]:
    """Remove h generations of leaves; map old leaves to surviving classes.

    Each iteration deletes every node that is childless at its start, so
    after one iteration the childless internal nodes are the new leaves.
    A deleted leaf maps to the nearest surviving node on its primary
    chain (first-record path); survivors map to themselves.
    """
    if h < 0:
        raise ValidationError("pruning depth must be non-negative")
    original_leaves = dag.structural_leaves()
    alive = set(dag.children)
    n_children = {n: len(dag.children[n]) for n in dag.children}

    for i in range(h):
        doomed = sorted(n for n in alive if n_children[n] == 0)
        if dag.root in doomed:
            raise ValidationError(
                f"pruning depth {h} would delete the root; max feasible is {i}"
            )
        alive.difference_update(doomed)
        for node in doomed:
            for parent in dag.parents(node):
                if parent in alive:
                    n_children[parent] -= 1

    def survivor_for(node: str) -> str:
        cur = node
        hops = 0
        while cur not in alive:
            nxt = dag.primary_parent.get(cur)
            if nxt is None:
                break
            cur = nxt
            hops += 1
            if hops > len(dag.children):
                break
        if cur in alive:
            return cur
        anc = sorted(a for a in dag.ancestors(node) if a in alive)
        if not anc:
            raise DataError(f"no surviving ancestor for {node!r}")
        return anc[0]

    label_map = LabelMap(
        h=h, classes={leaf: survivor_for(leaf) for leaf in original_leaves}
    )
    pruned = ConceptDag(
        root=dag.root,
        children={
            n: tuple(c for c in dag.children[n] if c in alive)
            for n in sorted(alive)
        },
        kind={n: dag.kind[n] for n in alive},
        primary_parent={
            n: p for n, p in dag.primary_parent.items() if n in alive and p in alive
        },
    )
    pruned.validate(leaves_are_words=False)
    return pruned, label_map


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def parse_hypernym_line(line: str) -> HypernymRecord:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3:
        raise DataError(f"expected 3 tab-separated fields, got {len(parts)}: {line!r}")
    word, synset, joined = parts
    path = tuple(p for p in joined.split("/"))
    if any(not p for p in path):
        raise DataError(f"empty id in path for word {word!r}")
    return HypernymRecord(word=word, synset=synset, path=path)


def load_hypernym_file(path: str) -> list[HypernymRecord]:
    """Read `WORD<TAB>SYNSET<TAB>root/.../synset` records, one per line."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_hypernym_line(line))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return records


def save_hypernym_file(path: str, records: list[HypernymRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(f"{rec.word}\t{rec.synset}\t{'/'.join(rec.path)}\n")


def save_dag_json(path: str, dag: ConceptDag) -> None:
    """Write the DAG as JSON.

    Edge order is meaningful: the first in-edge listed for each node is
    its primary parent, so a round-trip preserves pruning behaviour.
    """
    primary = dag.primary_parent

    def edge_key(edge: tuple[str, str]) -> tuple[str, int, str]:
        parent, child = edge
        return (child, 0 if primary.get(child) == parent else 1, parent)

    payload = {
        "nodes": [{"id": n, "kind": dag.kind[n]} for n in dag.nodes()],
        "edges": [list(e) for e in sorted(dag.edges(), key=edge_key)],
        "root": dag.root,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_dag_json(path: str) -> ConceptDag:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        kind = {n["id"]: n["kind"] for n in payload["nodes"]}
        edges = [(p, c) for p, c in payload["edges"]]
        root = payload["root"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed DAG JSON ({exc})") from exc
    children: dict[str, list[str]] = {n: [] for n in kind}
    primary_parent: dict[str, str] = {}
    for parent, child in edges:
        if parent not in kind or child not in kind:
            raise DataError(f"{path}: edge ({parent},{child}) uses unknown node")
        children[parent].append(child)
        primary_parent.setdefault(child, parent)
    dag = ConceptDag(
        root=root,
        children={n: tuple(sorted(cs)) for n, cs in children.items()},
        kind=kind,
        primary_parent=primary_parent,
    )
    dag.validate(leaves_are_words=False)
    return dag


def save_label_map(path: str, label_map: LabelMap) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("word,class_id\n")
        for word in sorted(label_map.classes):
            fh.write(f"{word},{label_map.classes[word]}\n")


def load_label_map(path: str, h: int = -1) -> LabelMap:
    classes: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "word,class_id":
            raise DataError(f"{path}: expected header 'word,class_id'")
        for line in fh:
            if not line.strip():
                continue
            word, _, class_id = line.strip().partition(",")
            if not class_id:
                raise DataError(f"{path}: malformed row {line!r}")
            classes[word] = class_id
    return LabelMap(h=h, classes=classes)
