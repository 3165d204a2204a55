"""Shared fixture builders for the test suite."""

from __future__ import annotations

import numpy as np

from heeg.hierarchy import ConceptDag, HypernymRecord, build_dag

ROOT = "entity.n.01"


def rec(word: str, *path: str) -> HypernymRecord:
    """Record whose path runs root -> ... -> parent-of-word."""
    full = (ROOT, *path)
    return HypernymRecord(word=word, synset=full[-1], path=full)


def broad_word_fixture() -> list[HypernymRecord]:
    """Hierarchy whose leaf breadth metrics isolate five known-broad words.

    Metric = parent span length minus sibling count:
      CREATURE/ANIMAL/BEAST: parent spans 121, 9 siblings -> 112
      PERSON: parent spans 278, 58 siblings -> 220
      MAMMAL: parent spans 56, 2 siblings -> 54
    All other leaves score far below the 45 cutoff.
    """
    records: list[HypernymRecord] = []

    # organism: 3 broad leaf children + 7 internal children spanning 118
    for word in ("CREATURE", "ANIMAL", "BEAST"):
        records.append(rec(word, "organism.n.01"))
    sizes = [17, 17, 17, 17, 17, 17, 16]
    n = 0
    for i, size in enumerate(sizes):
        for _ in range(size):
            records.append(rec(f"FA{n:04d}", "organism.n.01", f"being.s{i}.01"))
            n += 1

    # brute: MAMMAL + 2 internal children spanning 55
    records.append(rec("MAMMAL", "brute.n.01"))
    n = 0
    for i, size in enumerate((28, 27)):
        for _ in range(size):
            records.append(rec(f"FB{n:04d}", "brute.n.01", f"critter.s{i}.01"))
            n += 1

    # someone: PERSON + 58 internal children spanning 277
    records.append(rec("PERSON", "someone.n.01"))
    n = 0
    for i in range(58):
        size = 5 if i < 45 else 4
        for _ in range(size):
            records.append(rec(f"FC{n:04d}", "someone.n.01", f"agent.s{i}.01"))
            n += 1

    # craft: control group, metric 40 for its direct leaves (kept)
    records.append(rec("KEPT", "craft.n.01"))
    for j in range(7):
        records.append(rec(f"FD{j:04d}", "craft.n.01"))
    n = 0
    for i in range(3):
        for _ in range(14):
            records.append(rec(f"FE{n:04d}", "craft.n.01", f"tool.s{i}.01"))
            n += 1

    return records


def seventy_five_eligible_dag() -> ConceptDag:
    """Split-shaped DAG with exactly 75 sampling-eligible concepts.

    15 group nodes (span 24) plus 60 subgroup nodes (span 5) are
    eligible; 15 small nodes (span 4) and the root are not.
    """
    records: list[HypernymRecord] = []
    w = 0
    for g in range(15):
        grp = f"group.s{g:02d}.01"
        for hgroup in range(4):
            sub = f"sub.s{g:02d}{hgroup}.01"
            for _ in range(5):
                records.append(rec(f"W{w:04d}", grp, sub))
                w += 1
        small = f"small.s{g:02d}.01"
        for _ in range(4):
            records.append(rec(f"W{w:04d}", grp, small))
            w += 1
    return build_dag(records)


def random_tree_records(
    rng: np.random.Generator,
    max_depth: int = 4,
    max_children: int = 4,
) -> list[HypernymRecord]:
    """Random tree as hypernym records (single root, words at the fringe)."""
    records: list[HypernymRecord] = []
    counter = [0]

    def grow(path: tuple[str, ...], depth: int) -> None:
        n_kids = int(rng.integers(1, max_children + 1))
        for _ in range(n_kids):
            counter[0] += 1
            if depth >= max_depth or rng.random() < 0.3:
                records.append(
                    HypernymRecord(
                        word=f"W{counter[0]:04d}", synset=path[-1], path=path
                    )
                )
            else:
                grow(path + (f"node.s{counter[0]:04d}.01",), depth + 1)

    grow((ROOT,), 1)
    return records
