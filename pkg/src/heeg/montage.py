"""Geometric alignment of electrode layouts to a shared channel set.

Reference electrodes are matched to each target layout by 8-nearest-
neighbour search with iterative conflict resolution; only reference
electrodes that resolve in every target layout survive, which yields an
injective channel mapping per target.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ValidationError

DEFAULT_NEIGHBORS = 8
DEFAULT_CONFLICT_ROUNDS = 8


@dataclass
class ElectrodeLayout:
    """Named montage: electrode labels with 3-D positions (layout units)."""

    name: str
    labels: tuple[str, ...]
    positions: np.ndarray  # (n, 3)

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float)
        if len(self.labels) == 0:
            raise ValidationError(f"layout {self.name!r} has no electrodes")
        if self.positions.shape != (len(self.labels), 3):
            raise ValidationError(
                f"layout {self.name!r}: positions shape {self.positions.shape} "
                f"does not match {len(self.labels)} labels"
            )
        if len(set(self.labels)) != len(self.labels):
            raise DataError(f"layout {self.name!r} has duplicate labels")
        if not np.isfinite(self.positions).all():
            raise DataError(f"layout {self.name!r} has non-finite positions")

    def position_of(self, label: str) -> np.ndarray:
        return self.positions[self.labels.index(label)]


@dataclass(frozen=True)
class CandidateList:
    """One reference electrode's neighbour candidates, nearest first."""

    ref_label: str
    targets: tuple[str, ...]
    distances: tuple[float, ...]


@dataclass
class AlignmentMap:
    """Per-target channel assignment for the retained reference electrodes."""

    reference_layout: str
    target_layouts: tuple[str, ...]
    entries: list[dict[str, str]]  # keys: "ref" plus one per target layout

    def __post_init__(self) -> None:
        for layout in self.target_layouts:
            used = [e[layout] for e in self.entries]
            if len(set(used)) != len(used):
                raise DataError(
                    f"alignment not injective for target layout {layout!r}"
                )
        for entry in self.entries:
            missing = [t for t in self.target_layouts if t not in entry]
            if missing:
                raise DataError(
                    f"entry {entry.get('ref')!r} lacks a match in {missing}"
                )

    def reference_labels(self) -> list[str]:
        return [e["ref"] for e in self.entries]

    def labels_for(self, layout: str) -> list[str]:
        """Channel labels of ``layout`` in canonical (entry) order."""
        if layout == self.reference_layout:
            return self.reference_labels()
        if layout not in self.target_layouts:
            raise ValidationError(f"layout {layout!r} not in alignment map")
        return [e[layout] for e in self.entries]


def nearest_neighbors(
    reference: ElectrodeLayout,
    target: ElectrodeLayout,
    k: int = DEFAULT_NEIGHBORS,
) -> list[CandidateList]:
    """k nearest target electrodes per reference electrode.

    Candidates are ordered by ascending Euclidean distance; exact ties by
    label, which makes the result independent of input electrode order.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if len(target.labels) < k:
        raise ValidationError(
            f"target layout {target.name!r} has {len(target.labels)} "
            f"electrodes, fewer than k={k}"
        )
    diff = reference.positions[:, None, :] - target.positions[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    out = []
    for i in sorted(range(len(reference.labels)), key=lambda i: reference.labels[i]):
        order = sorted(
            range(len(target.labels)), key=lambda j: (dist[i, j], target.labels[j])
        )[:k]
        out.append(
            CandidateList(
                ref_label=reference.labels[i],
                targets=tuple(target.labels[j] for j in order),
                distances=tuple(float(dist[i, j]) for j in order),
            )
        )
    return out


def resolve_conflicts(
    tuples: list[CandidateList], max_rounds: int = DEFAULT_CONFLICT_ROUNDS
) -> list[tuple[str, str, float]]:
    """Deduplicate neighbour tuples over up to ``max_rounds`` rounds.

    Each round, references claiming the same current-first candidate are
    compared; the closer one keeps the candidate and the others advance
    to their next. A tuple on its last candidate is skipped (it cannot
    advance). Residual duplicates after the last round keep exactly one
    owner: smallest distance, exact ties by reference label. Returns
    (ref_label, target_label, distance) triples sorted by ref_label.
    """
    for t in tuples:
        if not t.targets:
            raise ValidationError(f"tuple {t.ref_label!r} has no candidates")
    if len({t.ref_label for t in tuples}) != len(tuples):
        raise ValidationError("duplicate reference labels in tuples")
    pos = {t.ref_label: 0 for t in tuples}
    by_ref = {t.ref_label: t for t in tuples}

    for _ in range(max_rounds):
        claims: dict[str, list[str]] = {}
        for ref in sorted(pos):
            claims.setdefault(by_ref[ref].targets[pos[ref]], []).append(ref)
        advanced = False
        for tgt in sorted(claims):
            refs = claims[tgt]
            if len(refs) < 2:
                continue
            refs.sort(key=lambda r: (by_ref[r].distances[pos[r]], r))
            for loser in refs[1:]:
                if pos[loser] + 1 < len(by_ref[loser].targets):
                    pos[loser] += 1
                    advanced = True
        if not advanced:
            break

    best: dict[str, tuple[float, str]] = {}
    for ref in sorted(pos):
        tgt = by_ref[ref].targets[pos[ref]]
        d = by_ref[ref].distances[pos[ref]]
        if tgt not in best or (d, ref) < best[tgt]:
            best[tgt] = (d, ref)
    return sorted((ref, tgt, d) for tgt, (d, ref) in best.items())


def align_layouts(
    reference: ElectrodeLayout,
    targets: list[ElectrodeLayout],
    k: int = DEFAULT_NEIGHBORS,
    max_rounds: int = DEFAULT_CONFLICT_ROUNDS,
) -> AlignmentMap:
    """Match the reference layout against every target layout.

    Keeps only reference electrodes that resolved in all targets.
    """
    if not targets:
        raise ValidationError("need at least one target layout")
    names = [t.name for t in targets]
    if len(set(names)) != len(names) or reference.name in names:
        raise ValidationError("layout names must be distinct")
    matched: dict[str, dict[str, str]] = {}
    for target in targets:
        cands = nearest_neighbors(reference, target, k)
        resolved = resolve_conflicts(cands, max_rounds)
        matched[target.name] = {ref: tgt for ref, tgt, _ in resolved}
    kept = sorted(
        ref
        for ref in reference.labels
        if all(ref in matched[t] for t in names)
    )
    if not kept:
        raise DataError("no reference electrode matched in every target layout")
    entries = [
        {"ref": ref, **{t: matched[t][ref] for t in names}} for ref in kept
    ]
    return AlignmentMap(
        reference_layout=reference.name,
        target_layouts=tuple(names),
        entries=entries,
    )


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def save_layout_csv(path: str, layout: ElectrodeLayout) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# layout: {layout.name}\n")
        writer = csv.writer(fh)
        writer.writerow(["label", "x", "y", "z"])
        for label, p in zip(layout.labels, layout.positions):
            writer.writerow([label, repr(float(p[0])), repr(float(p[1])), repr(float(p[2]))])


def load_layout_csv(path: str) -> ElectrodeLayout:
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# layout:"):
            raise DataError(f"{path}: missing '# layout: <name>' header")
        name = first.split(":", 1)[1].strip()
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["label", "x", "y", "z"]:
            raise DataError(f"{path}: expected header label,x,y,z")
        labels: list[str] = []
        rows: list[list[float]] = []
        for row in reader:
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}: malformed row {row}")
            labels.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataError(f"{path}: non-numeric coordinate in {row}") from exc
    return ElectrodeLayout(name=name, labels=tuple(labels), positions=np.array(rows))


def save_alignment_csv(path: str, amap: AlignmentMap) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ref_label", *amap.target_layouts])
        for entry in amap.entries:
            writer.writerow([entry["ref"], *(entry[t] for t in amap.target_layouts)])


def load_alignment_csv(path: str, reference_layout: str = "reference") -> AlignmentMap:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "ref_label" or len(header) < 2:
            raise DataError(f"{path}: expected header ref_label,<target layouts>")
        targets = tuple(header[1:])
        entries = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: malformed row {row}")
            entries.append({"ref": row[0], **dict(zip(targets, row[1:]))})
    return AlignmentMap(
        reference_layout=reference_layout, target_layouts=targets, entries=entries
    )
