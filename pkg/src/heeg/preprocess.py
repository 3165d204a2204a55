"""Signal conditioning and per-word window extraction.

Recordings are re-referenced to the channel average, reduced to the
aligned channel set, brought to 200 Hz, band-passed 0.3-75 Hz with a
zero-phase Butterworth filter, and scaled to a 100 microvolt unit. Word
windows are 1-second channel-by-200 slices keyed by sample id.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import DataError, ValidationError
from .montage import AlignmentMap

log = logging.getLogger(__name__)

TARGET_RATE = 200
BAND_LOW_HZ = 0.3
BAND_HIGH_HZ = 75.0
FILTER_ORDER = 4
KAISER_BETA = 8.6
WINDOW_SAMPLES = 200

HEEG1_MAGIC = b"HEEG1\0"
MANIFEST_HEADER = ["sample_id", "word", "subject", "session", "recording_uri", "onset_seconds"]


@dataclass
class EegRecording:
    """Channels-by-time amplitude matrix in units of 100 microvolts."""

    data: np.ndarray
    rate: float
    channel_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValidationError("recording data must be channels x time")
        if len(self.channel_labels) != self.data.shape[0]:
            raise ValidationError(
                f"{len(self.channel_labels)} labels for {self.data.shape[0]} channels"
            )
        if not np.isfinite(self.data).all():
            raise DataError("recording contains non-finite samples")
        if self.rate <= 0:
            raise ValidationError("rate must be positive")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.rate


@dataclass(frozen=True)
class ManifestRow:
    sample_id: str
    word: str
    subject: str
    session: str
    recording_uri: str
    onset_seconds: float


# ---------------------------------------------------------------------------
# conditioning steps
# ---------------------------------------------------------------------------


def average_rereference(data: np.ndarray) -> np.ndarray:
    """Subtract the per-timepoint mean across channels."""
    return data - data.mean(axis=0, keepdims=True)


def design_bandpass(
    rate: float,
    low: float = BAND_LOW_HZ,
    high: float = BAND_HIGH_HZ,
    order: int = FILTER_ORDER,
) -> np.ndarray:
    """Butterworth band-pass in second-order sections."""
    if not 0 < low < high < rate / 2:
        raise ValidationError(
            f"band {low}-{high} Hz infeasible at rate {rate} Hz"
        )
    return signal.butter(order, [low, high], btype="bandpass", fs=rate, output="sos")


def bandpass_zero_phase(
    data: np.ndarray,
    rate: float,
    low: float = BAND_LOW_HZ,
    high: float = BAND_HIGH_HZ,
    order: int = FILTER_ORDER,
) -> np.ndarray:
    """Forward-backward band-pass (zero phase, squared magnitude response)."""
    sos = design_bandpass(rate, low, high, order)
    try:
        return signal.sosfiltfilt(sos, data, axis=1)
    except ValueError as exc:
        raise DataError(f"recording too short to filter: {exc}") from exc


def resample_to(data: np.ndarray, rate: float, target_rate: int = TARGET_RATE) -> np.ndarray:
    """Polyphase rational resampling with a Kaiser window (beta 8.6)."""
    if rate == target_rate:
        return np.asarray(data, dtype=float)
    if float(rate) != int(rate):
        raise ValidationError(f"rate {rate} Hz is not integral")
    frac = Fraction(int(target_rate), int(rate))
    out = signal.resample_poly(
        data, frac.numerator, frac.denominator, axis=1, window=("kaiser", KAISER_BETA)
    )
    # resample_poly pads to ceil(n*up/down); trim to the rounded length so
    # duration is preserved within half an output sample
    n_out = int(round(data.shape[1] * frac.numerator / frac.denominator))
    return out[:, :n_out]


def preprocess_recording(
    raw: EegRecording,
    amap: AlignmentMap | None = None,
    layout: str | None = None,
    input_unit_uv: float = 100.0,
    target_rate: int = TARGET_RATE,
    band: tuple[float, float] = (BAND_LOW_HZ, BAND_HIGH_HZ),
) -> EegRecording:
    """Run the canonical conditioning pipeline on one recording.

    Order: (i) average re-reference over all recorded channels,
    (ii) channel selection per the alignment map (skipped when amap is
    None), (iii) resample to 200 Hz, (iv) zero-phase band-pass,
    (v) rescale so the stored unit is 100 microvolts. ``layout`` names
    the recording's montage within the map; None auto-detects it.
    ``input_unit_uv`` is the microvolt value of one raw data unit.
    """
    if raw.rate < 150:
        raise ValidationError(
            f"rate {raw.rate} Hz is below the 150 Hz floor for a 75 Hz band edge"
        )
    data = average_rereference(raw.data)

    if amap is not None:
        layout = layout or _detect_layout(raw, amap)
        wanted = amap.labels_for(layout)
        index = {label: i for i, label in enumerate(raw.channel_labels)}
        missing = [w for w in wanted if w not in index]
        if missing:
            raise DataError(
                f"recording lacks mapped channel {missing[0]!r} "
                f"(layout {layout!r}; {len(missing)} missing in total)"
            )
        data = data[[index[w] for w in wanted], :]
        labels = tuple(amap.reference_labels())
    else:
        labels = raw.channel_labels

    data = resample_to(data, raw.rate, target_rate)
    data = bandpass_zero_phase(data, target_rate, band[0], band[1])
    data = data * (input_unit_uv / 100.0)
    return EegRecording(data=data, rate=float(target_rate), channel_labels=labels)


def _detect_layout(raw: EegRecording, amap: AlignmentMap) -> str:
    have = set(raw.channel_labels)
    candidates = [
        name
        for name in (amap.reference_layout, *amap.target_layouts)
        if set(amap.labels_for(name)) <= have
    ]
    if not candidates:
        raise DataError(
            "recording channels match no layout in the alignment map; "
            "pass layout= explicitly"
        )
    if len(candidates) > 1:
        raise ValidationError(
            f"recording channels match several layouts {candidates}; "
            "pass layout= explicitly"
        )
    return candidates[0]


def extract_word_windows(
    rec: EegRecording,
    rows: list[ManifestRow],
    window_samples: int = WINDOW_SAMPLES,
    target_rate: int = TARGET_RATE,
) -> list[tuple[str, np.ndarray]]:
    """Cut one channels-by-window_samples slice per manifest row.

    Rows whose window would cross the recording bounds are skipped with
    a warning.
    """
    if rec.rate != target_rate:
        raise ValidationError(
            f"windows are defined at {target_rate} Hz, recording is {rec.rate} Hz"
        )
    out: list[tuple[str, np.ndarray]] = []
    for row in rows:
        start = int(round(row.onset_seconds * rec.rate))
        stop = start + window_samples
        if start < 0 or stop > rec.n_samples:
            log.warning(
                "sample %s: window [%d, %d) outside recording of %d samples; skipped",
                row.sample_id,
                start,
                stop,
                rec.n_samples,
            )
            continue
        out.append((row.sample_id, rec.data[:, start:stop].copy()))
    return out


# ---------------------------------------------------------------------------
# HEEG1 tensor file
# ---------------------------------------------------------------------------


def save_heeg1(path: str, rec: EegRecording) -> None:
    """Write magic, u32 channels/samples/rate (LE), then f32 LE channel-major."""
    if float(rec.rate) != int(rec.rate):
        raise ValidationError("HEEG1 stores integral rates only")
    with open(path, "wb") as fh:
        fh.write(HEEG1_MAGIC)
        fh.write(struct.pack("<III", rec.n_channels, rec.n_samples, int(rec.rate)))
        fh.write(np.ascontiguousarray(rec.data, dtype="<f4").tobytes())


def load_heeg1(path: str, channel_labels: tuple[str, ...] | None = None) -> EegRecording:
    with open(path, "rb") as fh:
        magic = fh.read(len(HEEG1_MAGIC))
        if magic != HEEG1_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        header = fh.read(12)
        if len(header) != 12:
            raise DataError(f"{path}: truncated header")
        channels, samples, rate = struct.unpack("<III", header)
        payload = fh.read(channels * samples * 4)
        if len(payload) != channels * samples * 4:
            raise DataError(f"{path}: truncated payload")
        extra = fh.read(1)
        if extra:
            raise DataError(f"{path}: trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").astype(float).reshape(channels, samples)
    if channel_labels is None:
        channel_labels = tuple(f"ch{i:03d}" for i in range(channels))
    return EegRecording(data=data, rate=float(rate), channel_labels=channel_labels)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


def save_manifest(path: str, rows: list[ManifestRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row.sample_id,
                    row.word,
                    row.subject,
                    row.session,
                    row.recording_uri,
                    repr(float(row.onset_seconds)),
                ]
            )


def load_manifest(path: str) -> list[ManifestRow]:
    rows: list[ManifestRow] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise DataError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 6:
                raise DataError(f"{path}:{lineno}: expected 6 fields")
            sample_id = row[0]
            if sample_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate sample_id {sample_id!r}")
            seen.add(sample_id)
            try:
                onset = float(row[5])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad onset {row[5]!r}") from exc
            rows.append(ManifestRow(row[0], row[1], row[2], row[3], row[4], onset))
    return rows


def collect_windows(
    rows: list[ManifestRow],
    root_dir: str,
    window_samples: int = WINDOW_SAMPLES,
    target_rate: int = TARGET_RATE,
) -> dict[str, np.ndarray]:
    """Load every referenced recording once and cut all windows.

    ``recording_uri`` values resolve relative to ``root_dir``. Recordings
    must already be at the target rate (i.e. preprocessed or synthetic).
    """
    by_uri: dict[str, list[ManifestRow]] = {}
    for row in rows:
        by_uri.setdefault(row.recording_uri, []).append(row)
    windows: dict[str, np.ndarray] = {}
    for uri in sorted(by_uri):
        rec = load_heeg1(str(Path(root_dir) / uri))
        for sample_id, window in extract_word_windows(
            rec, by_uri[uri], window_samples, target_rate
        ):
            windows[sample_id] = window
    return windows
