"""Embedding network plus per-episode adaptation engines.

A two-layer MLP over flattened windows is trained three ways: a plain
multi-class baseline over every training class, first-order episodic
meta-learning with a zero-initialized per-episode head, and the same
with a prototype-initialized head. Episode evaluation always adapts a
fresh head (and a copy of the embedder) by full-batch gradient descent
on the support set, then scores the query set. All math is explicit
numpy so every gradient can be checked against finite differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, NumericError, ValidationError
from .preprocess import EegRecording, load_heeg1, save_heeg1

HMLC1_MAGIC = b"HMLC1"
PARAM_ORDER = ("w1", "b1", "w2", "b2")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class MlpEmbedder:
    """Flatten -> dim -> relu -> dropout -> dim, all f64."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    dropout_rate: float = 0.05

    def __post_init__(self) -> None:
        for name in PARAM_ORDER:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"embedder parameter {name} not finite")
            setattr(self, name, arr)
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ValidationError("weight matrices must be 2-d")
        if self.w1.shape[1] != self.w2.shape[0]:
            raise ValidationError("hidden width mismatch between layers")
        if self.b1.shape != (self.w1.shape[1],) or self.b2.shape != (self.w2.shape[1],):
            raise ValidationError("bias shapes do not match weights")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError(f"dropout_rate {self.dropout_rate} outside [0, 1)")

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def dim(self) -> int:
        return self.w2.shape[1]

    def copy(self) -> "MlpEmbedder":
        return MlpEmbedder(
            w1=self.w1.copy(),
            b1=self.b1.copy(),
            w2=self.w2.copy(),
            b2=self.b2.copy(),
            dropout_rate=self.dropout_rate,
        )

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in PARAM_ORDER]

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vec: np.ndarray) -> "MlpEmbedder":
        if vec.shape != (self.n_params(),):
            raise ValidationError("parameter vector has wrong length")
        out, at = {}, 0
        for name in PARAM_ORDER:
            shape = getattr(self, name).shape
            size = int(np.prod(shape))
            out[name] = vec[at : at + size].reshape(shape).astype(np.float64)
            at += size
        return MlpEmbedder(dropout_rate=self.dropout_rate, **out)


def init_mlp(
    d_in: int, dim: int, rng: np.random.Generator, dropout_rate: float = 0.05
) -> MlpEmbedder:
    """He-scaled gaussian weights, zero biases."""
    if d_in < 1 or dim < 1:
        raise ValidationError("embedder dims must be >= 1")
    return MlpEmbedder(
        w1=rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_in, dim)),
        b1=np.zeros(dim),
        w2=rng.normal(0.0, np.sqrt(2.0 / dim), size=(dim, dim)),
        b2=np.zeros(dim),
        dropout_rate=dropout_rate,
    )


@dataclass
class LinearHead:
    w: np.ndarray  # (way, dim)
    b: np.ndarray  # (way,)

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ValidationError("head shapes inconsistent")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise ValidationError("head parameters not finite")

    @property
    def way(self) -> int:
        return self.w.shape[0]

    def copy(self) -> "LinearHead":
        return LinearHead(w=self.w.copy(), b=self.b.copy())


def zero_head(way: int, dim: int) -> LinearHead:
    if way < 2:
        raise ValidationError("head needs at least 2 classes")
    return LinearHead(w=np.zeros((way, dim)), b=np.zeros(way))


def proto_head_init(class_embeddings: list[np.ndarray]) -> LinearHead:
    """Prototype head: per class i, w_i = 2 p_i and b_i = -|p_i|^2.

    Scoring a query x with this head ranks classes exactly like squared
    distance to the prototypes, since w_i.x + b_i = |x|^2 - |x - p_i|^2
    minus the shared |x|^2 term.
    """
    if len(class_embeddings) < 2:
        raise ValidationError("need at least 2 classes for a head")
    protos = []
    for i, emb in enumerate(class_embeddings):
        arr = np.asarray(emb, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.size == 0:
            raise DataError(f"class {i} has no support embeddings")
        protos.append(arr.mean(axis=0))
    p = np.stack(protos)
    return LinearHead(w=2.0 * p, b=-np.sum(p * p, axis=1))


@dataclass(frozen=True)
class AdaptConfig:
    """Adaptation and training knobs; defaults mirror the reference runs."""

    inner_lr: float = 0.01
    inner_steps: int = 5
    outer_lr: float = 3e-4
    meta_batch: int = 4
    total_meta_steps: int = 5351
    weight_decay: float = 0.001
    epochs: int = 50
    batch_size: int = 128
    baseline_head_init: str = "proto"  # or "zero"

    def __post_init__(self) -> None:
        if self.inner_lr < 0 or self.outer_lr <= 0:
            raise ValidationError("learning rates must be positive")
        if self.inner_steps < 0 or self.epochs < 0:
            raise ValidationError("step counts must be >= 0")
        if self.meta_batch < 1 or self.batch_size < 1:
            raise ValidationError("batch sizes must be >= 1")
        if self.baseline_head_init not in ("proto", "zero"):
            raise ValidationError(
                f"baseline_head_init {self.baseline_head_init!r} unknown"
            )


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _flatten_windows(params: MlpEmbedder, windows: np.ndarray) -> np.ndarray:
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise ValidationError(
            f"windows flatten to {x.shape}, embedder expects (n, {params.d_in})"
        )
    return x


def _forward(
    params: MlpEmbedder,
    x: np.ndarray,
    train: bool,
    rng: np.random.Generator | None,
):
    a1 = x @ params.w1 + params.b1
    h = np.maximum(a1, 0.0)
    mask = None
    if train and params.dropout_rate > 0.0:
        if rng is None:
            raise ValidationError("training-mode forward needs an rng for dropout")
        keep = 1.0 - params.dropout_rate
        mask = (rng.random(h.shape) < keep) / keep
        h = h * mask
    z = h @ params.w2 + params.b2
    return z, (x, a1, h, mask)


def embed(
    params: MlpEmbedder,
    windows: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Batch of windows -> (n, dim) embeddings; deterministic when not training."""
    x = _flatten_windows(params, windows)
    z, _ = _forward(params, x, train, rng)
    if not np.all(np.isfinite(z)):
        raise NumericError("embedding produced non-finite values")
    return z


def _softmax_xent(logits: np.ndarray, y: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), y].mean())
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n


def loss_and_grads(
    params: MlpEmbedder,
    head: LinearHead,
    windows: np.ndarray,
    y: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
):
    """Cross-entropy loss plus gradients for embedder and head.

    Returns (loss, embedder grads dict, head grads (dw, db), logits).
    """
    x = _flatten_windows(params, windows)
    y = np.asarray(y, dtype=np.intp)
    if y.shape != (x.shape[0],):
        raise ValidationError("labels do not match the batch")
    if y.size and (y.min() < 0 or y.max() >= head.way):
        raise ValidationError("label outside head range")
    z, (x, a1, h, mask) = _forward(params, x, train, rng)
    logits = z @ head.w.T + head.b
    loss, dlogits = _softmax_xent(logits, y)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")

    dw_head = dlogits.T @ z
    db_head = dlogits.sum(axis=0)
    dz = dlogits @ head.w
    dw2 = h.T @ dz
    db2 = dz.sum(axis=0)
    dh = dz @ params.w2.T
    if mask is not None:
        dh = dh * mask
    da1 = dh * (a1 > 0.0)
    dw1 = x.T @ da1
    db1 = da1.sum(axis=0)
    grads = {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}
    return loss, grads, (dw_head, db_head), logits


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


class Adam:
    """Adam over a list of arrays; decoupled weight decay on 2-d arrays."""

    def __init__(
        self,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._m is None:
            self._m = [np.zeros_like(a) for a in arrays]
            self._v = [np.zeros_like(a) for a in arrays]
        if len(arrays) != len(self._m):
            raise ValidationError("optimizer state does not match parameters")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for a, g, m, v in zip(arrays, grads, self._m, self._v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            if self.weight_decay and a.ndim >= 2:
                a -= self.lr * self.weight_decay * a
            a -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# adaptation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeTensors:
    """Episode samples as arrays; labels index the episode's class list."""

    x_support: np.ndarray
    y_support: np.ndarray
    x_query: np.ndarray
    y_query: np.ndarray
    way: int

    def __post_init__(self) -> None:
        if self.way < 2:
            raise ValidationError("episode needs >= 2 classes")
        if len(self.x_support) != len(self.y_support) or not len(self.x_support):
            raise ValidationError("support tensors inconsistent")
        if len(self.x_query) != len(self.y_query) or not len(self.x_query):
            raise ValidationError("query tensors inconsistent")


def gather_episode(episode, features) -> EpisodeTensors:
    """Stack per-sample feature arrays for one sampled episode.

    ``features`` maps sample_id -> array (window or precomputed vector);
    labels are indices into episode.classes.
    """
    index = {c: i for i, c in enumerate(episode.classes)}

    def stack(pairs):
        xs, ys = [], []
        for sid, cls in pairs:
            if sid not in features:
                raise DataError(f"sample {sid!r} missing from feature source")
            xs.append(np.asarray(features[sid], dtype=np.float64))
            ys.append(index[cls])
        return np.stack(xs), np.asarray(ys, dtype=np.intp)

    x_sup, y_sup = stack(episode.support)
    x_qry, y_qry = stack(episode.query)
    return EpisodeTensors(
        x_support=x_sup,
        y_support=y_sup,
        x_query=x_qry,
        y_query=y_qry,
        way=len(episode.classes),
    )


def head_for_mode(
    params: MlpEmbedder, tensors: EpisodeTensors, mode: str, cfg: AdaptConfig
) -> LinearHead:
    init = {
        "baseline": cfg.baseline_head_init,
        "fomaml": "zero",
        "proto": "proto",
    }.get(mode)
    if init is None:
        raise ValidationError(f"mode {mode!r} not one of baseline|fomaml|proto")
    if init == "zero":
        return zero_head(tensors.way, params.dim)
    z = embed(params, tensors.x_support)
    groups = [z[tensors.y_support == i] for i in range(tensors.way)]
    if any(len(g) == 0 for g in groups):
        raise DataError("a class has no support samples")
    return proto_head_init(groups)


def inner_adapt(
    params: MlpEmbedder,
    head: LinearHead,
    x_support: np.ndarray,
    y_support: np.ndarray,
    cfg: AdaptConfig,
) -> tuple[MlpEmbedder, LinearHead]:
    """Full-batch gradient descent on (embedder, head); inputs untouched."""
    p = params.copy()
    h = head.copy()
    for step in range(cfg.inner_steps):
        try:
            _, grads, (dw, db), _ = loss_and_grads(p, h, x_support, y_support)
        except NumericError as exc:
            raise NumericError(f"inner step {step}: {exc}") from exc
        p.w1 -= cfg.inner_lr * grads["w1"]
        p.b1 -= cfg.inner_lr * grads["b1"]
        p.w2 -= cfg.inner_lr * grads["w2"]
        p.b2 -= cfg.inner_lr * grads["b2"]
        h.w -= cfg.inner_lr * dw
        h.b -= cfg.inner_lr * db
    return p, h


def fomaml_meta_step(
    params: MlpEmbedder,
    batch: list[EpisodeTensors],
    cfg: AdaptConfig,
    opt: Adam,
    mode: str = "fomaml",
    rng: np.random.Generator | None = None,
) -> dict:
    """One outer update: adapt per episode, average query-loss gradients.

    The meta-gradient is the batch mean of the query-loss gradient taken
    at each episode's adapted parameters (first-order: adaptation is not
    differentiated through), applied to the shared initial parameters.
    """
    if not batch:
        raise ValidationError("meta step needs a non-empty episode batch")
    if len(batch) != cfg.meta_batch:
        raise ValidationError(
            f"batch size {len(batch)} differs from meta_batch {cfg.meta_batch}"
        )
    if mode not in ("fomaml", "proto"):
        raise ValidationError(f"meta-training mode {mode!r} unknown")
    acc = {name: np.zeros_like(getattr(params, name)) for name in PARAM_ORDER}
    losses, hits, total = [], 0, 0
    for tensors in batch:
        head0 = head_for_mode(params, tensors, mode, cfg)
        adapted, head = inner_adapt(
            params, head0, tensors.x_support, tensors.y_support, cfg
        )
        train = params.dropout_rate > 0.0 and rng is not None
        loss, grads, _, logits = loss_and_grads(
            adapted, head, tensors.x_query, tensors.y_query, train=train, rng=rng
        )
        for name in PARAM_ORDER:
            acc[name] += grads[name] / len(batch)
        losses.append(loss)
        hits += int((logits.argmax(axis=1) == tensors.y_query).sum())
        total += len(tensors.y_query)
    opt.step(params.arrays(), [acc[name] for name in PARAM_ORDER])
    return {
        "query_loss": float(np.mean(losses)),
        "query_accuracy": hits / total,
        "meta_grad_norm": float(
            np.sqrt(sum(float((g * g).sum()) for g in acc.values()))
        ),
    }


def meta_gradient(
    params: MlpEmbedder,
    batch: list[EpisodeTensors],
    cfg: AdaptConfig,
    mode: str = "fomaml",
) -> dict[str, np.ndarray]:
    """The averaged first-order meta-gradient, without applying any update."""
    if not batch:
        raise ValidationError("meta gradient needs episodes")
    acc = {name: np.zeros_like(getattr(params, name)) for name in PARAM_ORDER}
    for tensors in batch:
        head0 = head_for_mode(params, tensors, mode, cfg)
        adapted, head = inner_adapt(
            params, head0, tensors.x_support, tensors.y_support, cfg
        )
        _, grads, _, _ = loss_and_grads(
            adapted, head, tensors.x_query, tensors.y_query
        )
        for name in PARAM_ORDER:
            acc[name] += grads[name] / len(batch)
    return acc


def train_baseline(
    params: MlpEmbedder,
    windows: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    cfg: AdaptConfig,
    rng: np.random.Generator,
) -> tuple[MlpEmbedder, LinearHead, list[float]]:
    """Plain mini-batch cross-entropy over the full training vocabulary.

    Returns (trained embedder, joint head, mean loss per epoch). The
    joint head is discarded before episodic evaluation.
    """
    labels = np.asarray(labels, dtype=np.intp)
    if n_classes < 2:
        raise ValidationError("baseline needs >= 2 classes")
    if labels.size and labels.max() >= n_classes:
        raise ValidationError("label outside class range")
    p = params.copy()
    head = zero_head(n_classes, p.dim)
    opt = Adam(lr=cfg.outer_lr, weight_decay=cfg.weight_decay)
    n = len(labels)
    epoch_losses: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for at in range(0, n, cfg.batch_size):
            take = order[at : at + cfg.batch_size]
            loss, grads, (dw, db), _ = loss_and_grads(
                p, head, windows[take], labels[take], train=True, rng=rng
            )
            opt.step(
                p.arrays() + [head.w, head.b],
                [grads[name] for name in PARAM_ORDER] + [dw, db],
            )
            batch_losses.append(loss)
        epoch_losses.append(float(np.mean(batch_losses)))
    return p, head, epoch_losses


def run_meta_training(
    params: MlpEmbedder,
    episode_source,
    cfg: AdaptConfig,
    mode: str,
    seed: int,
) -> tuple[MlpEmbedder, list[dict]]:
    """Drive cfg.total_meta_steps outer updates from an episode stream.

    ``episode_source(index) -> EpisodeTensors`` supplies training
    episodes; indices 0..total*meta_batch-1 are consumed in order, so a
    fixed seed reproduces the run bit for bit.
    """
    p = params.copy()
    opt = Adam(lr=cfg.outer_lr)
    rng = np.random.default_rng(seed)
    stats: list[dict] = []
    index = 0
    for _ in range(cfg.total_meta_steps):
        batch = [episode_source(index + j) for j in range(cfg.meta_batch)]
        index += cfg.meta_batch
        stats.append(fomaml_meta_step(p, batch, cfg, opt, mode=mode, rng=rng))
    return p, stats


def evaluate_episode(
    params: MlpEmbedder,
    tensors: EpisodeTensors,
    mode: str,
    cfg: AdaptConfig,
) -> tuple[float, float]:
    """Adapt a fresh head on support, score query: (accuracy, balanced).

    The shared embedder is never mutated; adaptation runs on copies.
    """
    head0 = head_for_mode(params, tensors, mode, cfg)
    adapted, head = inner_adapt(
        params, head0, tensors.x_support, tensors.y_support, cfg
    )
    z = embed(adapted, tensors.x_query)
    logits = z @ head.w.T + head.b
    pred = logits.argmax(axis=1)
    accuracy = float((pred == tensors.y_query).mean())
    recalls = []
    for i in range(tensors.way):
        sel = tensors.y_query == i
        if sel.any():
            recalls.append(float((pred[sel] == i).mean()))
    balanced = float(np.mean(recalls))
    return accuracy, balanced


# ---------------------------------------------------------------------------
# frozen external embeddings
# ---------------------------------------------------------------------------


@dataclass
class FrozenLookup:
    """Precomputed per-sample embeddings used in place of the MLP."""

    ids: tuple[str, ...]
    vectors: np.ndarray  # (n, dim)

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or len(self.ids) != self.vectors.shape[0]:
            raise ValidationError("frozen embedding table inconsistent")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate sample ids in frozen embeddings")
        self._row = {sid: i for i, sid in enumerate(self.ids)}

    def __contains__(self, sid: str) -> bool:
        return sid in self._row

    def __getitem__(self, sid: str) -> np.ndarray:
        try:
            return self.vectors[self._row[sid]]
        except KeyError:
            raise DataError(f"sample {sid!r} missing from frozen embeddings")


def save_frozen(tensor_path: str, sidecar_path: str, lookup: FrozenLookup) -> None:
    rec = EegRecording(
        data=lookup.vectors, rate=1, channel_labels=tuple(f"e{i:04d}" for i in range(len(lookup.ids)))
    )
    save_heeg1(tensor_path, rec)
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        fh.write("row,sample_id\n")
        for i, sid in enumerate(lookup.ids):
            fh.write(f"{i},{sid}\n")


def load_frozen(tensor_path: str, sidecar_path: str) -> FrozenLookup:
    rec = load_heeg1(tensor_path)
    rows: list[tuple[int, str]] = []
    with open(sidecar_path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "row,sample_id":
            raise DataError(f"{sidecar_path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row, sid = line.split(",", 1)
            rows.append((int(row), sid))
    rows.sort()
    if [r for r, _ in rows] != list(range(rec.data.shape[0])):
        raise DataError(f"{sidecar_path}: rows do not cover the tensor")
    return FrozenLookup(ids=tuple(sid for _, sid in rows), vectors=rec.data)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: str, params: MlpEmbedder, mode: str = "none", step: int = 0
) -> None:
    """Versioned binary: magic, u32 header length, JSON header, f32 payload."""
    header = {
        "kind": "mlp",
        "d_in": params.d_in,
        "dim": params.dim,
        "dropout_rate": params.dropout_rate,
        "mode": mode,
        "step": int(step),
        "arrays": [[name, list(getattr(params, name).shape)] for name in PARAM_ORDER],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(HMLC1_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in PARAM_ORDER:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f4").tobytes())


def load_checkpoint(path: str) -> tuple[MlpEmbedder, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(HMLC1_MAGIC))
        if magic != HMLC1_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise DataError(f"{path}: truncated header length")
        (hlen,) = struct.unpack("<I", raw_len)
        blob = fh.read(hlen)
        if len(blob) != hlen:
            raise DataError(f"{path}: truncated header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except ValueError as exc:
            raise DataError(f"{path}: header not JSON: {exc}") from exc
        arrays = {}
        for name, shape in header.get("arrays", []):
            count = int(np.prod(shape))
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise DataError(f"{path}: truncated payload at {name}")
            arrays[name] = (
                np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(shape)
            )
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after payload")
    missing = [n for n in PARAM_ORDER if n not in arrays]
    if missing:
        raise DataError(f"{path}: checkpoint missing arrays {missing}")
    params = MlpEmbedder(dropout_rate=float(header.get("dropout_rate", 0.0)), **arrays)
    return params, header
