"""Run configuration: flat ``key = value`` sections, strictly validated.

One file drives every pipeline stage. The canonical rendering is stable
(declared key order, repr floats), so a config hash identifies a run and
a saved file reloads to an identical configuration.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, replace

from .analysis import DEFAULT_SPAN_BINS
from .errors import ValidationError
from .hierarchy import DEFAULT_BROAD_WORD_THRESHOLD, DEFAULT_EXCLUDED_NODES
from .metalearn import AdaptConfig
from .sampler import SamplerConfig
from .synth import SynthSpec


@dataclass(frozen=True)
class RunConfig:
    sampler: SamplerConfig = SamplerConfig()
    adapt: AdaptConfig = AdaptConfig()
    embedding_dim: int = 64
    dropout: float = 0.05
    balanced: bool = False
    span_bins: tuple[tuple[int, int], ...] = DEFAULT_SPAN_BINS
    broad_threshold: int = DEFAULT_BROAD_WORD_THRESHOLD
    min_occurrences: int = 23
    val_fraction: float = 0.2
    source_session_prefix: str = ""
    synth: SynthSpec = SynthSpec()
    seed: int = 0
    jobs: int = 0  # 0 = one worker per logical core

    def __post_init__(self) -> None:
        if self.embedding_dim < 1:
            raise ValidationError("embedding_dim must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValidationError("val_fraction must lie in (0, 1)")
        if self.min_occurrences < 1 or self.broad_threshold < 1:
            raise ValidationError("thresholds must be >= 1")
        if self.jobs < 0:
            raise ValidationError("jobs must be >= 0")


# (section, key, kind, reader from RunConfig)
_SCHEMA: tuple[tuple[str, str, str], ...] = (
    ("run", "seed", "int"),
    ("run", "jobs", "int"),
    ("hierarchy", "broad_threshold", "int"),
    ("hierarchy", "excluded_nodes", "names"),
    ("sampler", "min_span", "int"),
    ("sampler", "way_cap", "int"),
    ("sampler", "support_cap", "int"),
    ("sampler", "alpha_low", "float"),
    ("sampler", "alpha_high", "float"),
    ("sampler", "i_val", "int"),
    ("sampler", "i_test", "int"),
    ("sampler", "query_shots_mode", "str"),
    ("splits", "min_occurrences", "int"),
    ("splits", "val_fraction", "float"),
    ("splits", "source_session_prefix", "str"),
    ("model", "embedding_dim", "int"),
    ("model", "dropout", "float"),
    ("adapt", "inner_lr", "float"),
    ("adapt", "inner_steps", "int"),
    ("adapt", "outer_lr", "float"),
    ("adapt", "meta_batch", "int"),
    ("adapt", "total_meta_steps", "int"),
    ("adapt", "weight_decay", "float"),
    ("adapt", "epochs", "int"),
    ("adapt", "batch_size", "int"),
    ("adapt", "baseline_head_init", "str"),
    ("metric", "balanced", "bool"),
    ("analysis", "span_bins", "bins"),
    ("synth", "branching", "int"),
    ("synth", "depth", "int"),
    ("synth", "sigma_level", "float"),
    ("synth", "sigma_obs", "float"),
    ("synth", "samples_per_leaf", "int"),
    ("synth", "n_channels", "int"),
    ("synth", "window_samples", "int"),
    ("synth", "n_subjects", "int"),
)

_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _render(kind: str, value) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    if kind == "names":
        return ", ".join(value)
    if kind == "bins":
        return ", ".join(f"{lo}-{hi}" for lo, hi in value)
    return str(value)


def _parse(kind: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            return _BOOL_WORDS[raw.lower()]
        if kind == "names":
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        if kind == "bins":
            out = []
            for part in raw.split(","):
                part = part.strip()
                if not part:
                    continue
                lo, hi = part.split("-")
                out.append((int(lo), int(hi)))
            return tuple(out)
        return raw
    except (ValueError, KeyError):
        raise ValidationError(f"bad {kind} value {raw!r} for {where}") from None


def _to_flat(cfg: RunConfig) -> dict[tuple[str, str], object]:
    return {
        ("run", "seed"): cfg.seed,
        ("run", "jobs"): cfg.jobs,
        ("hierarchy", "broad_threshold"): cfg.broad_threshold,
        ("hierarchy", "excluded_nodes"): cfg.sampler.excluded_nodes,
        ("sampler", "min_span"): cfg.sampler.min_span,
        ("sampler", "way_cap"): cfg.sampler.way_cap,
        ("sampler", "support_cap"): cfg.sampler.support_cap,
        ("sampler", "alpha_low"): cfg.sampler.alpha_low,
        ("sampler", "alpha_high"): cfg.sampler.alpha_high,
        ("sampler", "i_val"): cfg.sampler.i_val,
        ("sampler", "i_test"): cfg.sampler.i_test,
        ("sampler", "query_shots_mode"): cfg.sampler.query_shots_mode,
        ("splits", "min_occurrences"): cfg.min_occurrences,
        ("splits", "val_fraction"): cfg.val_fraction,
        ("splits", "source_session_prefix"): cfg.source_session_prefix,
        ("model", "embedding_dim"): cfg.embedding_dim,
        ("model", "dropout"): cfg.dropout,
        ("adapt", "inner_lr"): cfg.adapt.inner_lr,
        ("adapt", "inner_steps"): cfg.adapt.inner_steps,
        ("adapt", "outer_lr"): cfg.adapt.outer_lr,
        ("adapt", "meta_batch"): cfg.adapt.meta_batch,
        ("adapt", "total_meta_steps"): cfg.adapt.total_meta_steps,
        ("adapt", "weight_decay"): cfg.adapt.weight_decay,
        ("adapt", "epochs"): cfg.adapt.epochs,
        ("adapt", "batch_size"): cfg.adapt.batch_size,
        ("adapt", "baseline_head_init"): cfg.adapt.baseline_head_init,
        ("metric", "balanced"): cfg.balanced,
        ("analysis", "span_bins"): cfg.span_bins,
        ("synth", "branching"): cfg.synth.branching,
        ("synth", "depth"): cfg.synth.depth,
        ("synth", "sigma_level"): cfg.synth.sigma_level,
        ("synth", "sigma_obs"): cfg.synth.sigma_obs,
        ("synth", "samples_per_leaf"): cfg.synth.samples_per_leaf,
        ("synth", "n_channels"): cfg.synth.n_channels,
        ("synth", "window_samples"): cfg.synth.window_samples,
        ("synth", "n_subjects"): cfg.synth.n_subjects,
    }


def _from_flat(flat: dict[tuple[str, str], object]) -> RunConfig:
    g = flat.__getitem__
    sampler = SamplerConfig(
        min_span=g(("sampler", "min_span")),
        way_cap=g(("sampler", "way_cap")),
        support_cap=g(("sampler", "support_cap")),
        alpha_low=g(("sampler", "alpha_low")),
        alpha_high=g(("sampler", "alpha_high")),
        i_val=g(("sampler", "i_val")),
        i_test=g(("sampler", "i_test")),
        excluded_nodes=g(("hierarchy", "excluded_nodes")),
        query_shots_mode=g(("sampler", "query_shots_mode")),
    )
    adapt = AdaptConfig(
        inner_lr=g(("adapt", "inner_lr")),
        inner_steps=g(("adapt", "inner_steps")),
        outer_lr=g(("adapt", "outer_lr")),
        meta_batch=g(("adapt", "meta_batch")),
        total_meta_steps=g(("adapt", "total_meta_steps")),
        weight_decay=g(("adapt", "weight_decay")),
        epochs=g(("adapt", "epochs")),
        batch_size=g(("adapt", "batch_size")),
        baseline_head_init=g(("adapt", "baseline_head_init")),
    )
    synth = SynthSpec(
        branching=g(("synth", "branching")),
        depth=g(("synth", "depth")),
        sigma_level=g(("synth", "sigma_level")),
        sigma_obs=g(("synth", "sigma_obs")),
        samples_per_leaf=g(("synth", "samples_per_leaf")),
        n_channels=g(("synth", "n_channels")),
        window_samples=g(("synth", "window_samples")),
        n_subjects=g(("synth", "n_subjects")),
        seed=g(("run", "seed")),
    )
    return RunConfig(
        sampler=sampler,
        adapt=adapt,
        embedding_dim=g(("model", "embedding_dim")),
        dropout=g(("model", "dropout")),
        balanced=g(("metric", "balanced")),
        span_bins=g(("analysis", "span_bins")),
        broad_threshold=g(("hierarchy", "broad_threshold")),
        min_occurrences=g(("splits", "min_occurrences")),
        val_fraction=g(("splits", "val_fraction")),
        source_session_prefix=g(("splits", "source_session_prefix")),
        synth=synth,
        seed=g(("run", "seed")),
        jobs=g(("run", "jobs")),
    )


def config_to_text(cfg: RunConfig) -> str:
    """Canonical rendering: schema order, repr floats, lf line ends."""
    flat = _to_flat(cfg)
    lines: list[str] = []
    current = None
    for section, key, kind in _SCHEMA:
        if section != current:
            if current is not None:
                lines.append("")
            lines.append(f"[{section}]")
            current = section
        lines.append(f"{key} = {_render(kind, flat[(section, key)])}")
    return "\n".join(lines) + "\n"


def save_config(path: str, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(config_to_text(cfg))


def parse_config_text(text: str, where: str = "<config>") -> RunConfig:
    """Parse and validate; any key outside the schema is an error."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=where)
    except configparser.Error as exc:
        raise ValidationError(f"{where}: {exc}") from None
    if parser.defaults():
        stray = sorted(parser.defaults())
        raise ValidationError(f"{where}: keys outside any section: {stray}")

    kinds = {(s, k): kind for s, k, kind in _SCHEMA}
    known_sections = {s for s, _, _ in _SCHEMA}
    flat = _to_flat(RunConfig())
    for section in parser.sections():
        if section not in known_sections:
            raise ValidationError(f"{where}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if (section, key) not in kinds:
                raise ValidationError(f"{where}: unknown key [{section}] {key}")
            flat[(section, key)] = _parse(
                kinds[(section, key)], raw, f"[{section}] {key}"
            )
    _check_bins(flat[("analysis", "span_bins")], where)
    return _from_flat(flat)


def _check_bins(edges, where: str) -> None:
    prev_hi = 0
    if not edges:
        raise ValidationError(f"{where}: span_bins must not be empty")
    for lo, hi in edges:
        if lo < 1 or hi < lo or lo <= prev_hi:
            raise ValidationError(f"{where}: bad span bin {lo}-{hi}")
        prev_hi = hi


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, where=path)


def with_run_overrides(
    cfg: RunConfig, seed: int | None = None, jobs: int | None = None
) -> RunConfig:
    """Apply command-line --seed/--jobs on top of a loaded config."""
    out = cfg
    if seed is not None:
        out = replace(out, seed=seed, synth=replace(out.synth, seed=seed))
    if jobs is not None:
        out = replace(out, jobs=jobs)
    return out


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode("utf-8")).hexdigest()


def default_config() -> RunConfig:
    return RunConfig()
