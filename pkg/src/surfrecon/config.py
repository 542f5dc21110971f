"""Pipeline configuration: INI file with sections, validated before any work starts."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .network import NetworkConfig
from .octree import MAX_DEPTH
from .partition import PartitionConfig
from .tangent import TangentConfig

WORKERS_ENV = "SURFRECON_WORKERS"


@dataclass(frozen=True)
class OctreeSection:
    depth: int = 6
    normalize_padding: float = 0.05


@dataclass(frozen=True)
class PartitionSection:
    max_batch: int = 300_000
    pad: float | None = None  # None: derived from the classifier's reach
    max_vertex_batch: int | None = None


@dataclass(frozen=True)
class TangentSection:
    extent: int = 3
    radius_scale: float = 4.0
    radius_growth: float = 2.0
    max_per_pixel: int = 8


@dataclass(frozen=True)
class NetworkSection:
    point_widths: tuple = (16, 32, 64)
    vertex_widths: tuple = (64, 32)
    slope: float = 0.1
    convs_per_scale: int = 2
    init_seed: int = 0


@dataclass(frozen=True)
class TrainSection:
    lr: float = 1e-3
    steps: int = 2000
    seed: int = 0
    val_split: float = 0.0
    eval_every: int = 100
    checkpoint_every: int = 0
    crop_vertices: int = 0  # train on random vertex boxes of about this many vertices; 0 = whole shapes


@dataclass(frozen=True)
class BaselineSection:
    radius_scale: float = 2.0  # radius = radius_scale / 2^depth


@dataclass(frozen=True)
class SmoothingSection:
    lam: float = 0.5
    mu: float = -0.53
    iterations: int = 10


@dataclass(frozen=True)
class DataSection:
    points: int = 50_000
    noise: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class EvaluateSection:
    samples: int = 100_000
    seed: int = 0


@dataclass(frozen=True)
class RuntimeSection:
    workers: int = 1


@dataclass(frozen=True)
class PipelineConfig:
    octree: OctreeSection = field(default_factory=OctreeSection)
    partition: PartitionSection = field(default_factory=PartitionSection)
    tangent: TangentSection = field(default_factory=TangentSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    train: TrainSection = field(default_factory=TrainSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    smoothing: SmoothingSection = field(default_factory=SmoothingSection)
    data: DataSection = field(default_factory=DataSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    runtime: RuntimeSection = field(default_factory=RuntimeSection)

    # sections that do not change any output bit
    _NEUTRAL = ("partition", "runtime")

    def __post_init__(self):
        validate(self)

    # -- derived objects ----------------------------------------------------

    @property
    def depth(self) -> int:
        return self.octree.depth

    def tangent_config(self) -> TangentConfig:
        t = self.tangent
        return TangentConfig(t.extent, t.radius_scale, t.radius_growth, t.max_per_pixel)

    def network_config(self) -> NetworkConfig:
        n = self.network
        return NetworkConfig(n.point_widths, n.vertex_widths, self.tangent.extent, n.slope,
                             n.convs_per_scale, self.depth)

    def baseline_radius(self) -> float:
        return self.baseline.radius_scale / (1 << self.depth)

    def partition_config(self, pad: float) -> PartitionConfig:
        p = self.partition
        return PartitionConfig(p.max_batch, p.pad if p.pad is not None else pad, p.max_vertex_batch)

    def replace(self, **overrides) -> "PipelineConfig":
        """``replace(octree={"depth": 7})`` style section updates."""
        kw = {}
        for name, values in overrides.items():
            kw[name] = dataclasses.replace(getattr(self, name), **values)
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: dataclasses.asdict(getattr(self, f.name)) for f in fields(self)}

    def hash(self) -> str:
        """Digest of every setting that can change an output file."""
        d = {k: v for k, v in self.to_dict().items() if k not in self._NEUTRAL}
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.blake2b(blob, digest_size=8).hexdigest()


def validate(cfg: PipelineConfig) -> None:
    o, p, t, n, tr = cfg.octree, cfg.partition, cfg.tangent, cfg.network, cfg.train
    checks = [
        (3 <= o.depth <= MAX_DEPTH, f"octree.depth must be in [3, {MAX_DEPTH}], got {o.depth}"),
        (0 <= o.normalize_padding < 0.5, "octree.normalize_padding must be in [0, 0.5)"),
        (p.max_batch >= 1, "partition.max_batch must be positive"),
        (p.pad is None or p.pad >= 0, "partition.pad must be non-negative"),
        (p.max_vertex_batch is None or p.max_vertex_batch >= 1,
         "partition.max_vertex_batch must be positive"),
        (t.extent >= 1 and t.extent % 2 == 1, "tangent.extent must be a positive odd integer"),
        (t.radius_scale > 0 and t.radius_growth > 0, "tangent radii must be positive"),
        (t.max_per_pixel >= 0, "tangent.max_per_pixel must be >= 0 (0 = no cap)"),
        (len(n.point_widths) == 3 and min(n.point_widths) >= 1,
         "network.point_widths needs three positive widths"),
        (len(n.vertex_widths) == 2 and min(n.vertex_widths) >= 1,
         "network.vertex_widths needs two positive widths"),
        (n.slope >= 0, "network.slope must be non-negative"),
        (n.convs_per_scale >= 1, "network.convs_per_scale must be positive"),
        (tr.lr > 0, "train.lr must be positive"),
        (tr.steps >= 0, "train.steps must be non-negative"),
        (0 <= tr.val_split < 1, "train.val_split must be in [0, 1)"),
        (tr.eval_every >= 1, "train.eval_every must be positive"),
        (tr.checkpoint_every >= 0, "train.checkpoint_every must be non-negative"),
        (tr.crop_vertices >= 0, "train.crop_vertices must be non-negative"),
        (cfg.baseline.radius_scale > 0, "baseline.radius_scale must be positive"),
        (cfg.smoothing.lam > 0, "smoothing.lam must be positive"),
        (cfg.smoothing.mu < 0, "smoothing.mu must be negative"),
        (cfg.smoothing.iterations >= 0, "smoothing.iterations must be non-negative"),
        (cfg.data.points >= 1, "data.points must be positive"),
        (cfg.data.noise >= 0, "data.noise must be non-negative"),
        (cfg.evaluate.samples >= 1, "evaluate.samples must be positive"),
        (cfg.runtime.workers >= 1, "runtime.workers must be positive"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


def _convert(raw: str, target, key: str):
    raw = raw.strip()
    try:
        if isinstance(target, tuple) or target is tuple:
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if isinstance(target, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(target, int) or target is int:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def _section_from(cls, items: dict, section: str):
    defaults = cls()
    known = {f.name for f in fields(cls)}
    values = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
        current = getattr(defaults, key)
        if raw.strip().lower() in ("", "none", "auto") and key in ("pad", "max_vertex_batch"):
            values[key] = None
        elif key in ("pad",):
            values[key] = _convert(raw, 0.0, f"{section}.{key}")
        elif key in ("max_vertex_batch",):
            values[key] = _convert(raw, 0, f"{section}.{key}")
        else:
            values[key] = _convert(raw, current, f"{section}.{key}")
    return cls(**values)


_SECTIONS = {f.name: f.default_factory for f in fields(PipelineConfig)}


def parse_config(text: str, overrides: dict | None = None) -> PipelineConfig:
    """Parse INI text; ``overrides`` maps "section.key" to raw string values."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    data: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        data[section] = dict(cp.items(section))
    for dotted, raw in (overrides or {}).items():
        if raw is None:
            continue
        section, _, key = dotted.partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section in override {dotted}")
        data.setdefault(section, {})[key] = str(raw)
    kw = {name: _section_from(factory, data.get(name, {}), name)
          for name, factory in _SECTIONS.items()}
    try:
        return PipelineConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> PipelineConfig:
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    overrides = dict(overrides or {})
    if "runtime.workers" not in overrides or overrides["runtime.workers"] is None:
        env = os.environ.get(WORKERS_ENV)
        if env and "workers" not in _runtime_keys(text):
            overrides["runtime.workers"] = env
    return parse_config(text, overrides)


def _runtime_keys(text: str) -> set:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error:
        return set()
    return set(cp["runtime"]) if cp.has_section("runtime") else set()


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for name, values in cfg.to_dict().items():
        lines.append(f"[{name}]")
        for k, v in values.items():
            if isinstance(v, (list, tuple)):
                v = ", ".join(str(x) for x in v)
            elif v is None:
                v = "auto"
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)
