"""Pipeline configuration: one nested dataclass tree holding every stage's
parameters, strict dict (de)serialization, and resolved-config emission.

Precedence is flags > config file > defaults; the CLI applies flag values
on top of a config loaded here. Unknown keys are rejected with their
dotted path so typos fail loudly instead of silently running defaults.
Every artifact-producing command writes the resolved config next to its
outputs for provenance.
"""

import dataclasses
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from .fitting import FieldSpec, FitConfig
from .formats import atomic_write_bytes
from .meshops import EvalConfig
from .retexture import DEFAULT_JITTER_RADIUS


@dataclass
class RenderSettings:
    size: int = 512
    n_samples: int = 96
    mode: str = "midpoint"

    def __post_init__(self):
        if self.mode not in ("midpoint", "stratified"):
            raise ValueError(f"mode must be midpoint or stratified, got {self.mode!r}")
        if self.size < 1 or self.n_samples < 1:
            raise ValueError("size and n_samples must be >= 1")


@dataclass
class DelinifySettings:
    sigma: float = 1.0
    k: float = 1.6
    tau: float = 0.05
    dilate_px: int = 1
    radius: int = 3


@dataclass
class RetextureSettings:
    v_thresh: float = 0.5
    n_jitter: int = 4
    jitter_radius: float = DEFAULT_JITTER_RADIUS


@dataclass
class MeshSettings:
    grid: int = 256
    iso: float = 10.0


@dataclass
class PipelineConfig:
    field: FieldSpec = dc_field(default_factory=FieldSpec)
    fit: FitConfig = dc_field(default_factory=FitConfig)
    render: RenderSettings = dc_field(default_factory=RenderSettings)
    delinify: DelinifySettings = dc_field(default_factory=DelinifySettings)
    retexture: RetextureSettings = dc_field(default_factory=RetextureSettings)
    mesh: MeshSettings = dc_field(default_factory=MeshSettings)
    evaluate: EvalConfig = dc_field(default_factory=EvalConfig)
    threads: int = 0  # 0 = leave numba threading alone


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ValueError(f"config section '{path.rstrip('.') or cls.__name__}' must be a "
                         f"mapping, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in data.items():
        dotted = f"{path}{key}"
        if key not in names:
            raise ValueError(f"unknown config key '{dotted}'")
        f = names[key]
        if dataclasses.is_dataclass(f.type):
            kwargs[key] = _build(f.type, val, dotted + ".")
        elif f.type is tuple or isinstance(f.default, tuple):
            kwargs[key] = tuple(val)
        else:
            kwargs[key] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ValueError(f"invalid config section '{path.rstrip('.') or 'root'}': {e}") from e


def config_from_dict(data: dict) -> PipelineConfig:
    """Strict construction; unknown keys raise with their dotted path."""
    return _build(PipelineConfig, data or {}, "")


def config_to_dict(cfg: PipelineConfig) -> dict:
    def clean(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: clean(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        return obj

    return clean(cfg)


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValueError(f"config file {path!r} is not valid JSON: {e}") from e
    return config_from_dict(data)


def apply_override(data: dict, dotted: str, value):
    """Set data['a']['b']... = value for dotted path 'a.b....' in place."""
    keys = dotted.split(".")
    cur = data
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
    cur[keys[-1]] = value


def resolved_config_path(artifact) -> Path:
    """Where the resolved config for an artifact lives: dir/resolved_config.json
    for directories, <name>.config.json beside plain files."""
    p = Path(artifact)
    if p.is_dir():
        return p / "resolved_config.json"
    return p.with_name(p.name + ".config.json")


def write_resolved_config(artifact, cfg: PipelineConfig, extra: dict = None) -> Path:
    out = resolved_config_path(artifact)
    payload = config_to_dict(cfg)
    if extra:
        payload = {**payload, **extra}
    body = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(out, body.encode("utf-8"))
    return out
