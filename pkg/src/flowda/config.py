"""Run configuration: nested YAML on disk, dataclasses in memory."""

from dataclasses import asdict, dataclass, field, fields

import yaml

from .coupling import DATA_DEPENDENT, STRATEGIES
from .errors import ConfigurationError
from .sampler import DEFAULT_KAPPA, DEFAULT_STEPS
from .velocity import TrainConfig


@dataclass
class DataSpec:
    modality: str = "shapes"
    n: int = 4096
    n_test: int = 512
    side: int = 16
    weak_p: float = 0.0
    seed: int = 0
    noise_sigma: float = 0.05


@dataclass
class CodecSpec:
    kind: str = "pca"  # "pca" or "identity"
    latent_dim: int = 32
    refit_decoder: bool = False


@dataclass
class SamplerSpec:
    steps: int = DEFAULT_STEPS
    kappa: float = DEFAULT_KAPPA
    direction: str = "forward"


@dataclass
class EvalSpec:
    raw_features: bool = False
    directions: tuple = ("forward", "backward")
    schedule_sweep: bool = False
    sweep_steps: tuple = (10, 25, 50)


@dataclass
class RunConfig:
    data: DataSpec = field(default_factory=DataSpec)
    codec: CodecSpec = field(default_factory=CodecSpec)
    coupling: str = DATA_DEPENDENT
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)
    checkpoint_every: int = 0
    out: str = "run"

    def validate(self):
        if self.coupling not in STRATEGIES:
            raise ConfigurationError(f"unknown coupling {self.coupling!r}; expected one of {STRATEGIES}")
        if self.data.modality not in ("shapes", "points"):
            raise ConfigurationError(f"unknown modality {self.data.modality!r}")
        if self.codec.kind not in ("pca", "identity"):
            raise ConfigurationError(f"unknown codec kind {self.codec.kind!r}")
        if self.sampler.direction not in ("forward", "backward"):
            raise ConfigurationError(f"unknown direction {self.sampler.direction!r}")
        if self.sampler.steps < 1:
            raise ConfigurationError("sampler.steps must be >= 1")
        if self.sampler.kappa < 0:
            raise ConfigurationError("sampler.kappa must be >= 0")
        if self.checkpoint_every < 0:
            raise ConfigurationError("checkpoint_every must be >= 0")
        self.train.validate()
        return self

    def to_dict(self):
        return _plain(asdict(self))

    def echo(self):
        """Config as stored in artifacts; the output location is left out."""
        d = self.to_dict()
        d.pop("out")
        return d

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, values, where):
    if not isinstance(values, dict):
        raise ConfigurationError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    default = cls()
    for name, value in values.items():
        current = getattr(default, name)
        key = f"{where}.{name}" if where else name
        if hasattr(current, "__dataclass_fields__"):
            kwargs[name] = _build(type(current), value, key)
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value)
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigurationError(f"{key} must be true or false")
            kwargs[name] = value
        elif isinstance(current, (int, float)) and not isinstance(value, (int, float)):
            raise ConfigurationError(f"{key} must be numeric, got {value!r}")
        elif isinstance(current, int) and isinstance(value, float) and not value.is_integer():
            raise ConfigurationError(f"{key} must be an integer, got {value!r}")
        else:
            kwargs[name] = type(current)(value) if current is not None else value
    return cls(**kwargs)


def from_dict(values):
    return _build(RunConfig, values or {}, "").validate()


def load(path):
    with open(path, encoding="utf-8") as fh:
        try:
            values = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from None
    return from_dict(values)


def set_key(cfg, dotted, value):
    """Override one (possibly nested) key, e.g. ``train.total_steps``."""
    d = cfg.to_dict()
    node = d
    *head, last = dotted.split(".")
    for part in head:
        node = node.setdefault(part, {})
    node[last] = value
    return from_dict(d)
