"""Flat ``key = value`` experiment configuration."""
import hashlib
from dataclasses import asdict, dataclass, fields

from ..rainmodel import StreakRanges


@dataclass
class ExperimentConfig:
    seed: int = 0
    count: int = 50
    captions_per_image: int = 1
    image_size: int = 64
    # streak ranges, drawn per sample
    n_layers_min: int = 1
    n_layers_max: int = 3
    density_min: float = 0.02
    density_max: float = 0.08
    sigma_min: float = 1.0
    sigma_max: float = 2.0
    length_min: int = 15
    length_max: int = 40
    angle_min: float = 60.0
    angle_max: float = 120.0
    brightness_min: float = 0.7
    brightness_max: float = 1.0
    beta_min: float = 0.5
    beta_max: float = 2.0
    # guided filter
    radius: int = 8
    eps: float = 0.01
    # captioner dims
    D: int = 128
    k: int = 64
    H: int = 256
    m: int = 64
    grid: int = 4
    max_len: int = 20
    # training
    irs_epochs: int = 40
    irs_patch: int = 64
    irs_batch: int = 4
    irs_lr: float = 1e-3
    cap_steps: int = 400
    cap_batch: int = 25
    cap_lr: float = 2e-3
    svfm_epochs: int = 60
    svfm_batch: int = 10
    svfm_lr: float = 1e-3
    beam: int = 1

    def ranges(self):
        return StreakRanges(
            n_layers=(self.n_layers_min, self.n_layers_max),
            density=(self.density_min, self.density_max),
            sigma=(self.sigma_min, self.sigma_max),
            length=(self.length_min, self.length_max),
            angle=(self.angle_min, self.angle_max),
            brightness=(self.brightness_min, self.brightness_max),
            beta=(self.beta_min, self.beta_max),
        )

    def dumps(self):
        return "".join(f"{k} = {v!r}\n" for k, v in asdict(self).items())

    def hash(self):
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


class ConfigError(ValueError):
    pass


def parse_config(text, base=None):
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values = asdict(base or ExperimentConfig())
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        conv = int if types[key] in (int, "int") else float
        try:
            values[key] = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {key} expects {conv.__name__}, got {raw!r}") from exc
    cfg = ExperimentConfig(**values)
    for name, (lo, hi) in asdict(cfg.ranges()).items():
        if lo > hi:
            raise ConfigError(f"{name}_min exceeds {name}_max")
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())
