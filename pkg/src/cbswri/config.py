"""Plain-text ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Unknown keys are rejected, and
relative paths are resolved against the directory of the config file.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

from .cbs import CbsConfig
from .continuation import FrequencySchedule
from .sketching import SketchConfig
from .wri import WriConfig


class ConfigError(ValueError):
    """Bad or inconsistent configuration."""


PATH_KEYS = ("model", "true_model", "geometry", "data_dir", "out")


@dataclass
class RunConfig:
    # inputs and outputs
    model: Optional[Path] = None
    true_model: Optional[Path] = None
    geometry: Optional[Path] = None
    data_dir: Optional[Path] = None
    out: Path = Path("out")
    model_units: str = "slowness2"
    pad: Union[None, int, str] = None  # None = wavelength rule, "contrast" = contrast rule
    # forward modelling
    frequencies: tuple[float, ...] = ()
    # schedule
    paths: tuple[tuple[float, float], ...] = ()
    df: float = 1.0
    batch_size: int = 2
    overlap: int = 1
    iters_per_batch: int = 10
    # solver
    eta: float = 1e-8
    max_iters: int = 20000
    eps_safety: float = 1.1
    eps_override: Optional[float] = None  # diagnostic: fixes eps, may diverge
    k0_sq_override: Optional[float] = None
    absorb_db: float = 60.0
    threads: int = 1
    # inversion
    lam0: Optional[float] = None
    lam1: float = 1.0
    lam0_fraction: float = 1e-2
    tikhonov_weight: float = 0.0
    bounds: Optional[tuple[float, float]] = None
    # sketching
    sketch_receivers: Union[None, int, dict] = None
    sketch_sources: Optional[int] = None
    seed: int = 0
    # budget without a geometry file
    ns: Optional[int] = None
    nr: Optional[int] = None
    # validation battery
    validate_n: int = 12
    validate_instances: int = 5
    validate_tol: float = 1e-6

    source_file: Optional[Path] = field(default=None, repr=False)

    # ---- derived engine configs ----
    def cbs(self) -> CbsConfig:
        workers = None if self.threads == 1 else (-1 if self.threads == 0 else self.threads)
        return CbsConfig(eta=self.eta, max_iters=self.max_iters, eps_safety=self.eps_safety,
                         eps_override=self.eps_override, k0_sq_override=self.k0_sq_override,
                         absorb_db=self.absorb_db, workers=workers)

    def wri(self) -> WriConfig:
        return WriConfig(lam0=self.lam0, lam1=self.lam1, lam0_fraction=self.lam0_fraction,
                         tikhonov_weight=self.tikhonov_weight, bounds=self.bounds,
                         max_inner_iters=self.iters_per_batch, solver=self.cbs())

    def schedule(self) -> FrequencySchedule:
        if not self.paths:
            raise ConfigError("no frequency paths configured (key 'paths')")
        return FrequencySchedule(self.paths, self.df, self.batch_size, self.overlap, self.iters_per_batch)

    def sketch(self) -> Optional[SketchConfig]:
        if self.sketch_receivers is None and self.sketch_sources is None:
            return None
        return SketchConfig(self.sketch_receivers, self.sketch_sources, self.seed)

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if getattr(self, k) is None]
        if missing:
            raise ConfigError(f"missing required key(s): {', '.join(missing)}")
        for k in keys:
            if k in ("model", "true_model", "geometry", "data_dir"):
                p = getattr(self, k)
                if not Path(p).exists():
                    raise ConfigError(f"{k} path does not exist: {p}")

    def echo(self) -> dict[str, str]:
        """Flat ``config.<key>`` entries for a manifest."""
        out = {}
        for f in fields(self):
            if f.name == "source_file":
                continue
            out[f"config.{f.name}"] = _format(getattr(self, f.name))
        return out


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, dict):
        return ",".join(f"{k:g}:{v}" for k, v in sorted(value.items()))
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return ";".join(f"{a:g}-{b:g}" for a, b in value)
    if isinstance(value, tuple):
        return ",".join(f"{v:g}" for v in value)
    return str(value)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _optional(conv):
    def parse(text):
        return None if text.lower() in ("", "none", "auto") else conv(text)
    return parse


def _paths(text: str):
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        a, sep, b = chunk.partition("-")
        if not sep:
            a = b = chunk
        out.append((float(a), float(b)))
    return tuple(out)


def _pad(text: str):
    text = text.strip().lower()
    if text in ("", "none", "auto"):
        return None
    return "contrast" if text == "contrast" else int(text)


def _bounds(text: str):
    vals = _floats(text)
    if len(vals) != 2:
        raise ValueError("bounds need two numbers 'lo,hi'")
    return vals


def _sketch_size(text: str):
    text = text.strip()
    if text.lower() in ("", "none"):
        return None
    if ":" in text:
        sched = {}
        for item in text.split(","):
            f, _, n = item.partition(":")
            sched[float(f)] = int(n)
        return sched
    return int(text)


_PARSERS = {
    "model": _optional(Path), "true_model": _optional(Path), "geometry": _optional(Path),
    "data_dir": _optional(Path), "out": Path, "model_units": str, "pad": _pad,
    "frequencies": _floats, "paths": _paths, "df": float, "batch_size": int, "overlap": int,
    "iters_per_batch": int, "eta": float, "max_iters": int, "eps_safety": float,
    "eps_override": _optional(float), "k0_sq_override": _optional(float), "absorb_db": float,
    "threads": int, "lam0": _optional(float), "lam1": float, "lam0_fraction": float,
    "tikhonov_weight": float, "bounds": _optional(_bounds), "sketch_receivers": _sketch_size,
    "sketch_sources": _optional(int), "seed": int, "ns": _optional(int), "nr": _optional(int),
    "validate_n": int, "validate_instances": int, "validate_tol": float,
}


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _PARSERS[key](value))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    if base_dir is not None:
        for key in PATH_KEYS:
            p = getattr(cfg, key)
            if p is not None and not Path(p).is_absolute():
                setattr(cfg, key, Path(base_dir) / p)
    check(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config(text, path.parent)
    cfg.source_file = path
    return cfg


def check(cfg: RunConfig) -> None:
    """Validate cross-field constraints by building the engine configs."""
    if cfg.model_units not in ("slowness2", "velocity"):
        raise ConfigError(f"model_units must be 'slowness2' or 'velocity', got {cfg.model_units!r}")
    if cfg.threads < 0:
        raise ConfigError("threads must be >= 0 (0 = all cores)")
    if isinstance(cfg.pad, int) and cfg.pad < 0:
        raise ConfigError("pad must be non-negative")
    try:
        cfg.wri()
        if cfg.paths:
            cfg.schedule()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
