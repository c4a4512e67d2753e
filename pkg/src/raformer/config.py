"""Run configuration: one dataclass, an INI file round-trip, validation.

Config grammar (documented in README as well): an INI file with sections
``[model]``, ``[sampler]``, ``[optimizer]``, ``[data]`` and ``[run]``;
``key = value`` pairs; ints, floats, booleans (true/false) and
comma-separated int lists (``window_sizes = 1,3,5,7``). Unknown keys or
sections are rejected rather than ignored.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields

from .fuser import SamplerMode
from .model import ModelConfig
from .synthetic import SyntheticConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    d_model: int = 64
    n_heads: int = 4
    window_sizes: tuple[int, ...] = (1, 3, 5, 7)
    leap_step: int = 4
    depth: int = 1
    use_window_attention: bool = True
    use_leap: bool = True
    # sampler
    sampler: str = "adaptive"
    n_interactions: int = 10
    # optimizer
    lr: float = 1e-4
    epochs: int = 20
    batch_size: int = 16
    # run
    seed: int = 0
    task: str = "mc"
    train_count: int = 2000
    eval_count: int = 500
    dataset_path: str = ""
    out_dir: str = "runs/default"
    # data
    data: SyntheticConfig = field(default_factory=SyntheticConfig)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model,
            n_heads=self.n_heads,
            window_sizes=self.window_sizes,
            leap_step=self.leap_step,
            depth=self.depth,
            sampler=SamplerMode(self.sampler),
            n_interactions=self.n_interactions,
            task=self.task,
            use_window_attention=self.use_window_attention,
            use_leap=self.use_leap,
            d_in=self.data.d_in,
            s_objects=self.data.s_objects,
            n_patterns=self.data.n_patterns,
            n_open_answers=self.data.n_answer_patterns,
        )


_SECTIONS = {
    "model": ("d_model", "n_heads", "window_sizes", "leap_step", "depth",
              "use_window_attention", "use_leap"),
    "sampler": ("sampler", "n_interactions"),
    "optimizer": ("lr", "epochs", "batch_size"),
    "run": ("seed", "task", "train_count", "eval_count", "dataset_path", "out_dir"),
}
_DATA_FIELDS = tuple(f.name for f in fields(SyntheticConfig))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse(raw: str, kind):
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered not in ("true", "false"):
            raise ConfigError(f"expected true/false, got {raw!r}")
        return lowered == "true"
    if kind is tuple:
        return tuple(int(part) for part in raw.split(",") if part.strip())
    return kind(raw)


def to_ini(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    for section, keys in _SECTIONS.items():
        parser[section] = {key: _format(getattr(cfg, key)) for key in keys}
    parser["data"] = {key: _format(getattr(cfg.data, key)) for key in _DATA_FIELDS}
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def from_ini(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc

    kinds = {f.name: f for f in fields(RunConfig)}
    data_kinds = {f.name: f for f in fields(SyntheticConfig)}
    run_kwargs = {}
    data_kwargs = {}
    for section in parser.sections():
        if section == "data":
            for key, raw in parser.items(section):
                if key not in data_kinds:
                    raise ConfigError(f"unknown key {key!r} in section [data]")
                kind = type(getattr(SyntheticConfig(), key))
                data_kwargs[key] = _parse(raw, kind)
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            default = getattr(RunConfig(), key)
            kind = tuple if isinstance(default, tuple) else type(default)
            run_kwargs[key] = _parse(raw, kind)
    try:
        data_cfg = SyntheticConfig(**data_kwargs)
        cfg = RunConfig(data=data_cfg, **run_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return from_ini(fh.read())


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_ini(cfg))


def validate(cfg: RunConfig) -> list[str]:
    """Collect every config problem before any compute is spent."""
    problems: list[str] = []
    data = cfg.data
    if cfg.task != data.task:
        problems.append(f"run task {cfg.task!r} disagrees with data task {data.task!r}")
    if cfg.task not in ("mc", "oe"):
        problems.append(f"unknown task {cfg.task!r}")
    try:
        SamplerMode(cfg.sampler)
    except ValueError:
        problems.append(f"unknown sampler {cfg.sampler!r}")
    if cfg.d_model % cfg.n_heads != 0:
        problems.append(f"d_model {cfg.d_model} not divisible by n_heads {cfg.n_heads}")
    for w in cfg.window_sizes:
        if w < 1 or w % 2 == 0:
            problems.append(f"window size {w} must be odd and positive")
    if len(cfg.window_sizes) < 1:
        problems.append("need at least one window size")
    if not (1 <= cfg.leap_step <= data.t_frames):
        problems.append(f"leap_step {cfg.leap_step} outside [1, {data.t_frames}]")
    if cfg.depth < 1:
        problems.append(f"depth {cfg.depth} must be >= 1")
    if cfg.n_interactions < 1:
        problems.append(f"n_interactions {cfg.n_interactions} must be >= 1")
    if cfg.n_interactions > data.t_frames * data.q_len:
        problems.append(
            f"n_interactions {cfg.n_interactions} exceeds interaction count "
            f"{data.t_frames * data.q_len}"
        )
    if cfg.lr <= 0:
        problems.append(f"lr {cfg.lr} must be positive")
    if cfg.epochs < 1:
        problems.append(f"epochs {cfg.epochs} must be >= 1")
    if cfg.batch_size < 1:
        problems.append(f"batch_size {cfg.batch_size} must be >= 1")
    if cfg.train_count < 1 or cfg.eval_count < 1:
        problems.append("train_count and eval_count must be >= 1")
    return problems


def validate_or_raise(cfg: RunConfig) -> None:
    problems = validate(cfg)
    if problems:
        raise ConfigError("; ".join(problems))
