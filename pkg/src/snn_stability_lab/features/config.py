"""
Sectioned experiment configuration::

    [experiment]
    master_seed = 7

    [distribution]
    d = 5

    [model]
    m = 256

    [training]
    eta = 0.1
    horizon = 50

Each section maps to a frozen dataclass; values are converted by the field type.
Unknown sections and keys are errors, missing required keys are reported as
``section.key``.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
import math
import os
import types
from dataclasses import dataclass, field, fields
from typing import Any, Union, get_args, get_origin, get_type_hints

from ..exceptions import ConfigurationError
from ..main.activation import ActivationSpec, certify_bounds
from ..main.data import TeacherDistribution, make_teacher, planted_teacher
from ..main.model import ModelState
from ..main.optim import TrainConfig
from .lemmas import CheckSettings
from .seeding import Role, task_seed

__all__ = (
    "ExperimentSection",
    "DistributionSection",
    "ModelSection",
    "TrainingSection",
    "StabilitySection",
    "SweepSection",
    "BudgetSection",
    "OutputSection",
    "BoundsSection",
    "ExperimentConfig",
    "REQUIRED",
)

logger = logging.getLogger(__name__)

REQUIRED: Any = dataclasses.MISSING
"""marker of fields without default"""


@dataclass(frozen=True)
class ExperimentSection:
    master_seed: int = 0
    jobs: int = 1


@dataclass(frozen=True)
class DistributionSection:
    d: int
    m_teacher: int = 8
    teacher_seed: int = 0
    teacher_scale: float = 1.0
    teacher_signs: str = "alternating"
    input_law: str = "sphere"
    noise_std: float = 0.0
    c_x: float = 1.0
    c_y: float = 1.0
    radius: float | None = None
    clip_labels: bool = True
    planted_distance: float | None = None
    """plant the teacher in the student architecture at this distance from W_0"""


@dataclass(frozen=True)
class ModelSection:
    m: int
    activation: str = "tanh"
    signs: str = "alternating"
    init: str = "zeros"
    init_scale: float = 1.0


@dataclass(frozen=True)
class TrainingSection:
    eta: float
    horizon: int
    n: int = 64
    algorithm: str = "gd"
    strict_mode: bool = True
    checkpoint_stride: int | None = None


@dataclass(frozen=True)
class StabilitySection:
    replicates: int = 8
    neighbor_policy: str = "ghost"
    """``ghost``: z'_i from an independent sample; ``copy``: z'_i = z_i"""
    n_mc: int = 100_000


@dataclass(frozen=True)
class SweepSection:
    kind: str = "stability"
    """``stability``: eta, T and m fixed; ``rate``: T and m scaled with n"""
    n_grid: tuple[int, ...] = (64, 128, 256, 512)
    horizon_per_n: float = 0.5
    """rate sweep: T = ceil(horizon_per_n * n)"""
    m_scale: float = 1.0
    """rate sweep: m = min(m_cap, ceil(m_scale * (eta T)^3))"""
    m_cap: int = 8192
    n_mc: int = 20_000


@dataclass(frozen=True)
class BudgetSection:
    max_steps: int | None = None


@dataclass(frozen=True)
class OutputSection:
    directory: str = "runs"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class BoundsSection:
    lam: float | None = None
    """regularization level of the reference (default 1/(eta T))"""
    surrogate_n: int = 20_000
    reference_steps: int = 5_000
    reference_tol: float = 1e-6
    n_mc: int = 100_000


_SECTIONS: dict[str, type] = {
    "experiment": ExperimentSection,
    "distribution": DistributionSection,
    "model": ModelSection,
    "training": TrainingSection,
    "stability": StabilitySection,
    "sweep": SweepSection,
    "budget": BudgetSection,
    "output": OutputSection,
    "check": CheckSettings,
    "bounds": BoundsSection,
}


def _convert(hint: Any, raw: str, where: str) -> Any:
    raw = raw.strip()
    origin = get_origin(hint)
    if origin in (Union, types.UnionType):
        args = [a for a in get_args(hint) if a is not type(None)]
        if raw.lower() in ("", "none"):
            return None
        return _convert(args[0], raw, where)
    if origin is tuple:
        item = get_args(hint)[0]
        return tuple(_convert(item, part, where) for part in raw.split(",") if part.strip())
    try:
        if hint is bool:
            try:
                return configparser.ConfigParser.BOOLEAN_STATES[raw.lower()]
            except KeyError:
                raise ValueError(f"not a boolean: {raw!r}") from None
        if hint is int:
            return int(raw)
        if hint is float:
            value = float(raw)
            if math.isnan(value):
                raise ValueError("nan is not admissible")
            return value
        return raw
    except ValueError as e:
        raise ConfigurationError(f"invalid value for {where}: {e}") from None


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _build_section(name: str, cls: type, items: dict[str, str]) -> Any:
    hints = get_type_hints(cls)
    known = {f.name: f for f in fields(cls)}
    for key in items:
        if key not in known:
            raise ConfigurationError(f"unknown key {name}.{key}")
    values = {}
    for key, f in known.items():
        if key in items:
            values[key] = _convert(hints[key], items[key], f"{name}.{key}")
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigurationError(f"missing required key {name}.{key}")
    return cls(**values)


@dataclass(frozen=True)
class ExperimentConfig:
    """A parsed configuration; command-line overrides are applied with ``with_overrides``."""

    distribution: DistributionSection
    model: ModelSection
    training: TrainingSection
    experiment: ExperimentSection = ExperimentSection()
    stability: StabilitySection = StabilitySection()
    sweep: SweepSection = SweepSection()
    budget: BudgetSection = BudgetSection()
    output: OutputSection = OutputSection()
    check: CheckSettings = CheckSettings()
    bounds: BoundsSection = BoundsSection()
    source: str | None = field(default=None, compare=False)

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> ExperimentConfig:
        """
        :raises ConfigurationError: syntax errors (with line number), unknown sections or keys,
            missing required keys, unconvertible values
        """
        parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string(text, source)
        except configparser.Error as e:
            raise ConfigurationError(f"cannot parse configuration: {e}") from None
        for name in parser.sections():
            if name not in _SECTIONS:
                raise ConfigurationError(f"unknown section [{name}] in {source}")
        sections = {}
        for name, section_cls in _SECTIONS.items():
            items = dict(parser.items(name)) if parser.has_section(name) else {}
            if not parser.has_section(name) and name not in ("distribution", "model", "training"):
                continue
            sections[name] = _build_section(name, section_cls, items)
        logger.debug("configuration %s parsed", source)
        return cls(**sections, source=source)

    @classmethod
    def load(cls, path: str | os.PathLike) -> ExperimentConfig:
        """
        :raises OSError: unreadable file
        """
        with open(path, encoding="utf-8") as f:
            return cls.parse(f.read(), os.fspath(path))

    def with_overrides(
            self,
            seed: int | None = None,
            out: str | None = None,
            jobs: int | None = None,
            budget: int | None = None,
    ) -> ExperimentConfig:
        config = self
        if seed is not None:
            config = dataclasses.replace(config, experiment=dataclasses.replace(config.experiment, master_seed=seed))
        if jobs is not None:
            config = dataclasses.replace(config, experiment=dataclasses.replace(config.experiment, jobs=jobs))
        if out is not None:
            config = dataclasses.replace(config, output=dataclasses.replace(config.output, directory=out))
        if budget is not None:
            config = dataclasses.replace(config, budget=BudgetSection(budget))
        return config

    def snapshot(self) -> str:
        """canonical text of every resolved value (parses back to an equal configuration)"""
        lines = []
        for name in _SECTIONS:
            section = getattr(self, name)
            lines.append(f"[{name}]")
            lines.extend(f"{f.name} = {_format(getattr(section, f.name))}" for f in fields(section))
            lines.append("")
        return "\n".join(lines)

    # -- factories

    @property
    def master_seed(self) -> int:
        return self.experiment.master_seed

    def activation(self) -> ActivationSpec:
        return certify_bounds(self.model.activation)

    def init(self, m: int | None = None) -> ModelState:
        """W_0 and the output signs at width `m` (default: the configured width)"""
        return ModelState.initialize(
            self.distribution.d,
            self.model.m if m is None else m,
            self.activation(),
            signs=self.model.signs,
            init=self.model.init,
            init_scale=self.model.init_scale,
            seed=task_seed(self.master_seed, Role.INIT),
        )

    def teacher_distribution(self, init: ModelState | None = None) -> TeacherDistribution:
        """the data law; a planted teacher is built on `init` (default: ``self.init()``)"""
        ds = self.distribution
        if ds.planted_distance is not None:
            teacher = planted_teacher(init or self.init(), ds.planted_distance, task_seed(ds.teacher_seed, Role.TEACHER))
        else:
            teacher = make_teacher(
                ds.d, ds.m_teacher, self.activation(), ds.teacher_scale,
                task_seed(ds.teacher_seed, Role.TEACHER), ds.teacher_signs,
            )
        return TeacherDistribution(teacher, ds.input_law, ds.noise_std, ds.c_x, ds.c_y, ds.radius, ds.clip_labels)

    def train_config(self, seed: int = 0, **changes) -> TrainConfig:
        tr = self.training
        values = dict(
            eta=tr.eta,
            horizon=tr.horizon,
            algorithm=tr.algorithm,
            seed=seed,
            checkpoint_stride=tr.checkpoint_stride,
            strict_mode=tr.strict_mode,
        )
        values.update(changes)
        return TrainConfig(**values)
