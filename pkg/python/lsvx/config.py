"""Run configuration for the lsvx command line.

A run is described by one JSON document with four sections (model, task,
oracle, output). Loading validates the schema and every expansion
precondition that can be checked before a model is built, so errors surface
with the violated inequality before any heavy work starts.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, TypeVar

from lsvx.errors import ConfigError, ModelConditionError
from lsvx.expansions import ExpansionKind, default_epsilon, require_epsilon
from lsvx.generators import SVKind, SVModel
from lsvx.levy_kernel import Activity, LevyDensity
from lsvx.oracles import MCConfig, Scheme, resolve_scheme

CACHE_ENV = "LSVX_CACHE_DIR"

T = TypeVar("T")


class LevyKind(str, Enum):
    KOU = "kou"
    MERTON = "merton"
    CGMY = "cgmy"


class TaskKind(str, Enum):
    TAIL = "tail"
    CALL = "call"
    DENSITY = "density"
    SMILE = "smile"
    VERIFY = "verify"


class OutputFormat(str, Enum):
    CSV = "csv"
    DAT = "dat"


_LEVY_PARAMS = {
    LevyKind.KOU: ("lam", "p", "eta1", "eta2"),
    LevyKind.MERTON: ("lam", "m", "delta"),
    LevyKind.CGMY: ("C", "G", "M", "Y"),
}

_SV_PARAMS = {
    SVKind.HESTON: ("chi", "theta", "v", "y0"),
    SVKind.EXP_OU: ("chi", "theta", "v", "y0"),
    SVKind.CONSTANT: ("sigma0",),
}

ALL_CRITERIA = tuple(range(1, 12))


@dataclass
class LevySection:
    kind: LevyKind = LevyKind.KOU
    params: dict[str, float] = field(
        default_factory=lambda: {"lam": 1.0, "p": 0.6, "eta1": 5.0, "eta2": 10.0}
    )

    def build(self) -> LevyDensity:
        _require_params(f"levy '{self.kind.value}'", self.params, _LEVY_PARAMS[self.kind])
        prm = self.params
        if self.kind is LevyKind.KOU:
            return LevyDensity.kou(prm["lam"], prm["p"], prm["eta1"], prm["eta2"])
        if self.kind is LevyKind.MERTON:
            return LevyDensity.merton(prm["lam"], prm["m"], prm["delta"])
        return LevyDensity.cgmy(prm["C"], prm["G"], prm["M"], prm["Y"])


@dataclass
class SVSection:
    kind: SVKind = SVKind.HESTON
    params: dict[str, float] = field(
        default_factory=lambda: {"chi": 2.0, "theta": 0.09, "v": 0.3, "y0": 0.04}
    )

    def build(self) -> SVModel:
        if self.kind not in _SV_PARAMS:
            raise ConfigError(f"sv kind '{self.kind.value}' cannot be configured from JSON")
        _require_params(f"sv '{self.kind.value}'", self.params, _SV_PARAMS[self.kind])
        prm = self.params
        if self.kind is SVKind.HESTON:
            return SVModel.heston(prm["chi"], prm["theta"], prm["v"], prm["y0"])
        if self.kind is SVKind.EXP_OU:
            return SVModel.exp_ou(prm["chi"], prm["theta"], prm["v"], prm["y0"])
        return SVModel.constant(prm["sigma0"])


@dataclass
class ModelSection:
    """Jump density, volatility model and optional eps override.

    ``sigma0`` is the Brownian volatility of the exponential Levy model used
    by the smile task and the Fourier oracle.
    """

    levy: LevySection = field(default_factory=LevySection)
    sv: SVSection = field(default_factory=SVSection)
    epsilon: float | None = None
    sigma0: float = 0.0


@dataclass
class TaskSection:
    kind: TaskKind = TaskKind.TAIL
    z_grid: list[float] = field(default_factory=lambda: [0.5])
    t_grid: list[float] = field(default_factory=lambda: [0.001, 0.002, 0.005, 0.01])
    order: int = 2
    criteria: list[int] = field(default_factory=lambda: list(ALL_CRITERIA))


@dataclass
class OracleSection:
    paths: int = 200_000
    seed: int = 0
    steps_per_unit: int | None = None
    scheme: Scheme | None = None
    delta: float | None = None
    antithetic: bool = True
    workers: int = 1
    fourier: bool = True

    def mc_config(self) -> MCConfig:
        return MCConfig(
            paths=self.paths,
            seed=self.seed,
            steps_per_unit=self.steps_per_unit,
            scheme=self.scheme,
            delta=self.delta,
            antithetic=self.antithetic,
            workers=self.workers,
        )


@dataclass
class OutputSection:
    directory: str = "lsvx-out"
    formats: list[OutputFormat] = field(
        default_factory=lambda: [OutputFormat.CSV, OutputFormat.DAT]
    )


@dataclass
class RunConfig:
    """Complete description of one CLI run.

    Attributes:
        model: Levy density, SV model, eps override and exp-Levy sigma0.
        task: What to compute and on which z/t grids.
        oracle: Monte Carlo settings and whether Fourier oracles run.
        output: Output directory and file formats.
    """

    model: ModelSection = field(default_factory=ModelSection)
    task: TaskSection = field(default_factory=TaskSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_json(self) -> str:
        """Serialize to a JSON string; enums are stored by value."""
        return json.dumps(_plain(asdict(self)), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, data: str) -> RunConfig:
        """Parse and validate a JSON document."""
        try:
            raw = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown("config", raw, cls)
        model_raw = _mapping("model", raw.get("model", {}))
        _reject_unknown("model", model_raw, ModelSection)
        model = ModelSection(
            levy=_section(LevySection, "model.levy", model_raw.get("levy", {})),
            sv=_section(SVSection, "model.sv", model_raw.get("sv", {})),
            epsilon=_optional_float("model.epsilon", model_raw.get("epsilon")),
            sigma0=float(_number("model.sigma0", model_raw.get("sigma0", 0.0))),
        )
        config = cls(
            model=model,
            task=_section(TaskSection, "task", raw.get("task", {})),
            oracle=_section(OracleSection, "oracle", raw.get("oracle", {})),
            output=_section(OutputSection, "output", raw.get("output", {})),
        )
        config.validate()
        return config

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)

    def with_overrides(
        self,
        *,
        order: int | None = None,
        epsilon: float | None = None,
        seed: int | None = None,
        out: str | None = None,
    ) -> RunConfig:
        """Copy with CLI overrides applied, re-validated."""
        config = self
        if order is not None:
            config = replace(config, task=replace(config.task, order=order))
        if epsilon is not None:
            config = replace(config, model=replace(config.model, epsilon=epsilon))
        if seed is not None:
            config = replace(config, oracle=replace(config.oracle, seed=seed))
        if out is not None:
            config = replace(config, output=replace(config.output, directory=out))
        config.validate()
        return config

    def validate(self) -> None:
        """Check parameter guards and expansion preconditions.

        Raises:
            ConfigError: Bad values or grids.
            ModelConditionError: A standing hypothesis or eps bound fails.
        """
        density = self.model.levy.build()
        sv = self.model.sv.build()
        task = self.task
        if task.order < 1 or task.order > 4:
            raise ConfigError(f"task.order must be in 1..4; got {task.order}")
        if not task.z_grid:
            raise ConfigError("task.z_grid must not be empty")
        if any(t <= 0.0 for t in task.t_grid):
            raise ConfigError("task.t_grid values must be > 0")
        if self.model.sigma0 < 0.0:
            raise ConfigError(f"model.sigma0 must be >= 0; got {self.model.sigma0}")
        eps = self.model.epsilon
        if eps is not None and not 0.0 < eps < 1.0:
            raise ConfigError(f"model.epsilon must lie in (0, 1); got {eps}")
        if self.oracle.delta is not None and eps is not None and not self.oracle.delta < eps:
            raise ConfigError(f"oracle.delta must be < epsilon; got {self.oracle.delta} >= {eps}")
        resolve_scheme(sv, self.oracle.scheme)
        if task.kind is TaskKind.VERIFY:
            bad = [c for c in task.criteria if c not in ALL_CRITERIA]
            if bad:
                raise ConfigError(f"unknown criteria {bad}; valid ids are 1..11")
            return
        if task.kind is TaskKind.SMILE:
            if any(k <= 0.0 for k in task.z_grid):
                raise ConfigError("smile task needs log-moneyness values kappa > 0 in z_grid")
            return
        for z in task.z_grid:
            kind = expansion_kind(task.kind, z)
            if task.kind is TaskKind.DENSITY and density.activity is not Activity.INFINITE:
                raise ModelConditionError(
                    "density expansion requires an infinite-activity density with "
                    "liminf eta^(Y-2) int_{|z|<=eta} z^2 s(z) dz > 0; "
                    f"'{density.kind.value}' has finite activity"
                )
            if kind in (ExpansionKind.CALL_OTM, ExpansionKind.CALL_ITM):
                sv.check_bounded()
            level = default_epsilon(kind, z, task.order) if eps is None else eps
            require_epsilon(kind, z, task.order, level)

    def epsilon_for(self, z: float) -> float:
        kind = expansion_kind(self.task.kind, z)
        if self.model.epsilon is not None:
            return self.model.epsilon
        return default_epsilon(kind, z, self.task.order)


def expansion_kind(task: TaskKind, z: float) -> ExpansionKind:
    """Expansion family for a task at grid point z (z = 0 is rejected)."""
    if z == 0.0 or not math.isfinite(z):
        raise ConfigError(f"z = {z} is not allowed; at-the-money z = 0 is outside the expansion")
    if task is TaskKind.TAIL:
        if z < 0.0:
            raise ConfigError(f"tail task needs z > 0; got {z}")
        return ExpansionKind.TAIL
    if task is TaskKind.CALL:
        return ExpansionKind.CALL_OTM if z < 0.0 else ExpansionKind.CALL_ITM
    if task is TaskKind.DENSITY:
        return ExpansionKind.DENSITY
    raise ConfigError(f"task '{task.value}' has no expansion family")


def cache_dir() -> str | None:
    """Kernel cache directory from LSVX_CACHE_DIR; None disables caching."""
    value = os.environ.get(CACHE_ENV, "").strip()
    return value or None


# ---------------------------------------------------------------------------
# Schema helpers
# ---------------------------------------------------------------------------


def _plain(obj: Any) -> Any:
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    return obj


def _mapping(name: str, value: Any) -> dict[str, Any]:
    if not isinstance(value, dict):
        raise ConfigError(f"'{name}' must be an object")
    return value


def _reject_unknown(name: str, raw: dict[str, Any], cls: type) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {unknown}; expected some of {sorted(known)}")


def _number(name: str, value: Any) -> float | int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{name}' must be a number; got {value!r}")
    return value


def _optional_float(name: str, value: Any) -> float | None:
    return None if value is None else float(_number(name, value))


def _require_params(what: str, params: dict[str, float], names: tuple[str, ...]) -> None:
    missing = [n for n in names if n not in params]
    extra = sorted(set(params) - set(names))
    if missing or extra:
        raise ConfigError(
            f"{what} needs parameters {list(names)}; missing {missing}, unknown {extra}"
        )


def _coerce(name: str, typ: Any, value: Any) -> Any:
    """Convert a JSON value to ``typ`` when it is an enum."""
    if isinstance(typ, type) and issubclass(typ, Enum):
        try:
            return typ(value)
        except ValueError as exc:
            choices = [m.value for m in typ]
            raise ConfigError(f"'{name}' must be one of {choices}; got {value!r}") from exc
    return value


_ENUM_FIELDS: dict[tuple[type, str], type[Enum]] = {
    (LevySection, "kind"): LevyKind,
    (SVSection, "kind"): SVKind,
    (TaskSection, "kind"): TaskKind,
    (OracleSection, "scheme"): Scheme,
}

_INT_FIELDS = {"order", "paths", "seed", "workers", "steps_per_unit"}
_BOOL_FIELDS = {"antithetic", "fourier"}


def _section(cls: type[T], name: str, raw: Any) -> T:
    raw = _mapping(name, raw)
    _reject_unknown(name, raw, cls)
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        label = f"{name}.{key}"
        enum_type = _ENUM_FIELDS.get((cls, key))
        if enum_type is not None:
            optional = key == "scheme" and value is None
            kwargs[key] = None if optional else _coerce(label, enum_type, value)
        elif key == "formats":
            if not isinstance(value, list):
                raise ConfigError(f"'{label}' must be a list")
            kwargs[key] = [_coerce(label, OutputFormat, v) for v in value]
        elif key == "params":
            params = _mapping(label, value)
            kwargs[key] = {k: float(_number(f"{label}.{k}", v)) for k, v in params.items()}
        elif key in ("z_grid", "t_grid"):
            if not isinstance(value, list):
                raise ConfigError(f"'{label}' must be a list of numbers")
            kwargs[key] = [float(_number(label, v)) for v in value]
        elif key == "criteria":
            if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
                raise ConfigError(f"'{label}' must be a list of integers")
            kwargs[key] = list(value)
        elif key in _INT_FIELDS:
            if value is None and key == "steps_per_unit":
                kwargs[key] = None
            elif isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"'{label}' must be an integer; got {value!r}")
            else:
                kwargs[key] = value
        elif key in _BOOL_FIELDS:
            if not isinstance(value, bool):
                raise ConfigError(f"'{label}' must be true or false; got {value!r}")
            kwargs[key] = value
        elif key == "directory":
            if not isinstance(value, str):
                raise ConfigError(f"'{label}' must be a string")
            kwargs[key] = value
        else:
            kwargs[key] = _optional_float(label, value)
    return cls(**kwargs)
