"""Run configuration: YAML text <-> validated :class:`RunConfig`.

Parsing is strict: unknown keys are errors, and every problem found is
reported at once through :class:`ConfigError`.
"""
from __future__ import annotations

from typing import Any, List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .potential_space import make_basis
from .pushforward import make_family
from .sampler import BaseMeasure

SUBCOMMANDS = ("metric", "geodesic", "distance", "extended", "oracle-compare")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FamilyConfig(_Strict):
    kind: Literal["translation", "location-scale-1d", "affine-nd", "rotation-2d", "feature-expansion"]
    n: Optional[int] = None
    min_scale: Optional[float] = None
    radius: Optional[float] = None
    features: Optional[List[dict]] = None

    def build(self):
        consts = {k: v for k, v in self.model_dump().items() if k != "kind" and v is not None}
        return make_family(self.kind, **consts)


class BaseConfig(_Strict):
    kind: Literal["standard-normal", "uniform-box", "user-tabulated-quantile"] = "standard-normal"
    dim: Optional[int] = None
    low: Optional[List[float]] = None
    high: Optional[List[float]] = None
    quantile_u: Optional[List[float]] = None
    quantile_q: Optional[List[float]] = None

    def build(self, default_dim: int) -> BaseMeasure:
        if self.kind == "uniform-box":
            return BaseMeasure.uniform_box(self.low or [], self.high or [])
        if self.kind == "user-tabulated-quantile":
            return BaseMeasure.tabulated_quantile(self.quantile_u or [], self.quantile_q or [])
        return BaseMeasure.standard_normal(self.dim or default_dim)


class BasisConfig(_Strict):
    kind: Literal["polynomial", "gaussian-rbf"] = "polynomial"
    degree: int = 2
    per_axis: Optional[int] = None
    centers: Optional[List[List[float]]] = None
    bandwidth: Optional[float] = None
    ridge: Optional[float] = None

    def build(self, n: int):
        return make_basis(self.kind, n, self.degree, self.per_axis, self.centers, self.bandwidth)


class PotentialConfig(_Strict):
    kind: Literal["constant", "quadratic", "polynomial"]
    value: Optional[float] = None
    center: Optional[List[float]] = None
    scale: Optional[float] = None
    coefficients: Optional[List[float]] = None
    terms: Optional[List[List[Any]]] = None


class InteractionConfig(_Strict):
    kind: Literal["constant", "quadratic", "gaussian"]
    value: Optional[float] = None
    scale: Optional[float] = None
    bandwidth: Optional[float] = None


class EnergiesConfig(_Strict):
    V: Optional[PotentialConfig] = None
    w: Optional[InteractionConfig] = None
    pairing: Optional[Literal["all-pairs", "split-batch"]] = None
    sign: float = -1.0
    floor: float = -1e6


class OptimizerConfig(_Strict):
    tol: float = Field(1e-6, gt=0)
    max_iters: int = Field(500, ge=0)
    gtol_abs: float = Field(1e-8, ge=0)
    fd_step: float = Field(1e-5, gt=0)


class OracleConfig(_Strict):
    p: float = Field(2.0, ge=1)
    m: int = Field(4096, ge=64)


class OutputConfig(_Strict):
    dir: Optional[str] = None
    csv: str = "path.csv"
    summary: str = "summary.json"


class RunConfig(_Strict):
    subcommand: Optional[Literal["metric", "geodesic", "distance", "extended", "oracle-compare"]] = None
    seed: int = Field(ge=0, lt=2**64)
    family: FamilyConfig
    base: BaseConfig = BaseConfig()
    theta: Optional[List[float]] = None
    theta0: Optional[List[float]] = None
    theta1: Optional[List[float]] = None
    N: int = Field(100_000, ge=1)
    K: int = Field(16, ge=2)
    basis: BasisConfig = BasisConfig()
    metric: Literal["wasserstein", "map"] = "wasserstein"
    energies: EnergiesConfig = EnergiesConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    oracle: OracleConfig = OracleConfig()
    output: OutputConfig = OutputConfig()


def _pydantic_messages(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append(f"{loc}: {e['msg']}")
    return out


def semantic_errors(cfg: RunConfig) -> list[str]:
    """Cross-field checks: dimensions, admissible sets, subcommand requirements."""
    errors = []
    try:
        fam = cfg.family.build()
    except (ValueError, TypeError, KeyError) as exc:
        return [f"family: {exc}"]
    try:
        measure = cfg.base.build(fam.n1)
        if measure.dim != fam.n1:
            errors.append(f"base.dim: base dimension {measure.dim} does not match family input dimension {fam.n1}")
    except ValueError as exc:
        errors.append(f"base: {exc}")
    try:
        basis = cfg.basis.build(fam.n)
        if basis.n != fam.n:
            errors.append(f"basis: basis dimension {basis.n} does not match family dimension {fam.n}")
    except ValueError as exc:
        errors.append(f"basis: {exc}")
    names = ("theta",) if cfg.subcommand == "metric" else ("theta0", "theta1")
    for name in names:
        value = getattr(cfg, name)
        if value is None:
            errors.append(f"{name}: required for subcommand {cfg.subcommand!r}")
            continue
        if len(value) != fam.d:
            errors.append(f"{name}: expected {fam.d} entries for {fam.kind}, got {len(value)}")
        elif not fam.is_admissible(value):
            errors.append(f"{name}: {value} outside admissible set of {fam.kind} ({fam.admissible_set()})")
    if cfg.subcommand == "oracle-compare" and fam.n != 1:
        errors.append(f"family: oracle-compare needs a one-dimensional family, {fam.kind} has n={fam.n}")
    return errors


def parse_config(text: str, subcommand: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    """Parse YAML text into a validated config; raises :class:`ConfigError` with every problem."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"<yaml>: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: configuration must be a mapping"])
    if subcommand is not None:
        if raw.get("subcommand") not in (None, subcommand):
            raise ConfigError([f"subcommand: config says {raw['subcommand']!r} but {subcommand!r} was requested"])
        raw["subcommand"] = subcommand
    if seed is not None:
        raw["seed"] = seed
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_pydantic_messages(exc)) from None
    if cfg.subcommand is None:
        raise ConfigError(["subcommand: missing (give it in the config or on the command line)"])
    errors = semantic_errors(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def render(cfg: RunConfig) -> str:
    """YAML echo of a config; ``parse_config(render(c)) == c``."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
