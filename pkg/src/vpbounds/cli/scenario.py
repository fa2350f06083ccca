"""Scenario files: YAML text validated into pydantic models, with condition reports attached."""
from __future__ import annotations

import math
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from ..background import BackgroundProfile, check_condition_I
from ..extfield import ExternalField, check_condition_III
from ..kinetic import InitialPerturbation, check_conditions_II_IV
from ..reports import ConditionReport


class ScenarioError(Exception):
    exit_code = 2


class ScenarioParseError(ScenarioError):
    pass


class ScenarioValidationError(ScenarioError):
    def __init__(self, location: str, message: str):
        self.location = location
        super().__init__(f"{location}: {message}")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class GridConfig(_Strict):
    r_max: float = Field(40.0, gt=0)
    N_r: int = Field(256, ge=16)
    N_u: int = Field(32, ge=2)
    N_mu: int = Field(16, ge=2)
    extrapolation_exponent: float = 6.0


class TimeConfig(_Strict):
    t_end: float = Field(1.0, gt=0)
    dt: float = Field(0.02, gt=0)
    snapshot_stride: int = Field(5, ge=1)

    @model_validator(mode="after")
    def _window(self):
        if self.t_end < self.dt:
            raise ValueError("t_end must be at least dt")
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("t_end must be an integer multiple of dt")
        return self


class BackgroundConfig(_Strict):
    W: float = Field(1.0, gt=0)
    kappa: float = 1.0
    profile_kind: Literal["smooth_bump", "c1_bump"] = "smooth_bump"

    def build(self) -> BackgroundProfile:
        return BackgroundProfile(self.W, self.kappa, self.profile_kind)


class PerturbationConfig(_Strict):
    family: Literal["gaussian_bump", "algebraic_r6"] = "algebraic_r6"
    amplitude: float = 0.05
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    spatial_scale: float = Field(1.0, gt=0)
    # None means the background support radius W
    velocity_radius: Optional[float] = Field(None, gt=0)

    def build(self, background: BackgroundProfile) -> InitialPerturbation:
        w = background.W if self.velocity_radius is None else self.velocity_radius
        return InitialPerturbation(self.family, self.amplitude, tuple(self.center), self.spatial_scale, w)


class ExtFieldConfig(_Strict):
    kind: Literal["zero", "dipole", "coulomb_tail"] = "zero"
    amplitude: float = 0.0
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    cutoff_radius: float = Field(1.0, gt=0)

    def build(self) -> ExternalField:
        return ExternalField(self.kind, self.amplitude, tuple(self.axis), self.cutoff_radius)


class PicardConfig(_Strict):
    tol: float = Field(1e-6, gt=0)
    max_iter: int = Field(12, ge=1)
    scheme: Literal["gauss_seidel", "jacobi"] = "gauss_seidel"


class ProbeConfig(_Strict):
    x: tuple[float, float, float] = (1.0, 0.0, 0.0)
    v: tuple[float, float, float] = (0.3, 0.2, 0.0)


class GBUConfig(_Strict):
    enabled: bool = True
    samples: int = Field(20000, ge=100)
    probe: ProbeConfig = ProbeConfig()


class DiagnosticsConfig(_Strict):
    p: float = 3.5
    q_list: list[float] = [3.0, 3.5, 6.0]
    lemma_q: float = 3.5
    n_qf_probes: int = Field(256, ge=1)
    n_fconst_probes: int = Field(20, ge=1)
    decay_fit_range: tuple[float, float] = (10.0, 40.0)
    gbu: GBUConfig = GBUConfig()

    @model_validator(mode="after")
    def _ranges(self):
        if not 3.0 < self.p < 4.0:
            raise ValueError("p must lie in (3, 4)")
        if any(q < 0 for q in self.q_list) or not self.q_list:
            raise ValueError("q_list must be a nonempty list of nonnegative exponents")
        if len(set(self.q_list)) != len(self.q_list):
            raise ValueError("q_list entries must be distinct")
        lo, hi = self.decay_fit_range
        if not 0 < lo < hi:
            raise ValueError("decay_fit_range must be increasing and positive")
        return self


class Scenario(_Strict):
    mode: Literal["radial", "cartesian3d"] = "radial"
    seed: int = 0
    grid: GridConfig = GridConfig()
    time: TimeConfig = TimeConfig()
    background: BackgroundConfig = BackgroundConfig()
    perturbation: PerturbationConfig = PerturbationConfig()
    extfield: ExtFieldConfig = ExtFieldConfig()
    picard: PicardConfig = PicardConfig()
    diagnostics: DiagnosticsConfig = DiagnosticsConfig()

    _reports: dict = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def _norm_exponents(self):
        # past the tail exponent the extrapolated norm is infinite by construction
        if max(self.diagnostics.q_list) > self.grid.extrapolation_exponent:
            raise ValueError("diagnostics.q_list entries must not exceed grid.extrapolation_exponent")
        return self

    @property
    def reports(self) -> dict[str, ConditionReport]:
        return self._reports

    def check_runnable(self) -> None:
        """Raise ScenarioValidationError if `run` cannot execute this scenario."""
        if self.mode != "radial":
            raise ScenarioValidationError("mode", "run supports radial mode only; cartesian3d is for the oracle "
                                                  "and validate subcommands")
        if any(c != 0.0 for c in self.perturbation.center):
            raise ScenarioValidationError("perturbation.center", "radial mode needs a perturbation centred at 0")
        if self.extfield.kind == "dipole":
            raise ScenarioValidationError("extfield.kind", "the dipole field breaks radial symmetry")


def _location(err: ValidationError) -> tuple[str, str]:
    first = err.errors()[0]
    loc = ".".join(str(p) for p in first["loc"]) or "scenario"
    return loc, first["msg"]


def attach_reports(scenario: Scenario) -> Scenario:
    background = scenario.background.build()
    reports = {
        "I": check_condition_I(background),
        "II_IV": check_conditions_II_IV(background, scenario.perturbation.build(background), seed=scenario.seed),
        "III": check_condition_III(scenario.extfield.build(), p=scenario.diagnostics.p),
    }
    scenario._reports.update(reports)
    for key, section in (("I", "background"), ("II_IV", "perturbation"), ("III", "extfield")):
        for clause in reports[key].clauses:
            if clause.status == "fail":
                raise ScenarioValidationError(f"{section}.condition_{key}.{clause.name}",
                                              f"clause failed (measured {clause.measured!r})")
    return scenario


def parse_scenario(text: str) -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark is not None else "unknown position"
        raise ScenarioParseError(f"parse error at {where}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioParseError("parse error at line 1: top level must be a mapping")
    try:
        scenario = Scenario.model_validate(data)
    except ValidationError as exc:
        loc, msg = _location(exc)
        raise ScenarioValidationError(loc, msg) from exc
    for value in (scenario.time.dt, scenario.time.t_end, scenario.grid.r_max):
        if not math.isfinite(value):
            raise ScenarioValidationError("scenario", "non-finite numeric value")
    return attach_reports(scenario)


def serialize_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.model_dump(mode="json"), sort_keys=False, default_flow_style=None)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
