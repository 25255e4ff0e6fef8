"""Experiment configuration: YAML text validated into SI-unit objects.

Angles are given in degrees, rotation rates in deg/s, gyro biases in deg/h and
accelerometer biases in micro-g. Conversion to SI happens here and nowhere else.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from .earth import DEG, DEG_PER_HOUR, MICRO_G, DEFAULT_ALTITUDE_M, DEFAULT_LATITUDE_DEG, EarthParams
from .ekf import EkfSettings
from .errors import ConfigError, SchemaError, SimulationError, ValidationError
from .scenario import RateProfile, Scenario, ScenarioSegment, SegmentKind

OBSERVERS = ("ideal_ncr", "ideal_nfvr", "multi_axis", "multiposition", "ekf")
FORMATS = ("csv", "json")
DEFAULT_GYRO_BIAS_DEG_H = 0.01
DEFAULT_ACCEL_BIAS_UG = 50.0

Vec3 = tuple[float, float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SiteModel(_Strict):
    latitude_deg: float = Field(DEFAULT_LATITUDE_DEG, gt=-90.0, lt=90.0)
    altitude_m: float = DEFAULT_ALTITUDE_M


class NoiseModel(_Strict):
    gyro_deg_h_rthz: float = Field(0.0, ge=0.0)
    accel_ug_rthz: float = Field(0.0, ge=0.0)
    seed: int = Field(0, ge=0)


class ImuModel(_Strict):
    sample_rate_hz: float = Field(100.0, gt=0.0)
    gyro_bias_deg_h: Vec3 = (DEFAULT_GYRO_BIAS_DEG_H,) * 3
    accel_bias_ug: Vec3 = (DEFAULT_ACCEL_BIAS_UG,) * 3
    derivatives: Literal["analytic", "finite_difference", "none"] = "analytic"
    stencil_halfwidth: int = Field(2, ge=1)
    noise: NoiseModel = NoiseModel()


class ProfileModel(_Strict):
    bias_deg_s: float
    amplitude_deg_s: float = 0.0
    angular_frequency_rad_s: float = 0.0
    phase_deg: float = 0.0


class SegmentModel(_Strict):
    kind: Literal["static", "const_rotation", "varying_rate"]
    start_s: float = Field(ge=0.0)
    end_s: float
    axis: Vec3 = (0.0, 1.0, 0.0)
    frame: Literal["body", "nav"] = "body"
    rate_deg_s: Optional[float] = None
    profile: Optional[ProfileModel] = None

    @model_validator(mode="after")
    def _check(self):
        if not self.end_s > self.start_s:
            raise ValueError("end_s must exceed start_s")
        if self.kind != "static" and np.linalg.norm(self.axis) == 0.0:
            raise ValueError("axis must be non-zero")
        if self.kind == "const_rotation" and not self.rate_deg_s:
            raise ValueError("const_rotation needs a non-zero rate_deg_s")
        if self.kind == "varying_rate" and self.profile is None:
            raise ValueError("varying_rate needs a profile")
        if self.kind != "const_rotation" and self.rate_deg_s is not None:
            raise ValueError(f"rate_deg_s is not valid for kind {self.kind}")
        if self.kind != "varying_rate" and self.profile is not None:
            raise ValueError(f"profile is not valid for kind {self.kind}")
        return self


class EulerModel(_Strict):
    roll: float = 0.0
    yaw: float = 0.0
    pitch: float = 0.0


class ScenarioModel(_Strict):
    duration_s: float = Field(gt=0.0)
    initial_euler_deg: EulerModel = EulerModel()
    segments: list[SegmentModel] = []


class P0Model(_Strict):
    attitude_deg: Optional[float] = Field(None, ge=0.0)  # defaults to the coarse perturbation sigma
    velocity_m_s: float = Field(0.1, ge=0.0)
    gyro_bias_deg_h: float = Field(10.0, ge=0.0)
    accel_bias_ug: float = Field(100.0, ge=0.0)


class QModel(_Strict):
    """Per-second process noise densities in SI units."""

    attitude: float = Field(1e-16, ge=0.0)
    velocity: float = Field(1e-16, ge=0.0)
    gyro_bias: float = Field(1e-16, ge=0.0)
    accel_bias: float = Field(1e-16, ge=0.0)


class EkfModel(_Strict):
    coarse_duration_s: float = Field(20.0, gt=0.0)
    init_attitude_sigma_deg: float = Field(1.0, ge=0.0)
    p0: P0Model = P0Model()
    q: QModel = QModel()
    r_sigma_m_s: float = Field(1e-4, ge=0.0)
    measurement_rate_hz: float = Field(1.0, gt=0.0)
    initial_bg_deg_h: Vec3 = (0.0, 0.0, 0.0)
    initial_ba_ug: Optional[Vec3] = None
    initial_ba_m_s2: Optional[Vec3] = None
    feedback: Literal["closed_loop"] = "closed_loop"

    @model_validator(mode="after")
    def _one_ba(self):
        if self.initial_ba_ug is not None and self.initial_ba_m_s2 is not None:
            raise ValueError("give initial_ba_ug or initial_ba_m_s2, not both")
        return self


class MonteCarloModel(_Strict):
    runs: int = Field(gt=0)
    base_seed: int = Field(0, ge=0)
    batch_size: int = Field(250, gt=0)


class OutputModel(_Strict):
    directory: str = "results"
    formats: list[Literal["csv", "json"]] = ["csv", "json"]


class ExperimentModel(_Strict):
    name: str
    description: str = ""
    site: SiteModel = SiteModel()
    imu: ImuModel = ImuModel()
    scenario: ScenarioModel
    observers: list[Literal["ideal_ncr", "ideal_nfvr", "multi_axis", "multiposition", "ekf"]] = ["ekf"]
    ekf: EkfModel = EkfModel()
    seed: int = Field(0, ge=0)
    monte_carlo: Optional[MonteCarloModel] = None
    output: OutputModel = OutputModel()

    @field_validator("observers")
    @classmethod
    def _unique(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("observers must not repeat")
        if not v:
            raise ValueError("at least one observer is required")
        return v


class ExperimentConfig:
    """A validated experiment with SI-unit domain objects.

    Attributes
    ----------
    name, description : str
    scenario : Scenario
    observers : tuple of str
    ekf : EkfSettings
    seed : int
        Seed of the coarse-alignment perturbation for single runs.
    monte_carlo : MonteCarloModel or None
    output_dir : Path
    formats : frozenset of str
    model : ExperimentModel
        The parsed document, in config units.
    """

    def __init__(self, model: ExperimentModel):
        self.model = model
        self.name = model.name
        self.description = model.description
        self.observers = tuple(model.observers)
        self.seed = model.seed
        self.monte_carlo = model.monte_carlo
        self.output_dir = Path(model.output.directory)
        self.formats = frozenset(model.output.formats)
        self.derivatives = model.imu.derivatives
        self.stencil_halfwidth = model.imu.stencil_halfwidth
        self.noise = model.imu.noise
        self.scenario = _build_scenario(model)
        self.ekf = _build_ekf(model.ekf)
        _cross_checks(self)

    @property
    def earth(self) -> EarthParams:
        return self.scenario.earth

    def static_runs(self) -> list[tuple[float, float]]:
        """Time spans where the body is still, merging gaps and explicit static segments."""
        spans, t = [], 0.0
        for s in self.scenario.segments:
            if s.rotating:
                if s.t_start > t:
                    spans.append((t, s.t_start))
                t = s.t_end
        if self.scenario.duration > t:
            spans.append((t, self.scenario.duration))
        return spans


def _build_scenario(m: ExperimentModel) -> Scenario:
    earth = EarthParams.from_degrees(m.site.latitude_deg, m.site.altitude_m)
    segs = []
    for i, s in enumerate(m.scenario.segments):
        kind = SegmentKind(s.kind)
        profile = None
        if s.profile is not None:
            p = s.profile
            profile = RateProfile(p.bias_deg_s * DEG, p.amplitude_deg_s * DEG, p.angular_frequency_rad_s, p.phase_deg * DEG)
        segs.append(ScenarioSegment(kind, s.start_s, s.end_s, axis=s.axis, rate=(s.rate_deg_s or 0.0) * DEG,
                                    profile=profile, frame=s.frame))
    order = sorted(range(len(segs)), key=lambda i: segs[i].t_start)
    if order != list(range(len(segs))):
        raise ValidationError("scenario.segments must be listed in time order")
    for i in range(1, len(segs)):
        if segs[i].t_start < segs[i - 1].t_end:
            raise ValidationError(f"scenario.segments[{i}] overlaps scenario.segments[{i - 1}]")
    if segs and segs[-1].t_end > m.scenario.duration_s:
        raise ValidationError(f"scenario.segments[{len(segs) - 1}] ends after scenario.duration_s")
    e = m.scenario.initial_euler_deg
    return Scenario(
        earth=earth,
        initial_euler=(e.roll * DEG, e.yaw * DEG, e.pitch * DEG),
        segments=tuple(segs),
        sample_rate=m.imu.sample_rate_hz,
        duration=m.scenario.duration_s,
        true_bg=tuple(np.asarray(m.imu.gyro_bias_deg_h) * DEG_PER_HOUR),
        true_ba=tuple(np.asarray(m.imu.accel_bias_ug) * MICRO_G),
    )


def _build_ekf(e: EkfModel) -> EkfSettings:
    if e.initial_ba_m_s2 is not None:
        ba0 = tuple(float(x) for x in e.initial_ba_m_s2)
    elif e.initial_ba_ug is not None:
        ba0 = tuple(float(x) * MICRO_G for x in e.initial_ba_ug)
    else:
        ba0 = (0.0, 0.0, 0.0)
    q = (e.q.attitude,) * 3 + (e.q.velocity,) * 3 + (e.q.gyro_bias,) * 3 + (e.q.accel_bias,) * 3
    return EkfSettings(
        coarse_duration=e.coarse_duration_s,
        init_attitude_sigma=e.init_attitude_sigma_deg * DEG,
        p0_attitude_sigma=None if e.p0.attitude_deg is None else e.p0.attitude_deg * DEG,
        p0_velocity_sigma=e.p0.velocity_m_s,
        p0_gyro_sigma=e.p0.gyro_bias_deg_h * DEG_PER_HOUR,
        p0_accel_sigma=e.p0.accel_bias_ug * MICRO_G,
        q=q,
        r_sigma=e.r_sigma_m_s,
        measurement_rate=e.measurement_rate_hz,
        initial_bg=tuple(float(x) * DEG_PER_HOUR for x in e.initial_bg_deg_h),
        initial_ba=ba0,
        feedback=e.feedback,
    )


def _cross_checks(cfg: ExperimentConfig) -> None:
    segs = cfg.scenario.segments
    kinds = [s.kind for s in segs]
    n_rot = sum(s.rotating for s in segs)
    needs_derivs = {"ideal_ncr", "ideal_nfvr", "multi_axis"} & set(cfg.observers)
    if needs_derivs and cfg.derivatives == "none":
        raise ValidationError(f"observers {sorted(needs_derivs)} need imu.derivatives other than 'none'")
    if "ideal_ncr" in cfg.observers and SegmentKind.CONST_ROTATION not in kinds:
        raise ValidationError("ideal_ncr needs at least one const_rotation segment")
    if "ideal_nfvr" in cfg.observers and SegmentKind.VARYING_RATE not in kinds:
        raise ValidationError("ideal_nfvr needs at least one varying_rate segment")
    if "multi_axis" in cfg.observers and n_rot < 2:
        raise ValidationError("multi_axis needs at least two rotation segments")
    if "multiposition" in cfg.observers and len(cfg.static_runs()) < 4:
        raise ValidationError("multiposition needs at least four still postures")
    if "ekf" in cfg.observers or cfg.monte_carlo is not None:
        tc = cfg.ekf.coarse_duration
        if tc >= cfg.scenario.duration:
            raise ValidationError("ekf.coarse_duration_s must be shorter than scenario.duration_s")
        first_rot = min((s.t_start for s in segs if s.rotating), default=np.inf)
        if first_rot < tc:
            raise ValidationError("ekf.coarse_duration_s overlaps a rotation segment; the coarse window must be still")
    if cfg.monte_carlo is not None and "ekf" not in cfg.observers:
        raise ValidationError("monte_carlo runs the ekf observer, which is not listed in observers")


def _loc(err: dict) -> str:
    parts = []
    for p in err["loc"]:
        if isinstance(p, int):
            parts[-1] = f"{parts[-1]}[{p}]" if parts else f"[{p}]"
        else:
            parts.append(str(p))
    return ".".join(parts) or "<root>"


def config_from_dict(data: dict) -> ExperimentConfig:
    """Validate a mapping already loaded from YAML.

    Raises
    ------
    SchemaError
        For unknown keys, missing keys and badly typed values; the message names the field path.
    ValidationError
        For cross-field problems such as overlapping segments.
    """
    if not isinstance(data, dict):
        raise SchemaError("<root>", "configuration must be a mapping")
    try:
        model = ExperimentModel.model_validate(data)
    except PydanticValidationError as exc:
        err = exc.errors()[0]
        msg = "unknown key" if err["type"] == "extra_forbidden" else err["msg"]
        raise SchemaError(_loc(err), msg) from None
    try:
        return ExperimentConfig(model)
    except (ValueError, SimulationError) as exc:  # domain constructors reject a value
        raise ValidationError(str(exc)) from None


def parse_config(path) -> ExperimentConfig:
    """Read and validate an experiment file.

    `path` may also name a shipped config (see :func:`shipped_configs`).
    An unreadable file raises ``OSError``; malformed YAML raises ``ConfigError``.
    """
    p = resolve_config_path(path)
    text = p.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: not valid YAML ({exc})") from None
    return config_from_dict(data)


def shipped_configs() -> dict[str, Path]:
    """Name to path of every config bundled with the package."""
    root = resources.files("insalign") / "configs"
    return {Path(str(f)).stem: Path(str(f)) for f in sorted(root.iterdir(), key=lambda f: f.name)
            if f.name.endswith(".yaml")}


def resolve_config_path(path: Union[str, Path]) -> Path:
    p = Path(path)
    if p.exists() or p.suffix:
        return p
    shipped = shipped_configs()
    if str(path) in shipped:
        return shipped[str(path)]
    return p
