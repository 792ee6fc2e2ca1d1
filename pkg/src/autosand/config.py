"""Pipeline configuration: defaults, validation, and the INI file format.

Every tunable default lives here.  The file format is plain configparser INI:
one section per subsystem, values coerced by the type of the corresponding
dataclass default (floats, ints, bools, comma-separated vectors).
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field

import numpy as np

from .dynamics import RobotModel
from .impedance import ImpedanceSpec
from .planner import GaParams
from .pointcloud import IcpParams, QualityParams


@dataclass
class ControlConfig:
    vel_gain: float = 10.0
    robust_gain: float = 20.0
    boundary: float = 0.05         # 0 selects the exact sign function
    learn_rate: float = 20.0
    n_centers: int = 64
    width_scale: float = 1.0
    force_noise: float = 0.1       # N, std dev of the simulated force sensor
    pinv_damping: float = 0.0


@dataclass
class ContactConfig:
    stiffness: float = 1e4
    damping: float = 800.0
    drag: float = 2.0
    belt_x: float = 0.11           # world x of the belt surface plane
    belt_size: tuple = (0.15, 0.5, 0.3)


@dataclass
class SetpointConfig:
    force: float = -25.0
    penetration_margin: float = 0.0   # extra x_d offset past the force-consistent depth


@dataclass
class ObjectConfig:
    sides: int = 13
    mean_radius: float = 0.06
    radius_variation: float = 0.006
    radius_phase: float = 1.0
    height: float = 0.08
    roughness: float = 4e-4
    removal_rate: float = 0.6      # roughness multiplier is 1 - removal_rate * force quality

    def radii(self) -> np.ndarray:
        k = np.arange(self.sides)
        return self.mean_radius + self.radius_variation * np.cos(
            2.0 * np.pi * k / self.sides + self.radius_phase)


@dataclass
class ScannerConfig:
    density: float = 2e5
    depth_noise: float = 2e-4
    view_dir: tuple = (-1.0, 0.0, -0.45)
    n_views: int = 4
    intensity_base: float = 0.88
    intensity_slope: float = 250.0
    speckle: float = 0.05
    field_margin: float = 0.05     # box half-width around the object for the field filter


@dataclass
class SorConfig:
    k: int = 50
    alpha: float = 1.0


@dataclass
class PlannerConfig:
    task_step: float = 0.005
    retreat_step: float = 0.02
    retreat_max: float = 0.10
    max_rule_repairs: int = 4
    sample_budget: int = 200
    straight_line_cost: bool = False   # GA fitness from straight segments instead of planned paths
    sample_dt: float = 0.01


@dataclass
class SimConfig:
    dt_physics: float = 1e-4
    dt_control: float = 1e-3
    sanding_duration: float = 5.0
    transient: float = 1.0
    tail_fraction: float = 0.3
    seed: int = 0


@dataclass
class PipelineOptions:
    max_resand: int = 3
    approach_clearance: float = 0.03
    home: tuple = (-0.6, 0.3, 0.0, 0.0)
    quality_gate: bool = True      # False accepts every face (stage-isolation toggle)


@dataclass
class PipelineConfig:
    robot: RobotModel = field(default_factory=RobotModel)
    impedance: ImpedanceSpec = field(default_factory=ImpedanceSpec)
    control: ControlConfig = field(default_factory=ControlConfig)
    contact: ContactConfig = field(default_factory=ContactConfig)
    setpoint: SetpointConfig = field(default_factory=SetpointConfig)
    object: ObjectConfig = field(default_factory=ObjectConfig)
    scanner: ScannerConfig = field(default_factory=ScannerConfig)
    sor: SorConfig = field(default_factory=SorConfig)
    icp: IcpParams = field(default_factory=IcpParams)
    quality: QualityParams = field(default_factory=QualityParams)
    ga: GaParams = field(default_factory=GaParams)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    pipeline: PipelineOptions = field(default_factory=PipelineOptions)

    def __post_init__(self):
        ratio = self.sim.dt_control / self.sim.dt_physics
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("dt_control must be an integer multiple of dt_physics")


_SKIP_FIELDS = {
    "impedance": {"track_rate", "filter_rate"},
}


def _format_value(value) -> str:
    if isinstance(value, (np.ndarray, tuple, list)):
        return ", ".join(f"{v:.12g}" if isinstance(v, float) or isinstance(v, np.floating)
                         else str(v) for v in np.asarray(value).reshape(-1))
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def _parse_like(text: str, template):
    text = text.strip()
    if isinstance(template, (bool, np.bool_)):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(template, (int, np.integer)):
        return int(text)
    if isinstance(template, (float, np.floating)):
        return float(text)
    if isinstance(template, (np.ndarray, tuple, list)):
        parts = [p for p in text.replace(",", " ").split() if p]
        arr = np.array([float(p) for p in parts])
        template_arr = np.asarray(template)
        if template_arr.ndim > 1:
            arr = arr.reshape(template_arr.shape)
        return arr
    return text


def to_ini(config: PipelineConfig) -> str:
    parser = configparser.ConfigParser()
    for section_field in dataclasses.fields(config):
        section = section_field.name
        sub = getattr(config, section)
        parser[section] = {}
        for f in dataclasses.fields(sub):
            if f.name in _SKIP_FIELDS.get(section, ()):
                continue
            parser[section][f.name] = _format_value(getattr(sub, f.name))
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def from_ini(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser()
    parser.read_string(text)
    defaults = PipelineConfig()
    kwargs = {}
    for section_field in dataclasses.fields(defaults):
        section = section_field.name
        sub_default = getattr(defaults, section)
        if section not in parser:
            kwargs[section] = sub_default
            continue
        sub_kwargs = {}
        valid = {f.name for f in dataclasses.fields(sub_default)
                 if f.name not in _SKIP_FIELDS.get(section, ())}
        for key, raw in parser[section].items():
            if key not in valid:
                raise ValueError(f"unknown key [{section}] {key}")
            sub_kwargs[key] = _parse_like(raw, getattr(sub_default, key))
        for name in valid:
            if name not in sub_kwargs:
                sub_kwargs[name] = getattr(sub_default, name)
        kwargs[section] = type(sub_default)(**sub_kwargs)
    return PipelineConfig(**kwargs)


def save_config(config: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_ini(config))


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        return from_ini(fh.read())
