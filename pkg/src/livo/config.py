"""Pipeline configuration: YAML-backed, schema-checked dataclasses.

Unknown keys anywhere in the file are rejected so that typos fail loudly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import yaml


@dataclass
class MapConfig:
    voxel_size: float = 0.1
    min_spacing: float = 0.10
    activation_window: float = 1.0
    max_shells: int = 3
    plane_fit_threshold: float = 0.05
    min_plane_spread: float = 0.05


@dataclass
class LioSection:
    k_neighbors: int = 5
    sigma_range: float = 0.02
    min_valid_residuals: int = 10
    max_iterations: int = 5
    eps: float = 1e-6


@dataclass
class VioSection:
    tracking_mode: str = "oracle"      # "oracle" or "lk"
    oracle_pixel_sigma: float = 0.2
    sigma_track_px: float = 1.0        # used in lk mode
    sigma_pix: float = 0.03
    sigma_color: float = 0.02
    max_iterations: int = 5
    eps: float = 1e-6
    use_huber: bool = False
    huber_delta_px: float = 2.0
    tau_pnp: float = 4.0
    tau_photo: float = 0.12
    exclusion_radius_px: float = 50.0
    # True: the photometric stage starts from the PnP posterior (mean and
    # covariance), so both stages commit information.  False: it reuses the
    # propagated prior covariance and the PnP posterior only seeds the
    # linearization point, making the PnP stage a warm start.
    chained_covariance: bool = True
    z_min: float = 0.01

    def validate(self):
        if self.tracking_mode not in ("oracle", "lk"):
            raise ValueError(
                f"tracking_mode must be 'oracle' or 'lk', got {self.tracking_mode!r}")
        return self


@dataclass
class InitCovConfig:
    """Initial 1-sigma uncertainties per state block."""

    rot: float = 0.01
    pos: float = 0.01
    vel: float = 0.05
    bg: float = 0.005
    ba: float = 0.05
    grav: float = 0.01
    rot_ic: float = 0.02
    pos_ic: float = 0.02
    t_ic: float = 0.01
    intr: float = 3.0


@dataclass
class PipelineConfig:
    sequence_dir: str = ""
    output_dir: str = ""
    seed: int = 0
    lidar_first_on_tie: bool = True
    map: MapConfig = field(default_factory=MapConfig)
    lio: LioSection = field(default_factory=LioSection)
    vio: VioSection = field(default_factory=VioSection)
    init_cov: InitCovConfig = field(default_factory=InitCovConfig)

    def validate(self):
        if not self.sequence_dir:
            raise ValueError("sequence_dir is required")
        if not self.output_dir:
            raise ValueError("output_dir is required")
        self.vio.validate()
        return self

    def to_dict(self):
        return asdict(self)


_SECTIONS = {"map": MapConfig, "lio": LioSection, "vio": VioSection,
             "init_cov": InitCovConfig}


def _build(cls, data, path):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown config key(s) {sorted(unknown)} under '{path}'")
    return cls(**data)


def config_from_dict(data) -> PipelineConfig:
    data = dict(data or {})
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            section = data.pop(name)
            if not isinstance(section, dict):
                raise ValueError(f"config section '{name}' must be a mapping")
            kwargs[name] = _build(cls, section, name)
    top = _build(PipelineConfig, data, "<top-level>")
    for name, value in kwargs.items():
        setattr(top, name, value)
    return top.validate()


def load_config(path) -> PipelineConfig:
    with open(path) as f:
        data = yaml.safe_load(f)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config root must be a mapping")
    return config_from_dict(data)
