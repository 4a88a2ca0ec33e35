"""Pipeline configuration: a single JSON file with strict nested sections.

Every section maps one-to-one onto a constructor used by the pipeline,
unknown keys are rejected with the offending file line, and command-line
flags override file values after loading.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .errors import UsageError
from .geometry import ProbeGeometry
from .inr import TrainConfig
from .phantom import (
    BreathingModel,
    CorruptionSpec,
    NavParams,
    PhantomSpec,
    straight_tube_phantom,
)

MODES = ("breath_hold", "free_breathing")


@dataclass(frozen=True)
class PhantomConfig:
    """Straight-tube phantom with an optional Gaussian bulge."""

    radius_mm: float = 10.0
    length_mm: float = 150.0
    depth_mm: float = -40.0
    bulge_amplitude_mm: float = 0.0
    bulge_center_mm: float = 75.0
    bulge_sigma_mm: float = 10.0

    def build(self) -> PhantomSpec:
        return straight_tube_phantom(
            self.radius_mm,
            self.length_mm,
            self.depth_mm,
            bulge_amplitude_mm=self.bulge_amplitude_mm,
            bulge_center_mm=self.bulge_center_mm,
            bulge_sigma_mm=self.bulge_sigma_mm,
        )


@dataclass(frozen=True)
class ProbeConfig:
    theta_rad: float = 0.6
    tip_radius_mm: float = 60.0
    depth_mm: float = 100.0
    image_width_px: int = 128
    image_height_px: int = 128

    def build(self) -> ProbeGeometry:
        return ProbeGeometry(
            self.theta_rad,
            self.tip_radius_mm,
            self.depth_mm,
            self.image_width_px,
            self.image_height_px,
        )


@dataclass(frozen=True)
class GatingConfig:
    """Slice-filter window/tolerance plus the exhale selection band."""

    window: int = 10
    tolerance: float = 0.2
    band_frac: float = 0.1
    filter_enabled: bool = True

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.tolerance <= 0 or self.band_frac <= 0:
            raise ValueError("tolerance and band_frac must be positive")


@dataclass(frozen=True)
class InrConfig:
    epochs: int = 200
    learning_rate: float = 3e-4
    max_voxels_per_slice: int = 1024
    dtype: str = "float32"
    frame_stride: int = 1
    encoding_length: int = 10

    def __post_init__(self):
        if self.epochs < 1 or self.learning_rate <= 0:
            raise ValueError("epochs and learning_rate must be positive")
        if self.max_voxels_per_slice < 1:
            raise ValueError("max_voxels_per_slice must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.frame_stride < 1:
            raise ValueError("frame_stride must be >= 1")
        if self.encoding_length < 1:
            raise ValueError("encoding_length must be >= 1")

    def build(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            seed=seed,
            max_voxels_per_slice=self.max_voxels_per_slice,
            dtype=self.dtype,
        )


@dataclass(frozen=True)
class ReconConfig:
    prediction_resolution_mm: float = 0.75
    grid_resolution_mm: float = 1.0
    fps_count: int = 4096
    normals_k: int = 16
    threshold: float = 0.5
    max_gap_mm: float = 5.0

    def __post_init__(self):
        if self.prediction_resolution_mm <= 0 or self.grid_resolution_mm <= 0:
            raise ValueError("resolutions must be positive")
        if self.fps_count < 1 or self.normals_k < 3:
            raise ValueError("fps_count must be >= 1 and normals_k >= 3")
        if not (0.0 <= self.threshold < 1.0):
            raise ValueError("threshold must be in [0,1)")

    @property
    def slab_thickness_mm(self) -> float:
        # hull slabs span two sampling steps of the predicted cloud
        return 2.0 * self.prediction_resolution_mm


@dataclass(frozen=True)
class PipelineConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    breathing: BreathingModel = field(default_factory=BreathingModel)
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    nav: NavParams = field(default_factory=NavParams)
    gating: GatingConfig = field(default_factory=GatingConfig)
    inr: InrConfig = field(default_factory=InrConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)
    mode: str = "breath_hold"
    seed: int = 0
    out_dir: str = "sweeprecon_out"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["corruption"]["modes"] = list(self.corruption.modes)
        return out


_SECTIONS = {
    "phantom": PhantomConfig,
    "probe": ProbeConfig,
    "breathing": BreathingModel,
    "corruption": CorruptionSpec,
    "nav": NavParams,
    "gating": GatingConfig,
    "inr": InrConfig,
    "recon": ReconConfig,
}
_SCALARS = ("mode", "seed", "out_dir")


def _key_line(text: str, key: str, after_line: int = 0) -> int:
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if number > after_line and needle in line:
            return number
    return 0


def _build_section(name, cls, payload, path, text):
    known = {f.name for f in fields(cls)}
    section_line = _key_line(text, name)
    for key in payload:
        if key not in known:
            line = _key_line(text, key, after_line=section_line) or section_line
            raise UsageError(
                f"{path}:{line}: unknown key {key!r} in section {name!r}"
                f" (expected one of {sorted(known)})"
            )
    kwargs = dict(payload)
    if cls is CorruptionSpec and "modes" in kwargs:
        kwargs["modes"] = tuple(kwargs["modes"])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: section {name!r}: {exc}") from exc


def load_config(path) -> PipelineConfig:
    """Parse and validate a JSON pipeline configuration."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: top level must be a JSON object")

    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                line = _key_line(text, key)
                raise UsageError(f"{path}:{line}: section {key!r} must be an object")
            kwargs[key] = _build_section(key, _SECTIONS[key], value, path, text)
        elif key in _SCALARS:
            kwargs[key] = value
        else:
            line = _key_line(text, key)
            raise UsageError(
                f"{path}:{line}: unknown key {key!r}"
                f" (expected sections {sorted(_SECTIONS)} or {sorted(_SCALARS)})"
            )
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from exc


def apply_overrides(config: PipelineConfig, seed=None, out_dir=None, mode=None):
    """Command-line flags win over file values."""
    updates = {}
    if seed is not None:
        updates["seed"] = int(seed)
    if out_dir is not None:
        updates["out_dir"] = str(out_dir)
    if mode is not None:
        if mode not in MODES:
            raise UsageError(f"--mode must be one of {MODES}, got {mode!r}")
        updates["mode"] = mode
    return dataclasses.replace(config, **updates) if updates else config
