from __future__ import annotations

import math
from typing import Iterable, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Mode = Literal["sca", "baseline_no", "baseline_ave"]
MODES: Tuple[Mode, ...] = ("sca", "baseline_no", "baseline_ave")


def _split_ints(value) -> List[int]:
    if isinstance(value, str):
        tokens = [token.strip() for token in value.split(",") if token.strip()]
        return [int(token) for token in tokens]
    if isinstance(value, Iterable):
        return [int(token) for token in value]
    raise TypeError("expected a comma-separated list of integers")


class NetworkConfig(BaseModel):
    """Geometry of the segmentation network.

    The encoder has ``len(encoder_widths) + 1`` conv3x3 blocks; the last one
    produces ``feature_channels`` (N). The first ``log2(downsample)`` blocks
    use stride 2.
    """

    image_height: int = Field(32, ge=1)
    image_width: int = Field(32, ge=1)
    in_channels: int = Field(3, ge=1)
    encoder_widths: List[int] = Field(default_factory=lambda: [16, 32])
    downsample: int = Field(4, ge=1)
    feature_channels: int = Field(32, ge=1)
    sca_channels: int = Field(32, ge=1)
    cdp_layers: int = Field(3, ge=0)
    cdp_features: int = Field(32, ge=1)
    num_classes: int = Field(4, ge=2)
    mode: Mode = "sca"

    model_config = ConfigDict(extra="forbid")

    @field_validator("encoder_widths", mode="before")
    def coerce_widths(cls, value) -> List[int]:
        return _split_ints(value)

    @field_validator("encoder_widths")
    def validate_widths(cls, value: List[int]) -> List[int]:
        if any(width < 1 for width in value):
            raise ValueError("encoder widths must be positive")
        return value

    @model_validator(mode="after")
    def check_geometry(self) -> "NetworkConfig":
        s = self.downsample
        if s & (s - 1):
            raise ValueError(f"downsample must be a power of two, got {s}")
        strided = int(math.log2(s))
        if strided > self.encoder_blocks:
            raise ValueError(
                f"downsample {s} needs {strided} strided blocks but the encoder has {self.encoder_blocks}"
            )
        if self.image_height % s or self.image_width % s:
            raise ValueError(
                f"image_height and image_width ({self.image_height}x{self.image_width}) must be divisible by downsample {s}"
            )
        return self

    @property
    def encoder_blocks(self) -> int:
        return len(self.encoder_widths) + 1

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return self.image_height // self.downsample, self.image_width // self.downsample

    @property
    def neurons(self) -> int:
        height, width = self.grid_shape
        return height * width


class TrainConfig(BaseModel):
    # Rates may be zero so a run can freeze a parameter group.
    base_lr_encoder: float = Field(1e-3, ge=0)
    base_lr_sca_and_decoder: float = Field(1e-2, ge=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    poly_power: float = Field(0.9, gt=0)
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(3, ge=1)
    seed: int = 0
    reweight: bool = True
    threads: int = Field(1, ge=1)

    model_config = ConfigDict(extra="forbid")


class SynthConfig(BaseModel):
    image_height: int = Field(32, ge=4)
    image_width: int = Field(32, ge=4)
    num_classes: int = Field(4, ge=3, le=5)
    train_samples: int = Field(500, ge=1)
    test_samples: int = Field(200, ge=0)
    noise: float = Field(0.1, ge=0, le=0.5)
    cue_size: int = Field(6, ge=1)
    region_size: int = Field(18, ge=1)
    seed: int = 0

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_layout(self) -> "SynthConfig":
        for name, size in (("cue_size", self.cue_size), ("region_size", self.region_size)):
            if size > min(self.image_height, self.image_width):
                raise ValueError(f"{name} {size} does not fit in a {self.image_height}x{self.image_width} image")
        total = self.cue_size + self.region_size
        if total > self.image_height and total > self.image_width:
            raise ValueError(
                f"cue_size + region_size ({total}) leaves no room for a non-overlapping layout"
            )
        return self


class RunConfig(BaseModel):
    """Flat ``key=value`` configuration shared by every command.

    Unknown keys are rejected. ``seed`` drives network initialisation and
    training; ``data_seed`` drives the synthetic generator.
    """

    # network
    image_height: int = 32
    image_width: int = 32
    encoder_widths: List[int] = Field(default_factory=lambda: [16, 32])
    downsample: int = 4
    feature_channels: int = 32
    sca_channels: int = 32
    cdp_layers: int = 3
    cdp_features: int = 32
    num_classes: int = 4
    mode: Mode = "sca"
    # training
    base_lr_encoder: float = 1e-3
    base_lr_sca_and_decoder: float = 1e-2
    momentum: float = 0.9
    poly_power: float = 0.9
    epochs: int = 50
    batch_size: int = 3
    seed: int = 0
    reweight: bool = True
    threads: int = 1
    # data
    train_samples: int = 500
    test_samples: int = 200
    noise: float = 0.1
    cue_size: int = 6
    region_size: int = 18
    data_seed: int = 0

    model_config = ConfigDict(extra="forbid")

    @field_validator("encoder_widths", mode="before")
    def coerce_widths(cls, value) -> List[int]:
        return _split_ints(value)

    def network(self) -> NetworkConfig:
        return NetworkConfig(
            image_height=self.image_height,
            image_width=self.image_width,
            encoder_widths=self.encoder_widths,
            downsample=self.downsample,
            feature_channels=self.feature_channels,
            sca_channels=self.sca_channels,
            cdp_layers=self.cdp_layers,
            cdp_features=self.cdp_features,
            num_classes=self.num_classes,
            mode=self.mode,
        )

    def training(self) -> TrainConfig:
        return TrainConfig(
            base_lr_encoder=self.base_lr_encoder,
            base_lr_sca_and_decoder=self.base_lr_sca_and_decoder,
            momentum=self.momentum,
            poly_power=self.poly_power,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            reweight=self.reweight,
            threads=self.threads,
        )

    def synthesis(self) -> SynthConfig:
        return SynthConfig(
            image_height=self.image_height,
            image_width=self.image_width,
            num_classes=self.num_classes,
            train_samples=self.train_samples,
            test_samples=self.test_samples,
            noise=self.noise,
            cue_size=self.cue_size,
            region_size=self.region_size,
            seed=self.data_seed,
        )


class Metrics(BaseModel):
    ppa: float = Field(..., ge=0, le=1, description="Per-pixel accuracy.")
    caa: float = Field(..., ge=0, le=1, description="Class-average accuracy over classes present in ground truth.")
    miou: float = Field(..., ge=0, le=1, description="Mean IoU over classes present in ground truth or prediction.")
    class_accuracy: List[Optional[float]]
    class_iou: List[Optional[float]]
    confusion: List[List[int]] = Field(..., description="Rows are ground truth, columns are predictions.")


class EpochRecord(BaseModel):
    epoch: int
    mean_loss: float
    metrics: Metrics


class GradcheckResult(BaseModel):
    group: str
    max_relative_error: float
    passed: bool


class AblationRow(BaseModel):
    mode: Mode
    ppa: float
    caa: float
    miou: float


class SweepRow(BaseModel):
    knob: Literal["cdp_layers", "cdp_features"]
    value: int
    ppa: float
    caa: float
    miou: float
