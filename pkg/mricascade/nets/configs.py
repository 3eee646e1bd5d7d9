"""Network configurations and the valid-convolution shape algebra."""
from __future__ import annotations

from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, model_validator


class NetError(ValueError):
    pass


class _NetConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class UNetConfig(_NetConfig):
    kind: Literal["unet"] = "unet"
    depth: int = Field(default=4, ge=1)
    base_channels: int = Field(default=16, ge=1)
    padding_mode: Literal["valid", "same"] = "valid"
    input_size: int = Field(default=252, ge=1)
    norm: Literal["group", "none"] = "group"


class DeepSegNetConfig(_NetConfig):
    kind: Literal["deepsegnet"] = "deepsegnet"
    depth: int = Field(default=4, ge=1)
    base_channels: int = Field(default=16, ge=1)
    skip_mode: Literal["additive"] = "additive"
    norm: Literal["group", "none"] = "group"


class ResNetConfig(_NetConfig):
    kind: Literal["resnet"] = "resnet"
    variant: Literal["resnet50", "resnet_mini"] = "resnet50"
    num_classes: int = Field(default=2, ge=1)
    input_size: int = Field(default=32, ge=8)
    in_channels: int = Field(default=1, ge=1)
    # None picks 64 for resnet50 and 16 for resnet_mini
    base_width: Optional[int] = Field(default=None, ge=1)

    @property
    def width(self) -> int:
        if self.base_width is not None:
            return self.base_width
        return 64 if self.variant == "resnet50" else 16


class RecurrentConfig(_NetConfig):
    kind: Literal["recurrent"] = "recurrent"
    cell: Literal["plain", "gated"] = "gated"
    input_dim: int = Field(default=32, ge=1)
    hidden_dim: int = Field(default=32, ge=1)
    num_classes: int = Field(default=2, ge=1)
    encoder_channels: tuple[int, ...] = (8, 16)
    encoder_strides: tuple[int, ...] = (2, 2)
    roi_size: int = Field(default=32, ge=4)

    @model_validator(mode="after")
    def _encoder_layout(self) -> "RecurrentConfig":
        if len(self.encoder_channels) != len(self.encoder_strides):
            raise ValueError("encoder_channels and encoder_strides differ in length")
        if not self.encoder_channels:
            raise ValueError("encoder needs at least one convolution")
        return self


class DenseConfig(_NetConfig):
    kind: Literal["dense"] = "dense"
    input_dim: int = Field(default=8, ge=1)
    num_classes: int = Field(default=2, ge=1)


NetConfig = Annotated[Union[UNetConfig, DeepSegNetConfig, ResNetConfig,
                            RecurrentConfig, DenseConfig],
                      Field(discriminator="kind")]
SegmenterConfig = Union[UNetConfig, DeepSegNetConfig]
ClassifierConfig = Union[ResNetConfig, RecurrentConfig, DenseConfig]

_net_config_adapter = TypeAdapter(NetConfig)


def parse_net_config(payload: dict) -> NetConfig:
    return _net_config_adapter.validate_python(payload)


def is_segmenter(config) -> bool:
    return isinstance(config, (UNetConfig, DeepSegNetConfig))


def conv_output_size(size: int, kernel: int = 3, padding: int = 0) -> int:
    return size + 2 * padding - kernel + 1


def valid_shape(config: UNetConfig) -> Optional[int]:
    """Output side of a valid-mode U-Net, or None when the input is inadmissible.

    Two unpadded 3x3 convolutions per level, 2x2 pooling on the way down
    (needs an even side), 2x upsampling and two convolutions on the way up.
    """
    if config.padding_mode != "valid":
        raise NetError("valid_shape applies to padding_mode='valid' only")
    size = config.input_size
    for _ in range(config.depth):
        size = conv_output_size(conv_output_size(size))
        if size <= 0 or size % 2:
            return None
        size //= 2
    size = conv_output_size(conv_output_size(size))
    if size <= 0:
        return None
    for _ in range(config.depth):
        size = conv_output_size(conv_output_size(size * 2))
        if size <= 0:
            return None
    return size


def fit_valid_input(image_size: int, depth: int) -> tuple[int, int]:
    """Smallest admissible input whose valid-mode output covers ``image_size``."""
    base = UNetConfig(depth=depth, padding_mode="valid", input_size=image_size)
    for candidate in range(image_size, image_size * 4 + 64 * 2**depth):
        out = valid_shape(base.model_copy(update={"input_size": candidate}))
        if out is not None and out >= image_size:
            return candidate, out
    raise NetError(f"no admissible input found for size {image_size}")


def fit_segmenter_config(config, image_size: int):
    """Adapt a segmenter config to the slice side used by the pipeline."""
    if isinstance(config, UNetConfig):
        if config.padding_mode == "valid":
            padded, _ = fit_valid_input(image_size, config.depth)
            return config.model_copy(update={"input_size": padded})
        return config.model_copy(update={"input_size": image_size})
    return config
