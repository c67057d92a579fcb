from __future__ import annotations

import enum
from dataclasses import asdict, dataclass


class ModalCombo(enum.Enum):
    """Which sensor inputs a forward pass consumes."""

    DUAL_LIDAR = 1  # stereo pair + LiDAR
    MONO_LIDAR = 2  # left image + LiDAR
    DUAL = 3  # stereo pair only

    @property
    def key(self) -> str:
        return self.name.lower()

    @property
    def uses_stereo(self) -> bool:
        return self is not ModalCombo.MONO_LIDAR

    @property
    def uses_lidar(self) -> bool:
        return self is not ModalCombo.DUAL

    @classmethod
    def parse(cls, name: "str | ModalCombo") -> "ModalCombo":
        if isinstance(name, cls):
            return name
        try:
            return cls[str(name).strip().upper()]
        except KeyError:
            choices = ", ".join(c.key for c in cls)
            raise ValueError(f"unknown modal combo {name!r}; choose from {choices}") from None

    def __str__(self) -> str:
        return self.key


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyper-parameters.

    ``branch_channels`` lists the conv widths of every encoder branch; the
    first ``log2(feature_scale)`` layers use stride 2.  Features of all layers
    at the reduced resolution are concatenated to form the branch output.
    """

    max_disparity: int = 192
    feature_scale: int = 4
    branch_channels: tuple[int, ...] = (16, 32, 32)
    aggregated_channels: int = 16
    min_disparity_eps: float = 0.1
    max_depth_m: float = 100.0
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "branch_channels", tuple(int(c) for c in self.branch_channels))
        fs = self.feature_scale
        if fs < 1 or fs & (fs - 1):
            raise ValueError(f"feature_scale must be a power of two, got {fs}")
        if self.max_disparity % fs:
            raise ValueError(f"max_disparity {self.max_disparity} not divisible by feature_scale {fs}")
        if self.n_strided > len(self.branch_channels):
            raise ValueError("not enough branch layers to reach feature_scale")
        if min(self.branch_channels, default=0) < 1 or self.aggregated_channels < 1:
            raise ValueError("channel widths must be >= 1")
        if self.max_disparity // fs < 1:
            raise ValueError("max_disparity / feature_scale must be at least 1")
        if not self.min_disparity_eps > 0:
            raise ValueError("min_disparity_eps must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def n_strided(self) -> int:
        return self.feature_scale.bit_length() - 1

    @property
    def feature_layers(self) -> range:
        """Indices of layers whose outputs form the branch features."""
        return range(max(self.n_strided - 1, 0), len(self.branch_channels))

    @property
    def feature_channels(self) -> int:
        return sum(self.branch_channels[i] for i in self.feature_layers)

    @property
    def volume_disparities(self) -> int:
        return self.max_disparity // self.feature_scale

    def volume_channels(self, combo: ModalCombo) -> int:
        """Cost-volume width produced by the fusion layer for ``combo``."""
        f = self.feature_channels
        width = 1 + f  # disparity coordinate + image branch
        if combo.uses_stereo:
            width += 1 + 2 * f  # correlation + reference + shifted features
        if combo.uses_lidar:
            width += f
        return width

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branch_channels"] = list(self.branch_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**known)
