"""Named model parameters, initialization and the checkpoint container.

Checkpoint layout (all integers little-endian)::

    magic    8 bytes  b"UAMDCKPT"
    version  u32
    config   u32 length + UTF-8 JSON of NetworkConfig
    count    u32
    count x  (u16 name length, name, u8 ndim, ndim x u32 extents,
              u8 dtype code (4 = float32, 8 = float64), raw little-endian values)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from ..tensor import ConvSpec, DiffTensor
from .config import ModalCombo, NetworkConfig

CHECKPOINT_MAGIC = b"UAMDCKPT"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class CheckpointError(ValueError):
    """Raised for malformed or incompatible checkpoint files."""


class ModelParams:
    """Ordered mapping from stable parameter names to leaf tensors."""

    def __init__(self, tensors: dict[str, DiffTensor] | None = None):
        self._tensors: dict[str, DiffTensor] = {}
        for name, t in (tensors or {}).items():
            self.add(name, t)

    def add(self, name: str, value) -> DiffTensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, DiffTensor) else DiffTensor(value)
        t.requires_grad = True
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> DiffTensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams({k: DiffTensor(t.values.copy()) for k, t in self._tensors.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.values for k, t in self._tensors.items()}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.values)) for t in self._tensors.values())


# -- layer geometry -----------------------------------------------------------------

def branch_specs(config: NetworkConfig, in_channels: int) -> list[ConvSpec]:
    specs = []
    c_in = in_channels
    for i, c_out in enumerate(config.branch_channels):
        stride = 2 if i < config.n_strided else 1
        specs.append(ConvSpec.cube(c_in, c_out, size=3, stride=stride, padding=1, ndim=2))
        c_in = c_out
    return specs


BRANCH_INPUTS = {"stereo": 3, "depth": 4, "image": 3}


def cfal_specs(config: NetworkConfig, combo: ModalCombo) -> list[ConvSpec]:
    c = config.aggregated_channels
    return [ConvSpec.cube(config.volume_channels(combo), c), ConvSpec.cube(c, c)]


def mfa_specs(config: NetworkConfig) -> dict[str, ConvSpec]:
    c = config.aggregated_channels
    specs = {f"mfa.block{b}.conv{j}": ConvSpec.cube(c, c) for b in range(3) for j in range(2)}
    specs["mfa.out"] = ConvSpec.cube(c, 1)
    return specs


def layer_specs(config: NetworkConfig) -> dict[str, ConvSpec]:
    """Every convolution of the model keyed by parameter prefix."""
    specs: dict[str, ConvSpec] = {}
    for branch, c_in in BRANCH_INPUTS.items():
        for i, spec in enumerate(branch_specs(config, c_in)):
            specs[f"{branch}.conv{i}"] = spec
    for combo in ModalCombo:
        for i, spec in enumerate(cfal_specs(config, combo)):
            specs[f"cfal.{combo.key}.conv{i}"] = spec
    specs.update(mfa_specs(config))
    return specs


def init_params(config: NetworkConfig, seed: int = 0) -> ModelParams:
    """Kaiming-uniform (fan-in) weights and zero biases."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    params = ModelParams()
    for prefix, spec in layer_specs(config).items():
        fan_in = spec.in_channels * int(np.prod(spec.kernel))
        bound = np.sqrt(6.0 / fan_in)
        params.add(f"{prefix}.weight", rng.uniform(-bound, bound, spec.weight_shape).astype(dtype))
        params.add(f"{prefix}.bias", np.zeros(spec.out_channels, dtype=dtype))
    return params


# -- checkpoint I/O -------------------------------------------------------------------

def save_checkpoint(path: str | Path, params: ModelParams, config: NetworkConfig) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode()
    chunks += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(params))]
    for name, t in params.items():
        encoded = name.encode()
        arr = np.ascontiguousarray(t.values)
        code = arr.dtype.itemsize
        chunks += [struct.pack("<H", len(encoded)), encoded, struct.pack("<B", arr.ndim),
                   struct.pack(f"<{arr.ndim}I", *arr.shape), struct.pack("<B", code),
                   arr.astype(_DTYPE_CODES[code]).tobytes()]
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, NetworkConfig]:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(8) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", take(4))
    try:
        config = NetworkConfig.from_dict(json.loads(take(cfg_len)))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad config block: {exc}") from None
    (count,) = struct.unpack("<I", take(4))
    params = ModelParams()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        (code,) = struct.unpack("<B", take(1))
        if code not in _DTYPE_CODES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name}")
        dt = _DTYPE_CODES[code]
        n = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(take(n * dt.itemsize), dtype=dt).reshape(shape)
        params.add(name, values.astype(dt.newbyteorder("=")))
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    expected = set(init_params_names(config))
    if set(params) != expected:
        raise CheckpointError(f"{path}: parameter names do not match the configured architecture")
    return params, config


def init_params_names(config: NetworkConfig) -> list[str]:
    return [f"{p}.{kind}" for p in layer_specs(config) for kind in ("weight", "bias")]
