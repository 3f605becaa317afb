"""Domain containers and the shared binary container format.

Videos, masks, and measurements all travel through a single little-endian
container format ("SCIT") plus a JSON sidecar manifest naming the role.
Floating payloads are stored as float32; integer payloads as uint8/uint16
(measurement codes) or int64 (mask units).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SCIT"
CONTAINER_VERSION = 1

# dtype-code -> numpy dtype (all stored little-endian)
DTYPE_CODES = {
    0: np.dtype("<f4"),
    1: np.dtype("u1"),
    2: np.dtype("<u2"),
    3: np.dtype("<i8"),
}
_CODE_FOR_DTYPE = {v: k for k, v in DTYPE_CODES.items()}


class ContainerError(Exception):
    """Base error for container I/O."""


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class UnsupportedDtypeError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


@dataclass(frozen=True)
class ContainerHeader:
    """Header of a container file.

    Layout on disk: 4-byte magic "SCIT", uint16 version, uint8 dtype-code,
    uint8 ndim, then ndim uint32 dims. All multi-byte fields little-endian.
    """

    dtype_code: int
    dims: tuple[int, ...]
    version: int = CONTAINER_VERSION

    def __post_init__(self):
        if self.dtype_code not in DTYPE_CODES:
            raise UnsupportedDtypeError(f"unknown dtype code {self.dtype_code}")
        if not self.dims or any(d <= 0 for d in self.dims):
            raise ContainerError(f"dims must be positive, got {self.dims}")

    @property
    def dtype(self) -> np.dtype:
        return DTYPE_CODES[self.dtype_code]

    @property
    def payload_length(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n * self.dtype.itemsize

    def to_bytes(self) -> bytes:
        return (
            MAGIC
            + struct.pack("<HBB", self.version, self.dtype_code, len(self.dims))
            + struct.pack(f"<{len(self.dims)}I", *self.dims)
        )

    @classmethod
    def for_array(cls, arr: np.ndarray) -> "ContainerHeader":
        dt = np.dtype(arr.dtype).newbyteorder("<")
        if dt not in _CODE_FOR_DTYPE:
            raise UnsupportedDtypeError(f"no container code for dtype {arr.dtype}")
        return cls(_CODE_FOR_DTYPE[dt], tuple(int(d) for d in arr.shape))


def save_container(path, header: ContainerHeader, payload: bytes) -> None:
    """Write header bytes followed by payload, bit-exact."""
    if len(payload) != header.payload_length:
        raise ContainerError(
            f"payload is {len(payload)} bytes, header implies {header.payload_length}"
        )
    with open(path, "wb") as f:
        f.write(header.to_bytes())
        f.write(payload)


def load_container(path) -> tuple[ContainerHeader, bytes]:
    """Exact inverse of save_container. Raises a distinct error per failure mode."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a SCIT container")
    version, dtype_code, ndim = struct.unpack("<HBB", raw[4:8])
    if version != CONTAINER_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    if dtype_code not in DTYPE_CODES:
        raise UnsupportedDtypeError(f"{path}: unsupported dtype code {dtype_code}")
    dims_end = 8 + 4 * ndim
    if len(raw) < dims_end:
        raise TruncatedPayloadError(f"{path}: header truncated")
    dims = struct.unpack(f"<{ndim}I", raw[8:dims_end])
    header = ContainerHeader(dtype_code, dims, version)
    payload = raw[dims_end:]
    if len(payload) < header.payload_length:
        raise TruncatedPayloadError(
            f"{path}: payload is {len(payload)} bytes, expected {header.payload_length}"
        )
    return header, payload[: header.payload_length]


def save_array(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    header = ContainerHeader.for_array(arr)
    save_container(path, header, arr.astype(header.dtype, copy=False).tobytes())


def load_array(path) -> np.ndarray:
    header, payload = load_container(path)
    return np.frombuffer(payload, dtype=header.dtype).reshape(header.dims).copy()


@dataclass(frozen=True)
class VideoCube:
    """B frames of H x W normalized irradiance, stored float32.

    Values of valid scene inputs lie in [0, 1]; out-of-range values are
    permitted in intermediates (the encoder clips explicitly, never silently).
    """

    data: np.ndarray  # (B, H, W) float32

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"video cube must be (B,H,W) with positive dims, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("video cube contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class Measurement:
    """A single coded exposure: integer sensor codes plus their normalized view."""

    digital: np.ndarray  # (H, W) unsigned integer codes in [0, 2^kappa - 1]
    kappa: int

    def __post_init__(self):
        if not 1 <= self.kappa <= 16:
            raise ValueError(f"kappa must be in [1, 16], got {self.kappa}")
        arr = np.asarray(self.digital)
        if arr.ndim != 2:
            raise ValueError(f"measurement must be 2-D, got shape {arr.shape}")
        dt = np.uint8 if self.kappa <= 8 else np.uint16
        if arr.min() < 0 or arr.max() > self.max_code:
            raise ValueError(f"digital codes outside [0, {self.max_code}]")
        object.__setattr__(self, "digital", arr.astype(dt))

    @property
    def max_code(self) -> int:
        return (1 << self.kappa) - 1

    @property
    def normalized(self) -> np.ndarray:
        """digital / (2^kappa - 1) in float64; multiplying back recovers digital."""
        return self.digital.astype(np.float64) / self.max_code

    @property
    def height(self) -> int:
        return self.digital.shape[0]

    @property
    def width(self) -> int:
        return self.digital.shape[1]


def _manifest_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def write_manifest(path, manifest: dict) -> None:
    with open(_manifest_path(path), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(path) -> dict:
    with open(_manifest_path(path)) as f:
        return json.load(f)


def save_video(path, cube: VideoCube) -> None:
    save_array(path, cube.data)
    write_manifest(
        path,
        {"role": "video", "B": cube.frames, "H": cube.height, "W": cube.width},
    )


def load_video(path) -> VideoCube:
    arr = load_array(path)
    if arr.dtype != np.float32 or arr.ndim != 3:
        raise ContainerError(f"{path}: not a video container")
    return VideoCube(arr)


def save_measurement(path, meas: Measurement) -> None:
    save_array(path, meas.digital)
    write_manifest(
        path,
        {"role": "measurement", "H": meas.height, "W": meas.width, "kappa": meas.kappa},
    )


def load_measurement(path) -> Measurement:
    arr = load_array(path)
    manifest = read_manifest(path)
    if manifest.get("role") != "measurement":
        raise ContainerError(f"{path}: manifest role is not 'measurement'")
    return Measurement(arr, int(manifest["kappa"]))
