"""Sensor measurement model and exact DN <-> electron conversions.

A camera sensor turns a per-pixel electron count ``x`` into a digital
number (DN) through

    y = g * x + b + eps

where ``g`` is the overall gain in DN per electron, ``b`` the black level
in DN, and ``eps`` zero-mean Gaussian readout noise with standard
deviation given in DN. Digitization rounds to integers and clips to
``[0, 2**d - 1]`` for bit depth ``d`` (14 by default).

Inverting the relation gives the electron estimate ``x_hat = (y - b) / g``.
Estimates are deliberately NOT clamped at zero: readout noise pushes dark
pixels below the black level, and clamping there would bias every
low-signal statistic computed downstream.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError


class CfaPattern(enum.Enum):
    """Color filter array layout, carried as metadata only (never demosaiced)."""

    RGGB = "RGGB"
    BGGR = "BGGR"
    GRBG = "GRBG"
    GBRG = "GBRG"
    NONE = "NONE"


DEFAULT_BIT_DEPTH = 14


def white_level(bit_depth: int) -> int:
    """Largest representable DN for a given bit depth."""
    if not 1 <= bit_depth <= 16:
        raise CalibrationError(f"bit depth must be in [1, 16], got {bit_depth}")
    return (1 << bit_depth) - 1


@dataclass(frozen=True)
class SensorCalibration:
    """Parameters of the measurement model for one ISO setting.

    Attributes:
        gain: DN per electron, strictly positive.
        black_level: DN offset, non-negative.
        read_noise_dn: standard deviation of the Gaussian readout noise, in DN.
        iso: ISO label this calibration belongs to.
    """

    gain: float
    black_level: float
    read_noise_dn: float
    iso: int = 100

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gain) and self.gain > 0):
            raise CalibrationError(f"gain must be finite and > 0, got {self.gain}")
        if not (math.isfinite(self.black_level) and self.black_level >= 0):
            raise CalibrationError(
                f"black level must be finite and >= 0, got {self.black_level}"
            )
        if not (math.isfinite(self.read_noise_dn) and self.read_noise_dn >= 0):
            raise CalibrationError(
                f"read noise must be finite and >= 0, got {self.read_noise_dn}"
            )
        if self.iso < 1:
            raise CalibrationError(f"iso must be a positive integer, got {self.iso}")

    @property
    def read_noise_electrons(self) -> float:
        """Readout noise standard deviation converted to electrons."""
        return self.read_noise_dn / self.gain

    def to_json(self) -> dict:
        return {
            "gain": self.gain,
            "black_level": self.black_level,
            "read_noise_dn": self.read_noise_dn,
            "iso": self.iso,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SensorCalibration":
        try:
            return cls(
                gain=float(doc["gain"]),
                black_level=float(doc["black_level"]),
                read_noise_dn=float(doc["read_noise_dn"]),
                iso=int(doc.get("iso", 100)),
            )
        except KeyError as exc:
            raise CalibrationError(f"calibration document missing field {exc}") from exc


@dataclass(frozen=True)
class RawImage:
    """Quantized sensor frame in digital numbers.

    ``data`` is a (height, width) row-major integer array; every value must
    lie in ``[0, 2**bit_depth - 1]``.
    """

    data: np.ndarray
    bit_depth: int = DEFAULT_BIT_DEPTH
    cfa_pattern: CfaPattern = CfaPattern.NONE

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise CalibrationError(f"raw data must be 2-D (height, width), got {arr.ndim}-D")
        if not np.issubdtype(arr.dtype, np.integer):
            raise CalibrationError(f"raw data must be integer DN values, got {arr.dtype}")
        wl = white_level(self.bit_depth)
        if arr.size and (arr.min() < 0 or arr.max() > wl):
            raise CalibrationError(
                f"DN values must lie in [0, {wl}], got range "
                f"[{arr.min()}, {arr.max()}]"
            )
        arr = np.ascontiguousarray(arr, dtype=np.uint16)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def white_level(self) -> int:
        return white_level(self.bit_depth)


@dataclass(frozen=True)
class ElectronMap:
    """Real-valued per-pixel electron estimates, the latent physical image.

    Values may be slightly negative where readout noise pushed the DN
    estimate below the black level; all values must be finite.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(np.asarray(self.data), dtype=np.float64)
        if arr.ndim != 2:
            raise CalibrationError(f"electron map must be 2-D, got {arr.ndim}-D")
        if arr.size and not np.isfinite(arr).all():
            raise CalibrationError("electron map contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def dn_to_electrons(raw: RawImage, calib: SensorCalibration) -> ElectronMap:
    """Invert the measurement model: ``x_hat = (y - b) / g``.

    Negative estimates are preserved so downstream noise statistics stay
    unbiased; consumers that need non-negativity clamp at their own layer.
    """
    x = (raw.data.astype(np.float64) - calib.black_level) / calib.gain
    return ElectronMap(x)


def _round_half_away(values: np.ndarray) -> np.ndarray:
    # np.round ties to even; the container contract is half-away-from-zero
    # for cross-platform bit-exactness.
    return np.copysign(np.floor(np.abs(values) + 0.5), values)


def electrons_to_dn(
    emap: ElectronMap,
    calib: SensorCalibration,
    bit_depth: int = DEFAULT_BIT_DEPTH,
    cfa_pattern: CfaPattern = CfaPattern.NONE,
) -> RawImage:
    """Re-digitize electrons: ``y = clamp(round(g*x + b), 0, 2**d - 1)``.

    Rounding is half-away-from-zero.
    """
    wl = white_level(bit_depth)
    if calib.black_level >= wl:
        raise CalibrationError(
            f"black level {calib.black_level} must be below white level {wl}"
        )
    y = calib.gain * emap.data + calib.black_level
    y = np.clip(_round_half_away(y), 0, wl).astype(np.uint16)
    return RawImage(y, bit_depth=bit_depth, cfa_pattern=cfa_pattern)


def roundtrip_error_bound(calib: SensorCalibration) -> float:
    """Max |electron error| of digitize-then-invert for in-range pixels.

    Quantization moves a pixel by at most half a DN, i.e. ``0.5 / g``
    electrons.
    """
    return 0.5 / calib.gain
