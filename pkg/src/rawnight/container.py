"""Bit-exact raster container: "RNC1" magic, JSON header, LE payload.

Layout:

    bytes 0..3   magic b"RNC1"
    bytes 4..7   header length N, little-endian unsigned 32-bit
    bytes 8..8+N UTF-8 JSON header
    remainder    width*height samples, row-major, little-endian

DN rasters store unsigned 16-bit samples; electron maps store IEEE float64
(they are real-valued and the round-trip contract would not survive
requantization). The header is self-describing: dimensions, bit depth, CFA
tag, the full sensor calibration, and free-form provenance. Everything is
written canonically (sorted keys, no whitespace), so identical content
yields identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContainerError
from .sensor import CfaPattern, ElectronMap, RawImage, SensorCalibration

MAGIC = b"RNC1"
SCHEMA_VERSION = 1

KIND_DN = "dn"
KIND_ELECTRONS = "electrons"

_DTYPES = {KIND_DN: "<u2", KIND_ELECTRONS: "<f8"}


@dataclass(frozen=True)
class RasterContainer:
    """In-memory view of one container file."""

    kind: str
    calibration: SensorCalibration
    bit_depth: int
    cfa_pattern: CfaPattern
    provenance: dict = field(default_factory=dict)
    image: RawImage | None = None
    electrons: ElectronMap | None = None

    def __post_init__(self) -> None:
        if self.kind == KIND_DN:
            if self.image is None:
                raise ContainerError("dn container requires a RawImage")
        elif self.kind == KIND_ELECTRONS:
            if self.electrons is None:
                raise ContainerError("electrons container requires an ElectronMap")
        else:
            raise ContainerError(f"unknown container kind {self.kind!r}")

    @classmethod
    def from_raw(
        cls,
        image: RawImage,
        calibration: SensorCalibration,
        provenance: dict | None = None,
    ) -> "RasterContainer":
        return cls(
            kind=KIND_DN,
            calibration=calibration,
            bit_depth=image.bit_depth,
            cfa_pattern=image.cfa_pattern,
            provenance=provenance or {},
            image=image,
        )

    @classmethod
    def from_electrons(
        cls,
        electrons: ElectronMap,
        calibration: SensorCalibration,
        bit_depth: int,
        cfa_pattern: CfaPattern = CfaPattern.NONE,
        provenance: dict | None = None,
    ) -> "RasterContainer":
        return cls(
            kind=KIND_ELECTRONS,
            calibration=calibration,
            bit_depth=bit_depth,
            cfa_pattern=cfa_pattern,
            provenance=provenance or {},
            electrons=electrons,
        )

    @property
    def width(self) -> int:
        data = self.image if self.kind == KIND_DN else self.electrons
        return data.width

    @property
    def height(self) -> int:
        data = self.image if self.kind == KIND_DN else self.electrons
        return data.height


def write_container(path: str | Path, container: RasterContainer) -> None:
    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": container.kind,
        "dtype": _DTYPES[container.kind],
        "width": container.width,
        "height": container.height,
        "bit_depth": container.bit_depth,
        "cfa_pattern": container.cfa_pattern.value,
        "calibration": container.calibration.to_json(),
        "provenance": container.provenance,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if container.kind == KIND_DN:
        payload = container.image.data.astype("<u2").tobytes()
    else:
        payload = container.electrons.data.astype("<f8").tobytes()

    blob = MAGIC + len(header_bytes).to_bytes(4, "little") + header_bytes + payload
    Path(path).write_bytes(blob)


def read_container(path: str | Path) -> RasterContainer:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as exc:
        raise ContainerError(f"container not found: {path}") from exc

    if len(blob) < 8:
        raise ContainerError(f"{path}: truncated container (need 8 header bytes, got {len(blob)}) at byte 0")
    if blob[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {blob[:4]!r} at byte 0")
    header_len = int.from_bytes(blob[4:8], "little")
    if len(blob) < 8 + header_len:
        raise ContainerError(
            f"{path}: truncated header (declared {header_len} bytes, "
            f"{len(blob) - 8} available) at byte 8"
        )
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: malformed JSON header at byte 8: {exc}") from exc

    try:
        kind = header["kind"]
        width = int(header["width"])
        height = int(header["height"])
        bit_depth = int(header["bit_depth"])
        cfa = CfaPattern(header.get("cfa_pattern", "NONE"))
        calib = SensorCalibration.from_json(header["calibration"])
    except (KeyError, ValueError) as exc:
        raise ContainerError(f"{path}: incomplete header: {exc}") from exc

    if kind not in _DTYPES:
        raise ContainerError(f"{path}: unknown container kind {kind!r}")
    dtype = np.dtype(_DTYPES[kind])
    expected = width * height * dtype.itemsize
    payload = blob[8 + header_len :]
    if len(payload) != expected:
        raise ContainerError(
            f"{path}: payload size mismatch (expected {expected} bytes for "
            f"{width}x{height} {dtype}, got {len(payload)}) at byte {8 + header_len}"
        )

    samples = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    provenance = header.get("provenance", {})
    if kind == KIND_DN:
        image = RawImage(samples.astype(np.uint16), bit_depth=bit_depth, cfa_pattern=cfa)
        return RasterContainer.from_raw(image, calib, provenance)
    emap = ElectronMap(samples.astype(np.float64))
    return RasterContainer.from_electrons(emap, calib, bit_depth, cfa, provenance)
