"""Instance management, illumination statistics, and dataset balancing.

The experiments downstream slice detection metrics by how much light each
object actually received, measured as the mean of the electron map inside
the ground-truth bounding box. This module owns that statistic plus the
sampling machinery built on it: equal-count illumination intervals,
area-matched pairing between bright and dark instances, log-uniform target
light levels, complementary-count balancing, and the job lists that drive
synthetic sweep generation.

Interval convention: half-open ``[b_i, b_{i+1})`` everywhere, with the
final interval closed at the top.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DomainError,
    GeometryError,
    JobError,
    PairingError,
    PartitionError,
)
from .rng import derive_seed
from .sensor import ElectronMap

Bbox = tuple[float, float, float, float]


class LightCondition(enum.Enum):
    NORMAL = "NORMAL"
    LOW = "LOW"


@dataclass(frozen=True)
class Instance:
    """A ground-truth object: bbox plus derived illumination statistics."""

    id: str
    image_id: str
    category: str
    bbox: Bbox
    electron_mean: float | None = None
    iso: int = 100
    light_condition: LightCondition = LightCondition.NORMAL

    def __post_init__(self) -> None:
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise GeometryError(f"instance {self.id}: bbox extents must be positive, got {self.bbox}")
        object.__setattr__(self, "bbox", (float(x), float(y), float(w), float(h)))
        if self.electron_mean is not None and not math.isfinite(self.electron_mean):
            raise GeometryError(f"instance {self.id}: electron mean must be finite")

    @property
    def area(self) -> float:
        return self.bbox[2] * self.bbox[3]


@dataclass(frozen=True)
class ImageInfo:
    """One entry of the annotation document's images[] section."""

    id: str
    file: str
    width: int
    height: int
    iso: int = 100
    light_condition: LightCondition = LightCondition.NORMAL


def _bbox_window(bbox: Bbox) -> tuple[int, int, int, int]:
    x, y, w, h = bbox
    if w <= 0 or h <= 0:
        raise GeometryError(f"bbox extents must be positive, got {bbox}")
    return (
        int(math.floor(x)),
        int(math.floor(y)),
        int(math.ceil(x + w)),
        int(math.ceil(y + h)),
    )


def instance_electron_mean(emap: ElectronMap, bbox: Bbox, clip_to_bounds: bool = False) -> float:
    """Arithmetic mean of the electron map inside an axis-aligned bbox.

    Signed values are included as-is (no clamping at zero). With the
    default ``clip_to_bounds=False`` a bbox leaving the raster raises
    :class:`GeometryError`; with ``True`` the window is intersected with
    the raster instead, which is what free-floating detector boxes need.
    """
    x0, y0, x1, y1 = _bbox_window(bbox)
    if clip_to_bounds:
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, emap.width), min(y1, emap.height)
        if x0 >= x1 or y0 >= y1:
            raise GeometryError(f"bbox {bbox} does not overlap the {emap.width}x{emap.height} raster")
    elif x0 < 0 or y0 < 0 or x1 > emap.width or y1 > emap.height:
        raise GeometryError(
            f"bbox {bbox} exceeds the {emap.width}x{emap.height} raster bounds"
        )
    return float(emap.data[y0:y1, x0:x1].mean())


@dataclass(frozen=True)
class IntervalPartition:
    """Contiguous half-open intervals over an electron-value range.

    ``boundaries`` holds ``n+1`` ascending edges; ``counts`` records how
    many of the builder's values landed in each interval. When duplicate
    values force an interval to collapse (see :func:`equal_tp_partition`),
    ``degenerate_ties`` is set and adjacent boundaries may coincide.
    """

    boundaries: tuple[float, ...]
    counts: tuple[int, ...]
    degenerate_ties: bool = False

    def __post_init__(self) -> None:
        bounds = tuple(float(b) for b in self.boundaries)
        if len(bounds) < 2:
            raise PartitionError("a partition needs at least two boundaries")
        diffs = np.diff(bounds)
        if self.degenerate_ties:
            if np.any(diffs < 0):
                raise PartitionError("boundaries must be non-decreasing")
        elif np.any(diffs <= 0):
            raise PartitionError(f"boundaries must be strictly ascending, got {bounds}")
        if len(self.counts) != len(bounds) - 1:
            raise PartitionError("counts must have one entry per interval")
        object.__setattr__(self, "boundaries", bounds)
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def n_intervals(self) -> int:
        return len(self.boundaries) - 1

    @classmethod
    def from_boundaries(
        cls, boundaries: Sequence[float], values: Sequence[float] | None = None
    ) -> "IntervalPartition":
        """Build a partition from explicit edges, counting ``values`` if given."""
        bounds = tuple(float(b) for b in boundaries)
        part = cls(bounds, counts=(0,) * (len(bounds) - 1))
        if values is not None:
            idx = part.assign(values)
            counts = np.bincount(idx[idx >= 0], minlength=part.n_intervals)
            part = cls(bounds, counts=tuple(int(c) for c in counts))
        return part

    def assign(self, values: Sequence[float]) -> np.ndarray:
        """Interval index per value; -1 for values outside [first, last]."""
        v = np.asarray(values, dtype=np.float64)
        bounds = np.asarray(self.boundaries)
        idx = np.searchsorted(bounds, v, side="right") - 1
        idx = np.where(v == bounds[-1], self.n_intervals - 1, idx)  # top edge closed
        outside = (v < bounds[0]) | (v > bounds[-1])
        return np.where(outside, -1, idx).astype(np.int64)

    def to_json(self) -> dict:
        return {
            "boundaries": list(self.boundaries),
            "counts": list(self.counts),
            "degenerate_ties": self.degenerate_ties,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "IntervalPartition":
        return cls(
            boundaries=tuple(doc["boundaries"]),
            counts=tuple(doc["counts"]),
            degenerate_ties=bool(doc.get("degenerate_ties", False)),
        )


def equal_tp_partition(values: Sequence[float], n_bins: int) -> IntervalPartition:
    """Split a value range into intervals holding (near-)equal counts.

    Values are sorted; the first ``N mod n`` intervals get a quota of
    ``ceil(N/n)`` and the rest ``floor(N/n)``. Each internal boundary sits
    at the midpoint between the two sorted values spanning a quota edge.
    Equal values straddling an edge all go to the lower interval, so with
    heavy duplication counts deviate from the quotas (and an interval can
    even end up empty, flagged via ``degenerate_ties``).
    """
    vals = np.sort(np.asarray(values, dtype=np.float64))
    n = int(n_bins)
    if n < 1:
        raise PartitionError(f"n_bins must be >= 1, got {n_bins}")
    if vals.size < n:
        raise PartitionError(f"cannot split {vals.size} values into {n} intervals")
    if vals.size and not np.isfinite(vals).all():
        raise PartitionError("values must be finite")

    base, extra = divmod(vals.size, n)
    quota_edges = np.cumsum([base + 1] * extra + [base] * (n - extra))[:-1]

    edges: list[int] = []
    degenerate = False
    prev = 0
    for target in quota_edges:
        e = max(int(target), prev)
        while 0 < e < vals.size and vals[e] == vals[e - 1]:
            e += 1  # ties go to the lower interval
        edges.append(e)
        prev = e

    boundaries = [float(vals[0])]
    for e in edges:
        if e >= vals.size:
            degenerate = True
            boundaries.append(float(vals[-1]))
        else:
            boundaries.append(float(0.5 * (vals[e - 1] + vals[e])))
    boundaries.append(float(vals[-1]))

    cuts = [0] + edges + [int(vals.size)]
    counts = tuple(cuts[i + 1] - cuts[i] for i in range(n))
    if min(counts) == 0:
        degenerate = True

    return IntervalPartition(tuple(boundaries), counts, degenerate_ties=degenerate)


def log_uniform_targets(lo: float, hi: float, n: int) -> np.ndarray:
    """``n`` light levels geometrically spaced from ``lo`` to ``hi`` inclusive."""
    if not (0 < lo < hi) or not (math.isfinite(lo) and math.isfinite(hi)):
        raise DomainError(f"need 0 < lo < hi, got lo={lo}, hi={hi}")
    if n < 2:
        raise DomainError(f"need at least 2 targets, got {n}")
    return np.geomspace(lo, hi, n)


@dataclass(frozen=True)
class Pairing:
    """A matching between two instance sets, minimizing total area gap."""

    pairs: tuple[tuple[str, str], ...]
    total_area_gap: float

    def __post_init__(self) -> None:
        a_ids = [a for a, _ in self.pairs]
        b_ids = [b for _, b in self.pairs]
        if len(set(a_ids)) != len(a_ids) or len(set(b_ids)) != len(b_ids):
            raise PairingError("each instance may appear in at most one pair")


def pair_by_area(set_a: Sequence[Instance], set_b: Sequence[Instance]) -> Pairing:
    """Pair instances across two sets, minimizing the summed |area| difference.

    Both sets are sorted by area and paired rank-wise, which is optimal for
    the 1-D absolute-difference assignment problem when the sets have equal
    size. Ties in area break on instance id, keeping the result
    deterministic.
    """
    if not set_a or not set_b:
        raise PairingError("both instance sets must be non-empty")
    sa = sorted(set_a, key=lambda i: (i.area, i.id))
    sb = sorted(set_b, key=lambda i: (i.area, i.id))
    pairs = tuple((a.id, b.id) for a, b in zip(sa, sb))
    gap = float(sum(abs(a.area - b.area) for a, b in zip(sa, sb)))
    return Pairing(pairs=pairs, total_area_gap=gap)


@dataclass(frozen=True)
class BinDeficit:
    """Shortfall of one histogram bin and the targets sampled to fill it."""

    bin_index: int
    lo: float
    hi: float
    existing: int
    deficit: int
    targets: tuple[float, ...]


def complementary_targets(
    existing: Sequence[float],
    value_range: tuple[float, float],
    n_bins: int,
    target_per_bin: int | str = "auto",
    seed: int = 0,
) -> list[BinDeficit]:
    """Sample light-level targets that flatten a skewed illumination histogram.

    ``existing`` values are histogrammed into ``n_bins`` log-uniform bins
    over ``value_range`` (values outside the range are ignored). Each bin
    short of ``target_per_bin`` (``"auto"`` = the fullest bin's count) gets
    its deficit filled with log-uniformly drawn targets inside the bin, so
    existing + emitted counts reach ``max(count, target)`` everywhere.
    """
    lo, hi = value_range
    if not (0 < lo < hi) or not (math.isfinite(lo) and math.isfinite(hi)):
        raise DomainError(f"need 0 < lo < hi, got range ({lo}, {hi})")
    if n_bins < 1:
        raise DomainError(f"n_bins must be >= 1, got {n_bins}")

    edges = np.geomspace(lo, hi, n_bins + 1)
    part = IntervalPartition.from_boundaries(edges, values=existing)
    counts = np.asarray(part.counts)

    if target_per_bin == "auto":
        target = int(counts.max()) if counts.size else 0
    else:
        target = int(target_per_bin)
        if target < 0:
            raise DomainError(f"target_per_bin must be >= 0, got {target_per_bin}")

    out: list[BinDeficit] = []
    for i in range(n_bins):
        deficit = max(0, target - int(counts[i]))
        b_lo, b_hi = float(edges[i]), float(edges[i + 1])
        if deficit:
            rng = np.random.default_rng(derive_seed("complementary-targets", seed, i))
            draws = np.exp(rng.uniform(math.log(b_lo), math.log(b_hi), size=deficit))
            # keep draws inside the half-open bin despite exp/log rounding
            draws = np.clip(draws, b_lo, np.nextafter(b_hi, b_lo))
            targets = tuple(float(t) for t in draws)
        else:
            targets = ()
        out.append(
            BinDeficit(
                bin_index=i,
                lo=b_lo,
                hi=b_hi,
                existing=int(counts[i]),
                deficit=deficit,
                targets=targets,
            )
        )
    return out


@dataclass(frozen=True)
class AugmentationJob:
    """One synthetic sample to generate: source instance x target light level."""

    job_id: str
    source_id: str
    image_id: str
    bbox: Bbox
    target_electrons: float
    k: float
    seed: int
    target_iso: int | None = None

    def to_json(self) -> dict:
        doc = {
            "job_id": self.job_id,
            "source_id": self.source_id,
            "image_id": self.image_id,
            "bbox": list(self.bbox),
            "target_electrons": self.target_electrons,
            "k": self.k,
            "seed": self.seed,
        }
        if self.target_iso is not None:
            doc["target_iso"] = self.target_iso
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "AugmentationJob":
        return cls(
            job_id=str(doc["job_id"]),
            source_id=str(doc["source_id"]),
            image_id=str(doc["image_id"]),
            bbox=tuple(float(v) for v in doc["bbox"]),
            target_electrons=float(doc["target_electrons"]),
            k=float(doc["k"]),
            seed=int(doc["seed"]),
            target_iso=int(doc["target_iso"]) if doc.get("target_iso") is not None else None,
        )


def build_synthetic_sweep(
    sources: Sequence[Instance],
    targets: Sequence[float],
    master_seed: int = 0,
) -> list[AugmentationJob]:
    """Cross sources with target light levels into a deterministic job list.

    Thinning can only darken, so every source must be at least as bright as
    the brightest target; offenders are reported together in one error. Each
    job's seed is derived from (master seed, source id, target), making the
    job list order irrelevant to the generated pixels.
    """
    if not sources:
        raise JobError("no source instances given")
    tgt = [float(t) for t in targets]
    if not tgt:
        raise JobError("no target light levels given")
    if min(tgt) <= 0:
        raise DomainError(f"targets must be positive electron counts, got {min(tgt)}")

    top = max(tgt)
    offenders = [
        s.id
        for s in sources
        if s.electron_mean is None or s.electron_mean < top
    ]
    if offenders:
        raise JobError(
            f"thinning cannot brighten: {len(offenders)} source(s) dimmer than the "
            f"brightest target {top:.6g} e: {', '.join(offenders[:10])}"
            + ("..." if len(offenders) > 10 else "")
        )

    jobs = []
    for src in sources:
        for j, t in enumerate(tgt):
            jobs.append(
                AugmentationJob(
                    job_id=f"{src.id}__t{j:02d}",
                    source_id=src.id,
                    image_id=src.image_id,
                    bbox=src.bbox,
                    target_electrons=t,
                    k=t / src.electron_mean,
                    seed=derive_seed(master_seed, src.id, t),
                )
            )
    return jobs


def jobs_to_json(jobs: Sequence[AugmentationJob]) -> dict:
    return {"schema_version": 1, "jobs": [j.to_json() for j in jobs]}


def jobs_from_json(doc: dict) -> list[AugmentationJob]:
    return [AugmentationJob.from_json(j) for j in doc.get("jobs", [])]


def load_annotations(source: str | Path | dict) -> tuple[dict[str, ImageInfo], list[Instance]]:
    """Read an annotation document: images[] plus annotations[].

    Expected structure (a subset of the common detection-annotation
    convention):

        {"images": [{"id", "file", "width", "height", "iso", "light_condition"}],
         "annotations": [{"id", "image_id", "category", "bbox": [x, y, w, h]}]}

    Bounding boxes are validated against their image's extent.
    """
    if isinstance(source, dict):
        doc = source
    else:
        doc = json.loads(Path(source).read_text())

    images: dict[str, ImageInfo] = {}
    for entry in doc.get("images", []):
        info = ImageInfo(
            id=str(entry["id"]),
            file=str(entry.get("file", "")),
            width=int(entry["width"]),
            height=int(entry["height"]),
            iso=int(entry.get("iso", 100)),
            light_condition=LightCondition(entry.get("light_condition", "NORMAL")),
        )
        images[info.id] = info

    instances: list[Instance] = []
    for entry in doc.get("annotations", []):
        image_id = str(entry["image_id"])
        if image_id not in images:
            raise GeometryError(f"annotation {entry.get('id')} references unknown image {image_id}")
        img = images[image_id]
        x, y, w, h = (float(v) for v in entry["bbox"])
        if x < 0 or y < 0 or x + w > img.width or y + h > img.height:
            raise GeometryError(
                f"annotation {entry.get('id')}: bbox {entry['bbox']} exceeds "
                f"image {image_id} bounds {img.width}x{img.height}"
            )
        instances.append(
            Instance(
                id=str(entry["id"]),
                image_id=image_id,
                category=str(entry.get("category", "person")),
                bbox=(x, y, w, h),
                electron_mean=(
                    float(entry["electron_mean"]) if entry.get("electron_mean") is not None else None
                ),
                iso=img.iso,
                light_condition=img.light_condition,
            )
        )
    return images, instances


def with_electron_means(
    instances: Iterable[Instance], emaps: dict[str, ElectronMap]
) -> list[Instance]:
    """Fill each instance's electron mean from its image's electron map."""
    out = []
    for inst in instances:
        if inst.image_id not in emaps:
            raise GeometryError(f"no electron map for image {inst.image_id}")
        mean = instance_electron_mean(emaps[inst.image_id], inst.bbox)
        out.append(replace(inst, electron_mean=mean))
    return out
