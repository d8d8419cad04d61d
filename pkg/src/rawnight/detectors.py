"""Synthetic stand-ins for an external object detector.

Real detection results enter the toolkit as JSON files produced by
whatever model is under study. These toy detectors exist so end-to-end
experiments and regression tests can run self-contained, with detection
behaviour that depends on image statistics in a controlled, analyzable
way: one thresholds on how much light a box received, the other on the
dispersion of its pixels (which is exactly the statistic that separates
physically thinned frames from naively scaled ones).

Both emit a perfect copy of the ground-truth box with a fixed score when
they fire, and nothing when they do not.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Instance
from .errors import ConfigError
from .evaluation import Detection
from .sensor import ElectronMap


@dataclass(frozen=True)
class MeanThresholdDetector:
    """Fires iff the bbox electron mean reaches ``min_electrons``."""

    min_electrons: float
    score: float = 0.9

    def detect(self, emap: ElectronMap, instances: Sequence[Instance]) -> list[Detection]:
        out = []
        for inst in instances:
            x0, y0 = int(inst.bbox[0]), int(inst.bbox[1])
            x1, y1 = int(inst.bbox[0] + inst.bbox[2]), int(inst.bbox[1] + inst.bbox[3])
            region = emap.data[y0:y1, x0:x1]
            if float(region.mean()) >= self.min_electrons:
                out.append(
                    Detection(
                        image_id=inst.image_id,
                        category=inst.category,
                        bbox=inst.bbox,
                        score=self.score,
                    )
                )
        return out


@dataclass(frozen=True)
class DispersionThresholdDetector:
    """Fires iff the bbox variance-to-mean ratio reaches ``min_ratio``.

    A photon-limited patch has ratio ~1 regardless of brightness; evenly
    scaling pixel values by ``k`` collapses it to ~``k``. Thresholding
    between the two makes this detector see real and noise-aware synthetic
    frames but go blind on naively dimmed ones.
    """

    min_ratio: float = 0.5
    score: float = 0.9

    def detect(self, emap: ElectronMap, instances: Sequence[Instance]) -> list[Detection]:
        out = []
        for inst in instances:
            x0, y0 = int(inst.bbox[0]), int(inst.bbox[1])
            x1, y1 = int(inst.bbox[0] + inst.bbox[2]), int(inst.bbox[1] + inst.bbox[3])
            region = emap.data[y0:y1, x0:x1].astype(np.float64)
            mean = float(region.mean())
            if mean <= 0:
                continue
            ratio = float(region.var(ddof=1)) / mean
            if ratio >= self.min_ratio:
                out.append(
                    Detection(
                        image_id=inst.image_id,
                        category=inst.category,
                        bbox=inst.bbox,
                        score=self.score,
                    )
                )
        return out


DEFAULT_ABLATION_DETECTOR = {"kind": "dispersion_threshold", "min_ratio": 0.5, "score": 0.9}


def make_detector(doc: dict | None):
    """Build a toy detector from its config dict (``kind`` plus parameters)."""
    doc = dict(doc) if doc else dict(DEFAULT_ABLATION_DETECTOR)
    kind = doc.pop("kind", None)
    try:
        if kind == "mean_threshold":
            return MeanThresholdDetector(**doc)
        if kind == "dispersion_threshold":
            return DispersionThresholdDetector(**doc)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for detector {kind!r}: {exc}") from exc
    raise ConfigError(f"unknown toy detector kind {kind!r}")
