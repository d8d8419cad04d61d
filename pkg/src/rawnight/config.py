"""Run configuration: seeds, ISO ladder, evaluation defaults, paths.

A run is configured by a single JSON document; command-line flags override
individual fields, and the lowest-priority seed source is the
``RAWNIGHT_SEED`` environment variable. The effective (post-override)
configuration is hashed, and that hash is embedded in every report and
manifest the toolkit writes, so results can always be traced back to the
exact settings that produced them.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .evaluation import AP_MODES, DEFAULT_IOU_THRESHOLDS, DEFAULT_SCORE_THRESHOLD
from .rng import U64_MASK
from .sensor import SensorCalibration

SEED_ENV_VAR = "RAWNIGHT_SEED"


@dataclass(frozen=True)
class EvalSettings:
    score_threshold: float = DEFAULT_SCORE_THRESHOLD
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    ap_mode: str = "continuous"

    def __post_init__(self) -> None:
        thrs = tuple(float(t) for t in self.iou_thresholds)
        if not thrs:
            raise ConfigError("at least one IOU threshold is required")
        if any(not (0.0 < t <= 1.0) for t in thrs):
            raise ConfigError(f"IOU thresholds must lie in (0, 1], got {thrs}")
        if any(b <= a for a, b in zip(thrs, thrs[1:])):
            raise ConfigError(f"IOU thresholds must be strictly ascending, got {thrs}")
        if not (0.0 <= self.score_threshold <= 1.0):
            raise ConfigError(f"score threshold must be in [0, 1], got {self.score_threshold}")
        if self.ap_mode not in AP_MODES:
            raise ConfigError(f"ap_mode must be one of {AP_MODES}, got {self.ap_mode!r}")
        object.__setattr__(self, "iou_thresholds", thrs)


@dataclass(frozen=True)
class RunConfig:
    master_seed: int = 0
    iso_ladder: dict[int, SensorCalibration] = field(default_factory=dict)
    eval: EvalSettings = field(default_factory=EvalSettings)
    input_dir: str = "."
    output_dir: str = "."
    ablation_detector: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 <= self.master_seed <= U64_MASK:
            raise ConfigError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")

    def to_canonical_dict(self) -> dict:
        return {
            "schema_version": 1,
            "master_seed": self.master_seed,
            "iso_ladder": {
                str(iso): calib.to_json() for iso, calib in sorted(self.iso_ladder.items())
            },
            "eval": {
                "score_threshold": self.eval.score_threshold,
                "iou_thresholds": list(self.eval.iou_thresholds),
                "ap_mode": self.eval.ap_mode,
            },
            "paths": {"input_dir": self.input_dir, "output_dir": self.output_dir},
            "ablation_detector": self.ablation_detector,
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _parse_iso_ladder(doc: dict) -> dict[int, SensorCalibration]:
    ladder: dict[int, SensorCalibration] = {}
    for key, entry in doc.items():
        try:
            iso = int(key)
        except ValueError as exc:
            raise ConfigError(f"ISO ladder key {key!r} is not an integer") from exc
        entry = dict(entry)
        entry.setdefault("iso", iso)
        if int(entry["iso"]) != iso:
            raise ConfigError(f"ISO ladder entry {key} disagrees with its iso field {entry['iso']}")
        ladder[iso] = SensorCalibration.from_json(entry)
    return ladder


def load_config(
    path: str | Path | None,
    seed_override: int | None = None,
    input_dir: str | None = None,
    output_dir: str | None = None,
) -> RunConfig:
    """Assemble the effective configuration.

    Seed priority: the ``--seed`` flag, then the config file, then the
    ``RAWNIGHT_SEED`` environment variable, then 0.
    """
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc

    if seed_override is not None:
        seed = seed_override
    elif "master_seed" in doc:
        seed = int(doc["master_seed"])
    elif os.environ.get(SEED_ENV_VAR):
        try:
            seed = int(os.environ[SEED_ENV_VAR])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {os.environ[SEED_ENV_VAR]!r}") from exc
    else:
        seed = 0

    eval_doc = doc.get("eval", {})
    eval_settings = EvalSettings(
        score_threshold=float(eval_doc.get("score_threshold", DEFAULT_SCORE_THRESHOLD)),
        iou_thresholds=tuple(eval_doc.get("iou_thresholds", DEFAULT_IOU_THRESHOLDS)),
        ap_mode=str(eval_doc.get("ap_mode", "continuous")),
    )

    paths = doc.get("paths", {})
    return RunConfig(
        master_seed=seed,
        iso_ladder=_parse_iso_ladder(doc.get("iso_ladder", {})),
        eval=eval_settings,
        input_dir=input_dir if input_dir is not None else str(paths.get("input_dir", ".")),
        output_dir=output_dir if output_dir is not None else str(paths.get("output_dir", ".")),
        ablation_detector=dict(doc.get("ablation_detector", {})),
    )
