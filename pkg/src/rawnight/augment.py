"""Deterministic execution of augmentation job lists.

Each job darkens one source image to a target light level, re-digitizes
it under the configured gain policy, writes the synthetic container, and
records the realized bbox electron mean. Because every random draw is
keyed by the job's own seed, jobs can run under any worker count and in
any order while leaving byte-identical outputs: results are collected by
job id, never by completion time.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .container import RasterContainer, read_container, write_container
from .dataset import AugmentationJob, instance_electron_mean
from .errors import JobError, RawnightError
from .noise import GainPolicy, ThinningMode, ThinningSpec, adjust_gain_for_target, apply_thinning
from .sensor import SensorCalibration, dn_to_electrons, electrons_to_dn

ContainerLoader = Callable[[str], RasterContainer]


@dataclass(frozen=True)
class JobResult:
    job_id: str
    ok: bool
    output: str | None = None
    realized_electron_mean: float | None = None
    standard_error: float | None = None
    error: str | None = None

    def to_json(self, job: AugmentationJob, mode: ThinningMode) -> dict:
        return {
            "job_id": self.job_id,
            "source_id": job.source_id,
            "image_id": job.image_id,
            "target_electrons": job.target_electrons,
            "k": job.k,
            "seed": job.seed,
            "mode": mode.value,
            "ok": self.ok,
            "output": self.output,
            "realized_electron_mean": self.realized_electron_mean,
            "standard_error": self.standard_error,
            "error": self.error,
        }


def predicted_mean_standard_error(
    source_electrons: np.ndarray,
    k: float,
    compensation_var: float,
    dst_calib: SensorCalibration,
    mode: ThinningMode,
) -> float:
    """Model-predicted standard error of the realized bbox electron mean.

    Thinning adds per-pixel variance ``k*(1-k)*max(x,0) + delta``
    (zero for the naive mode) and re-digitization adds uniform quantization
    noise of one DN step, ``(1/g)**2 / 12`` electrons^2.
    """
    n = source_electrons.size
    if mode is ThinningMode.NAIVE:
        noise_var = 0.0
    else:
        noise_var = float(np.sum(k * (1.0 - k) * np.maximum(source_electrons, 0.0) + compensation_var))
    quant_var = (1.0 / dst_calib.gain) ** 2 / 12.0
    return math.sqrt(noise_var / n**2 + quant_var / n)


def execute_job(
    job: AugmentationJob,
    source: RasterContainer,
    mode: ThinningMode,
    gain_policy: GainPolicy,
    iso_ladder: Mapping[int, SensorCalibration],
    out_dir: Path,
) -> JobResult:
    """Run one job end to end; failures are captured, not raised."""
    try:
        if source.kind != "dn":
            raise JobError(f"job {job.job_id}: source container must hold DN samples")
        src_calib = source.calibration
        emap = dn_to_electrons(source.image, src_calib)

        dst_calib = adjust_gain_for_target(
            src_calib, job.k, gain_policy, target_iso=job.target_iso, iso_ladder=iso_ladder
        )
        spec = ThinningSpec(
            k=job.k, mode=mode, src_calib=src_calib, dst_calib=dst_calib, seed=job.seed
        )
        thinned = apply_thinning(emap, spec)
        synthetic = electrons_to_dn(
            thinned, dst_calib, bit_depth=source.bit_depth, cfa_pattern=source.cfa_pattern
        )

        out_name = f"{job.job_id}.rnc"
        write_container(
            out_dir / out_name,
            RasterContainer.from_raw(
                synthetic,
                dst_calib,
                provenance={
                    "job_id": job.job_id,
                    "source_image": job.image_id,
                    "k": job.k,
                    "mode": mode.value,
                    "seed": job.seed,
                    "target_electrons": job.target_electrons,
                },
            ),
        )

        realized = instance_electron_mean(dn_to_electrons(synthetic, dst_calib), job.bbox)
        x0, y0 = int(job.bbox[0]), int(job.bbox[1])
        x1, y1 = int(job.bbox[0] + job.bbox[2]), int(job.bbox[1] + job.bbox[3])
        se = predicted_mean_standard_error(
            emap.data[y0:y1, x0:x1], job.k, spec.read_noise_compensation_var, dst_calib, mode
        )
        return JobResult(
            job_id=job.job_id,
            ok=True,
            output=out_name,
            realized_electron_mean=realized,
            standard_error=se,
        )
    except RawnightError as exc:
        return JobResult(job_id=job.job_id, ok=False, error=f"{type(exc).__name__}: {exc}")


def run_jobs(
    jobs: Sequence[AugmentationJob],
    loader: ContainerLoader,
    mode: ThinningMode,
    gain_policy: GainPolicy,
    iso_ladder: Mapping[int, SensorCalibration],
    out_dir: str | Path,
    workers: int = 1,
    manifest_extra: Mapping | None = None,
) -> dict:
    """Execute a job list and assemble its manifest (ordered by job id).

    ``loader`` maps an image id to its source container; containers are
    read once per distinct image. The manifest is a plain dict ready for
    canonical JSON serialization.
    """
    ids = [j.job_id for j in jobs]
    if len(set(ids)) != len(ids):
        raise JobError("job ids must be unique")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    sources: dict[str, RasterContainer | str] = {}
    for job in jobs:
        if job.image_id not in sources:
            try:
                sources[job.image_id] = loader(job.image_id)
            except RawnightError as exc:
                sources[job.image_id] = f"{type(exc).__name__}: {exc}"

    def run_one(job: AugmentationJob) -> JobResult:
        source = sources[job.image_id]
        if isinstance(source, str):
            return JobResult(job_id=job.job_id, ok=False, error=source)
        return execute_job(job, source, mode, gain_policy, iso_ladder, out_dir)

    if workers <= 1 or len(jobs) <= 1:
        results = [run_one(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, jobs))

    by_id = {r.job_id: r for r in results}
    job_by_id = {j.job_id: j for j in jobs}
    rows = [by_id[jid].to_json(job_by_id[jid], mode) for jid in sorted(by_id)]

    manifest = {
        "schema_version": 1,
        "mode": mode.value,
        "gain_policy": gain_policy.value,
        "n_jobs": len(jobs),
        "n_failed": sum(1 for r in results if not r.ok),
        "jobs": rows,
    }
    manifest.update(dict(manifest_extra or {}))
    return manifest


def container_dir_loader(directory: str | Path, files_by_image: Mapping[str, str]) -> ContainerLoader:
    """Loader resolving image ids through an annotation document's file map."""
    directory = Path(directory)

    def load(image_id: str) -> RasterContainer:
        if image_id not in files_by_image:
            raise JobError(f"no container file registered for image {image_id}")
        return read_container(directory / files_by_image[image_id])

    return load
