import hashlib
import json
import logging
import math
from datetime import datetime
from pathlib import Path
from typing import Optional, TypeVar

from pydantic import BaseModel, TypeAdapter, ValidationError

import posner
from posner.core import paths
from posner.core.errors import EmptySelectionError, PosnerError
from posner.schemas.generation import GenerationCensus
from posner.schemas.report import (
    AverageSummary,
    ClusterSummary,
    DetectionSummary,
    ElementSummary,
    PcaSummary,
    PhaseSummary,
    ReportBundle,
    RunMetadata,
    S6MinSummary,
    TimelineReport,
)
from posner.schemas.stats import EnergyStats, PersistenceStats, TimelineSegment
from posner.schemas.symmetry import PointGroup
from posner.storage import files

logger = logging.getLogger(__name__)

Model = TypeVar("Model", bound=BaseModel)

TIMELINE_HEADER = ("start_frame", "end_frame", "group_label", "duration_fs")

_persistence_list = TypeAdapter(list[PersistenceStats])


def detection_summary(source: str, group: PointGroup) -> DetectionSummary:
    return DetectionSummary(
        source=source,
        schoenflies=group.schoenflies,
        order=None if math.isinf(group.order) else int(group.order),
        tolerance=group.tolerance,
        elements=[
            ElementSummary(
                symbol=e.symbol,
                kind=e.kind.value,
                order=e.order,
                axis=None if e.axis is None else list(e.axis),
                score=e.score,
            )
            for e in group.elements
        ],
    )


def timeline_rows(segments: list[TimelineSegment]) -> list[tuple]:
    return [(s.start_frame, s.end_frame, s.group_label, repr(s.duration_fs)) for s in segments]


def occurrence_payload(tolerance: float, skip_frames: int, timestep_fs: float, occurrence: dict[str, float]) -> dict:
    return {
        "tolerance": tolerance,
        "skip_frames": skip_frames,
        "timestep_fs": timestep_fs,
        "percent": occurrence,
    }


def _load(path: Path, model: type[Model]) -> Optional[Model]:
    if not path.is_file():
        return None
    try:
        return model.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise PosnerError(f"{path.name} is not a valid {model.__name__}: {exc.errors()[0]['msg']}") from None


def load_timeline(run_dir: Path) -> Optional[TimelineReport]:
    csv_path, occurrence_path = paths.timeline_csv_path(run_dir), paths.occurrence_path(run_dir)
    if not csv_path.is_file() or not occurrence_path.is_file():
        return None
    segments = [
        TimelineSegment(
            start_frame=int(row["start_frame"]),
            end_frame=int(row["end_frame"]),
            group_label=row["group_label"],
            duration_fs=float(row["duration_fs"]),
        )
        for row in files.read_csv(csv_path)
    ]
    occurrence = files.read_json(occurrence_path)
    persistence_path = paths.persistence_path(run_dir)
    persistence = (
        _persistence_list.validate_json(persistence_path.read_text(encoding="utf-8"))
        if persistence_path.is_file() else []
    )
    return TimelineReport(
        tolerance=occurrence["tolerance"],
        skip_frames=occurrence["skip_frames"],
        timestep_fs=occurrence["timestep_fs"],
        segments=segments,
        occurrence=occurrence["percent"],
        persistence=persistence,
        high_symmetry_phase=_load(paths.phase_summary_path(run_dir), PhaseSummary),
    )


def payload_digest(bundle: ReportBundle) -> str:
    """sha256 of the canonical JSON of everything except the digest and the timestamp."""
    payload = bundle.model_dump(
        mode="json",
        exclude={"payload_digest": True, "metadata": {"generated_at"}},
    )
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def build_report(run_dir: Path, generated_at: Optional[datetime] = None) -> ReportBundle:
    """Gather every artifact the subcommands left in `run_dir` into one bundle."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise EmptySelectionError(f"run directory {run_dir} does not exist")

    sections = {
        "generation": _load(paths.census_path(run_dir), GenerationCensus),
        "detection": _load(paths.detection_path(run_dir), DetectionSummary),
        "timeline": load_timeline(run_dir),
        "average": _load(paths.average_summary_path(run_dir), AverageSummary),
        "pca": _load(paths.pca_summary_path(run_dir), PcaSummary),
        "clusters": _load(paths.clusters_summary_path(run_dir), ClusterSummary),
        "energy": _load(paths.energy_stats_path(run_dir), EnergyStats),
        "s6min": _load(paths.s6min_params_path(run_dir), S6MinSummary),
    }
    present = sorted(name for name, section in sections.items() if section is not None)
    if not present:
        raise EmptySelectionError(f"no analysis artifacts found in {run_dir}")

    metadata = RunMetadata(
        tool_version=posner.__version__,
        seed=sections["clusters"].seed if sections["clusters"] else None,
        tolerance=_first_tolerance(sections),
        skip_frames=sections["timeline"].skip_frames if sections["timeline"] else None,
        skip_fraction=_first_skip_fraction(sections),
        sources=present,
        generated_at=generated_at,
    )
    bundle = ReportBundle(metadata=metadata, **sections)
    bundle = bundle.model_copy(update={"payload_digest": payload_digest(bundle)})
    logger.info(f"Report for {run_dir}: sections {', '.join(present)}")
    return bundle


def _first_tolerance(sections: dict) -> Optional[float]:
    if sections["detection"] is not None:
        return sections["detection"].tolerance
    if sections["timeline"] is not None:
        return sections["timeline"].tolerance
    return None


def _first_skip_fraction(sections: dict) -> Optional[float]:
    if sections["average"] is not None:
        return sections["average"].skip_fraction
    if sections["pca"] is not None:
        return sections["pca"].skip_fraction
    return None


def report_schema() -> dict:
    return ReportBundle.model_json_schema()


def write_report(run_dir: Path, generated_at: Optional[datetime] = None) -> ReportBundle:
    bundle = build_report(run_dir, generated_at)
    files.write_json(paths.report_path(run_dir), bundle)
    files.write_json(paths.report_schema_path(run_dir), report_schema())
    return bundle
