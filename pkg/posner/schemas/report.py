from datetime import datetime
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from posner.schemas.stats import EnergyStats, PersistenceStats, TimelineSegment
from posner.schemas.generation import GenerationCensus


class ElementSummary(BaseModel):
    symbol: str
    kind: str
    order: int
    axis: Optional[list[float]] = None
    score: float


class DetectionSummary(BaseModel):
    source: str
    schoenflies: str
    order: Optional[int] = Field(..., description="null for infinite groups")
    tolerance: float
    elements: list[ElementSummary]


class PhaseSummary(BaseModel):
    segment: Optional[TimelineSegment] = None
    average_label: Optional[str] = None
    energy: Optional[EnergyStats] = None
    max_step_displacement: float


class TimelineReport(BaseModel):
    tolerance: float
    skip_frames: int
    timestep_fs: float
    segments: list[TimelineSegment]
    occurrence: dict[str, float]
    persistence: list[PersistenceStats]
    high_symmetry_phase: Optional[PhaseSummary] = None


class AverageSummary(BaseModel):
    skip_fraction: float
    reference_index: int
    frames_averaged: int
    label: str
    rmsd_to_reference: float
    max_aligned_rmsd: float


class ModeSummary(BaseModel):
    mode: int
    eigenvalue: float
    explained_fraction: float
    amplitude: float
    max_displacement: float
    max_atom: int
    plus_label: str
    minus_label: str


class PcaSummary(BaseModel):
    n_frames: int
    skip_fraction: float
    mass_weighted: bool
    total_variance: float
    mean_label: str
    display_scale: float = Field(3.0, description="Arrow elongation used for figures; vectors are stored unscaled")
    modes: list[ModeSummary]


class ClusterSummary(BaseModel):
    k: int
    seed: int
    method: str
    sizes: list[int]
    inertia: float
    silhouette: Optional[float] = None
    centroid_labels: list[str]
    scores_per_k: dict[str, float] = {}


class S6MinSummary(BaseModel):
    params: dict[str, list[float] | float]
    energy: float
    start_index: int
    starts_tried: int
    starts_collided: int
    label: str
    relaxed_energy: float
    relaxed_label: str
    relaxed_converged: bool


class RunMetadata(BaseModel):
    tool_version: str
    seed: Optional[int] = None
    tolerance: Optional[float] = None
    skip_frames: Optional[int] = None
    skip_fraction: Optional[float] = None
    sources: list[str] = []
    generated_at: Optional[datetime] = Field(None, description="Excluded from payload_digest")


class ReportBundle(BaseModel):
    """Everything one run directory produced, in one document."""
    metadata: RunMetadata
    payload_digest: str = ""
    generation: Optional[GenerationCensus] = None
    detection: Optional[DetectionSummary] = None
    timeline: Optional[TimelineReport] = None
    average: Optional[AverageSummary] = None
    pca: Optional[PcaSummary] = None
    clusters: Optional[ClusterSummary] = None
    energy: Optional[EnergyStats] = None
    s6min: Optional[S6MinSummary] = None

    model_config = ConfigDict(ser_json_inf_nan="strings")
