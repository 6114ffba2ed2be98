from decimal import Decimal
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, model_validator

from posner.models.enums import KSelectionMethod
from posner.schemas.structure import Structure


class TimelineSegment(BaseModel):
    start_frame: NonNegativeInt
    end_frame: NonNegativeInt = Field(..., description="Inclusive")
    group_label: str
    duration_fs: float = Field(..., ge=0)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_span(self):
        if self.end_frame < self.start_frame:
            raise ValueError("end_frame precedes start_frame")
        return self

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame + 1


class PersistenceStats(BaseModel):
    group_label: str
    max_duration_fs: float
    mean_duration_fs: float
    segment_count: int
    total_duration_fs: float


class HistogramBins(BaseModel):
    edges: list[float]
    counts: list[int]


class EnergyStats(BaseModel):
    mean: float
    std: float
    min: float
    max: float
    spread: float
    n_frames: int
    histogram: HistogramBins


class FormationCheck(BaseModel):
    """Exact decimal arithmetic; floats are the decimals rounded once."""
    e_cluster: Decimal
    e_unit: Decimal
    n: int = Field(..., ge=1)
    delta: Decimal
    more_stable: bool

    @property
    def delta_ev(self) -> float:
        return float(self.delta)


class PcaResult(BaseModel):
    mean: Structure
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = Field(..., description="Rows are unit 3N-vectors, one per mode")
    explained_fraction: np.ndarray
    mass_weighted: bool = False
    n_frames: int

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @property
    def n_modes(self) -> int:
        return int(self.eigenvalues.shape[0])


class ModeDisplacement(BaseModel):
    mode: int
    amplitude: float
    vectors: np.ndarray = Field(..., description="(N, 3) per-atom displacement in Å")
    magnitudes: np.ndarray
    max_magnitude: float
    max_atom: int

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


class ClusterResult(BaseModel):
    k: int = Field(..., ge=1)
    assignments: np.ndarray
    centroids: tuple[Structure, ...]
    inertia: float
    silhouette: Optional[float] = None
    iterations: int

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    def cluster_sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()


class KSelection(BaseModel):
    k: int
    method: KSelectionMethod
    scores: dict[int, float]
    inertias: dict[int, float] = {}
