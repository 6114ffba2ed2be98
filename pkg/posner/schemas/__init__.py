from .structure import Element, Structure, Trajectory, RigidTransform, InertiaResult
from .symmetry import SymmetryElement, PointGroup
from .stats import (
    TimelineSegment, PersistenceStats, HistogramBins, EnergyStats, FormationCheck,
    PcaResult, ModeDisplacement, ClusterResult, KSelection,
)
from .generation import (
    PhosphateTemplate, S6Params, GenerationScheme, GenerationCensus,
    PlantedPhase, SampleTrajectoryConfig, SampleTrajectory,
)
from .potential import BuckinghamPair, PairPotentialParams, OptimizerConfig, RelaxResult, S6MinimizationResult
from .report import ReportBundle, RunMetadata
