import enum

class ElementKind(str, enum.Enum):
    IDENTITY = "identity"
    INVERSION = "inversion"
    PROPER_ROTATION = "proper_rotation"
    IMPROPER_ROTATION = "improper_rotation"
    MIRROR = "mirror"

class TemplateGroup(str, enum.Enum):
    S6 = "S6"
    TH = "Th"
    C3V = "C3v"
    D3D = "D3d"

class GenerationMode(str, enum.Enum):
    UNIFORM = "uniform-all-groups"
    PER_GROUP = "per-group-sweep"
    FULL_PRODUCT = "full-product-capped"

class KSelectionMethod(str, enum.Enum):
    SILHOUETTE = "silhouette"
    ELBOW = "elbow"

class PhaseKind(str, enum.Enum):
    CI_BASIN = "ci-basin"
    C1_BASIN = "c1-basin"
    S6_INTERLUDE = "s6-interlude"
