from .enums import ElementKind, TemplateGroup, GenerationMode, KSelectionMethod, PhaseKind
from .elements import ATOMIC_MASSES, atomic_mass, is_known_element
