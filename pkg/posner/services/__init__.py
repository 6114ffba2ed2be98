from . import geometry_service
from . import symmetry_service
from . import alignment_service
from . import trajectory_stats_service
from . import generation_service
from . import sample_service
from . import forcefield_service
from . import report_service
