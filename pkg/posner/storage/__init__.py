from . import files
from . import xyz
from . import potential_file
