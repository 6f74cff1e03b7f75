from .structs import *
from .errors import *
from .config import *
from .catalog import *
from .geo import *
from .purify import *
from .classifier import *
from .context import *
from .protocol import *
from .registry import *
from .interfaces import *
from .backend import *
from .server import *
from .synth import *
from .harness import *
from .reports import *
from . import utility
from . import backend
from . import harness

__version__ = '0.1.0'
