__version__ = "0.1a1"
__docformat__ = "reStructuredText"

from .exceptions import *
from .main.activation import *
from .main.model import *
from .main.data import *
from .main.optim import *
from .main.theory import *
from .main.stability import *
from .features.lemmas import *
