from ._gwf import *  # noqa: F401,F403
from ._gwf import __version__  # noqa: F401
