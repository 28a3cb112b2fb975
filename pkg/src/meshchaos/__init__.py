"""Coverage-guided chaos testing of API compositions on a simulated service mesh."""

from meshchaos.errors import DivergenceError, InputError, ReplayError

__version__ = "0.1.0"

__all__ = ["DivergenceError", "InputError", "ReplayError", "__version__"]
