"""Link-signature key extraction, inference attacks on it, and the FBCH countermeasure."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
