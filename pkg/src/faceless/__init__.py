"""Person recognition under head obfuscation on synthetic social-photo corpora."""

from .errors import ConfigError, DataError, FacelessError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "FacelessError", "__version__"]
