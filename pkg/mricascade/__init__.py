"""Two-stage MRI pipelines: segment, crop candidate regions, classify."""
from .config import settings

__version__ = settings.version
