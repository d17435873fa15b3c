"""Model-hosting sidecar: bundle export plus /score and /detect endpoints."""

from .app import create_app
from .export import ExportJob, export_bundles
from .models import REGISTRY, load_model

__version__ = "0.1.0"

__all__ = ["REGISTRY", "ExportJob", "create_app", "export_bundles", "load_model"]
