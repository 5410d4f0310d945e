"""HTTP service layer: the main app and the mock model endpoints."""

from .app import create_app
from .mock_models import create_mock_app

__all__ = ["create_app", "create_mock_app"]
