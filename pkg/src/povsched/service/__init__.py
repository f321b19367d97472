"""HTTP service wrapping the scheduling core."""

from .app import app, create_app

__all__ = ["app", "create_app"]
