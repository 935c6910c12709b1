"""API module for serving run-matrix results."""

from .app import app

__all__ = ["app"]
