"""HTTP service wrapping the surfel view memory."""

from .app import app

__all__ = ["app"]
