"""HTTP service exposing the experiment engine."""

from .app import create_app

__all__ = ["create_app"]
