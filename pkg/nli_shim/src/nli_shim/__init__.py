"""Local entailment server for the /entail wire protocol."""

from .model import EntailmentModel, Verdict
from .server import create_app

__all__ = ["EntailmentModel", "Verdict", "create_app"]
