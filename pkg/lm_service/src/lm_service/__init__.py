"""HTTP microservice serving constrained next-word log-probabilities and
masked-fill probabilities from pretrained transformers."""

from .app import create_app
from .config import ServiceConfig, load_restricted_vocab

__version__ = "0.1.0"
