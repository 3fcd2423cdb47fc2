"""Shared/private encoder-decoder translation with adversarial domain adaptation."""

__version__ = "0.1.0"
