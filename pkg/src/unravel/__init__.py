"""Active-learning local explanations for black-box prediction models."""

__version__ = "0.1.0"
