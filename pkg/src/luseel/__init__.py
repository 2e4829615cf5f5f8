"""Language-queried binaural target sound extraction and localization."""

__version__ = "0.1.0"
