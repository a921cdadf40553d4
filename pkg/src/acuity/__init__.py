"""ICU acuity assessment from wrist accelerometry and EHR features."""

__version__ = "0.1.0"
