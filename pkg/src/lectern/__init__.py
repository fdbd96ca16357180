"""lectern: topic-to-educational-video pipeline built on generated scene code."""

__version__ = "0.1.0"
