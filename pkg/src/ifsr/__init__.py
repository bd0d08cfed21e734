"""Two-stage 3D shape retrieval: irrelevance filtering, then similarity ranking."""

__version__ = "0.1.0"
