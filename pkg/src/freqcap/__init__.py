"""Frequency-aware video captioning: diffusion of rare-token embeddings and
divergent neighbour supervision on a small transformer captioner."""

__version__ = "0.1.0"
