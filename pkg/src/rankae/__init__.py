"""Unsupervised chat summarization by topic-utterance ranking and denoising segment compression."""

__version__ = "0.1.0"
