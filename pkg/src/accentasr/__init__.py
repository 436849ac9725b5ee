"""Adversarial disentanglement pre-training for accent-robust speech
recognition, with an attention-based recognizer, at desk scale.

The package is a plain numpy library: a synthetic accented corpus with known
ground truth, an adversarially trained pair of encoders that split speech
frames into accent-invariant and accent-specific embeddings, a seq2seq
recognizer fine-tuned on the invariant branch, reference baselines, and a
pseudo-labeling pipeline for unlabeled accents. See README.md for the tour.
"""

__version__ = "0.1.0"
