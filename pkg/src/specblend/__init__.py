"""Spectral-spatial EEG features with a multi-task autoencoder.

The pipeline: a Butterworth filter bank splits each trial into sub-band
signals, per-band CSP projections reduce them to discriminative channels,
and a small autoencoder network is trained jointly on reconstruction,
triplet metric learning, and classification with adaptively blended loss
weights.
"""

__version__ = "0.1.0"
