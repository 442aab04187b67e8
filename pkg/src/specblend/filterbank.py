"""Butterworth band-pass bank and zero-phase filtering.

Nine 4 Hz-wide bands covering 4-40 Hz by default.  Filters are designed
as second-order sections and applied forward-backward so the effective
magnitude response is squared and the phase response cancels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

# (4,8), (8,12), ..., (36,40)
DEFAULT_BANDS = tuple((float(lo), float(lo + 4)) for lo in range(4, 40, 4))
DEFAULT_ORDER = 5


@dataclass(frozen=True)
class BandpassDesign:
    """One designed band-pass filter.

    Attributes
    ----------
    low_hz, high_hz : float
        Passband edges; the single-pass magnitude there is 1/sqrt(2).
    order : int
        Butterworth prototype order; the band-pass realization has
        2*order poles.
    fs : float
    sos : ndarray, shape (order, 6)
        Second-order sections ``[b0 b1 b2 1 a1 a2]``.
    """

    low_hz: float
    high_hz: float
    order: int
    fs: float
    sos: np.ndarray

    def response(self, freq_hz):
        """Complex single-pass frequency response at ``freq_hz`` (scalar
        or array), evaluated directly from the sections."""
        w = 2.0 * np.pi * np.asarray(freq_hz, dtype=np.float64) / self.fs
        z1 = np.exp(-1j * w)
        z2 = z1 * z1
        h = np.ones_like(z1, dtype=np.complex128)
        for b0, b1, b2, _, a1, a2 in self.sos:
            h = h * (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2)
        return h

    def gain(self, freq_hz):
        """Zero-phase (two-pass) magnitude gain at ``freq_hz``."""
        return np.abs(self.response(freq_hz)) ** 2


@dataclass(frozen=True)
class FilterBank:
    """Ordered band designs sharing one sampling rate."""

    bands: tuple
    designs: tuple

    @property
    def fs(self):
        return self.designs[0].fs

    @property
    def n_bands(self):
        return len(self.bands)


def design_bandpass(low_hz, high_hz, order, fs):
    """Design one Butterworth band-pass filter.

    Parameters
    ----------
    low_hz, high_hz : float
        Passband edges, 0 < low < high < fs/2.
    order : int
        Prototype order; must be >= 1.
    fs : float

    Returns
    -------
    BandpassDesign

    Raises
    ------
    ValueError
        On invalid edges or a numerically unstable realization (any pole
        magnitude >= 1).
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if not (0.0 < low_hz < high_hz < fs / 2.0):
        raise ValueError(
            f"band edges ({low_hz}, {high_hz}) must satisfy 0 < low < high < fs/2"
        )
    sos = sps.butter(order, [low_hz, high_hz], btype="bandpass", fs=fs, output="sos")
    sos = np.asarray(sos, dtype=np.float64)
    for b0, b1, b2, _, a1, a2 in sos:
        poles = np.roots([1.0, a1, a2])
        if np.any(np.abs(poles) >= 1.0):
            raise ValueError(
                f"unstable section in band ({low_hz}, {high_hz}): "
                f"pole magnitude {np.abs(poles).max():.6f}"
            )
    return BandpassDesign(
        low_hz=float(low_hz),
        high_hz=float(high_hz),
        order=int(order),
        fs=float(fs),
        sos=sos,
    )


def make_filter_bank(fs, bands=DEFAULT_BANDS, order=DEFAULT_ORDER):
    """Design every band of the bank at sampling rate ``fs``."""
    designs = tuple(design_bandpass(lo, hi, order, fs) for lo, hi in bands)
    return FilterBank(bands=tuple((float(lo), float(hi)) for lo, hi in bands), designs=designs)


def _pad_len(design):
    # Three times the 2*order pole count; enough for edge transients to die.
    return 3 * (2 * design.order)


def _single_pass(x, sos, zi_unit):
    # Initial conditions scaled to the first sample kill the step transient.
    y, _ = sps.sosfilt(sos, x, zi=zi_unit * x[0])
    return y


def zero_phase_filter(x, design):
    """Filter forward and backward for zero net phase.

    The signal is extended at both ends by odd reflection (point-mirrored
    about the end samples) over ``3 * (2 * order)`` samples, filtered
    forward, reversed, filtered again, reversed, and trimmed.  The result
    has the squared magnitude response of the design and no phase shift.

    Parameters
    ----------
    x : ndarray, shape (t,)
        Input longer than the padding.
    design : BandpassDesign

    Returns
    -------
    ndarray, float64, shape (t,)
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-d signal, got shape {x.shape}")
    pad = _pad_len(design)
    if x.shape[0] <= pad:
        raise ValueError(
            f"signal of length {x.shape[0]} is too short for padding length {pad}"
        )
    left = 2.0 * x[0] - x[pad:0:-1]
    right = 2.0 * x[-1] - x[-2 : -pad - 2 : -1]
    ext = np.concatenate([left, x, right])
    zi = sps.sosfilt_zi(design.sos)
    y = _single_pass(ext, design.sos, zi)
    y = _single_pass(y[::-1], design.sos, zi)
    return np.ascontiguousarray(y[::-1][pad : pad + x.shape[0]])


def apply_bank(trial, bank, fs=None):
    """Zero-phase filter a multichannel trial through every band.

    Parameters
    ----------
    trial : ndarray, shape (n_channels, t)
    bank : FilterBank
    fs : float, optional
        Sampling rate of ``trial``; when given it must match the bank.

    Returns
    -------
    ndarray, float64, shape (n_bands, n_channels, t)
    """
    trial = np.asarray(trial, dtype=np.float64)
    if trial.ndim != 2:
        raise ValueError(f"expected (channels, samples), got shape {trial.shape}")
    if fs is not None and abs(float(fs) - bank.fs) > 1e-9:
        raise ValueError(f"trial fs {fs} does not match bank fs {bank.fs}")
    out = np.empty((bank.n_bands, trial.shape[0], trial.shape[1]))
    for b, design in enumerate(bank.designs):
        for c in range(trial.shape[0]):
            out[b, c] = zero_phase_filter(trial[c], design)
    return out
