"""Channel selection, band-pass and notch filtering, and windowing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .dataio import IN_EAR_CHANNELS, EegRecording
from .errors import DataError

DEFAULT_WINDOW_LEN = 2000
DEFAULT_HOP = 1000


@dataclass(frozen=True)
class FilterSpec:
    """Recursive filter description.

    For ``kind="bandpass"`` the pass band is ``[low_hz, high_hz]`` and
    ``order`` is the total (even) order of the Butterworth band-pass, i.e.
    twice the order of its low-pass prototype. For ``kind="notch"`` the
    filter is a second-order IIR notch at ``center_hz`` with quality
    ``q_factor``.
    """

    kind: str = "bandpass"
    low_hz: float = 0.5
    high_hz: float = 100.0
    center_hz: float = 50.0
    q_factor: float = 30.0
    order: int = 4
    zero_phase: bool = True

    @property
    def effective_order(self) -> int:
        return self.order if self.kind == "bandpass" else 2

    def validate(self, fs: float) -> None:
        nyq = fs / 2.0
        if self.kind == "bandpass":
            if not 0 < self.low_hz < self.high_hz < nyq:
                raise DataError(
                    f"band-pass edges must satisfy 0 < low < high < fs/2: "
                    f"{self.low_hz}, {self.high_hz}, fs={fs}"
                )
            if self.order < 2 or self.order % 2:
                raise DataError(f"band-pass order must be even and positive, got {self.order}")
        elif self.kind == "notch":
            if not 0 < self.center_hz < nyq:
                raise DataError(f"notch frequency must lie in (0, fs/2): {self.center_hz}")
            if self.q_factor <= 0:
                raise DataError("notch Q must be positive")
        else:
            raise DataError(f"unknown filter kind {self.kind!r}")


BANDPASS = FilterSpec(kind="bandpass", low_hz=0.5, high_hz=100.0, order=4)
NOTCH = FilterSpec(kind="notch", center_hz=50.0, q_factor=30.0)


def design_sos(spec: FilterSpec, fs: float) -> np.ndarray:
    """Second-order sections for ``spec``; raises if any pole is on or outside the unit circle."""
    spec.validate(fs)
    if spec.kind == "bandpass":
        sos = signal.butter(spec.order // 2, [spec.low_hz, spec.high_hz], btype="bandpass",
                            fs=fs, output="sos")
    else:
        b, a = signal.iirnotch(spec.center_hz, spec.q_factor, fs=fs)
        sos = signal.tf2sos(b, a)
    radius = max_pole_radius(sos)
    if not radius < 1.0:
        raise DataError(f"unstable {spec.kind} design: max pole radius {radius:.12f}")
    return sos


def max_pole_radius(sos: np.ndarray) -> float:
    radii = [np.abs(np.roots(section[3:])).max(initial=0.0) for section in sos]
    return float(max(radii))


def apply_filter(x, spec: FilterSpec, fs: float) -> np.ndarray:
    """Filter ``x`` along its last axis.

    Zero-phase filtering runs the sections forward and backward with
    odd-reflected padding of ``3 * order`` samples at each end, so the
    output has the input length and a squared magnitude response.
    """
    x = np.asarray(x, dtype=float)
    sos = design_sos(spec, fs)
    pad = 3 * spec.effective_order
    if x.shape[-1] <= pad:
        raise DataError(
            f"signal too short for filtering: {x.shape[-1]} samples, need > {pad}"
        )
    if spec.zero_phase:
        return signal.sosfiltfilt(sos, x, axis=-1, padtype="odd", padlen=pad)
    return signal.sosfilt(sos, x, axis=-1)


def select_channels(rec: EegRecording, wanted) -> EegRecording:
    """Return a copy of ``rec`` holding only ``wanted`` channels, in that order."""
    index = {label: i for i, label in enumerate(rec.channel_labels)}
    rows = []
    for label in wanted:
        if label not in index:
            raise DataError(f"unknown channel {label}")
        rows.append(index[label])
    return EegRecording(rec.subject_id, rec.sampling_rate_hz, list(wanted),
                        rec.samples[rows].copy(), recording_id=rec.recording_id)


@dataclass
class Segment:
    """One fixed-length window of a recording, all channels."""

    subject_id: int
    channels: np.ndarray
    source_offset: int = 0
    recording_id: int = 0

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=float)
        if self.channels.ndim != 2:
            raise DataError("segment channels must be 2-D (channels x time)")
        if not np.all(np.isfinite(self.channels)):
            raise DataError("non-finite value in segment")

    @property
    def window_len(self) -> int:
        return self.channels.shape[1]


def segment_recording(rec: EegRecording, window_len: int = DEFAULT_WINDOW_LEN,
                      hop: int = DEFAULT_HOP) -> list[Segment]:
    """Cut ``rec`` into windows starting at ``0, hop, 2*hop, ...``.

    Only complete windows are kept, giving
    ``(n_samples - window_len) // hop + 1`` segments.
    """
    if window_len < 1 or hop < 1:
        raise DataError("window_len and hop must be >= 1")
    n = rec.n_samples
    if window_len > n:
        raise DataError(
            f"no segments: window_len {window_len} exceeds recording length {n}"
        )
    samples = np.asarray(rec.samples, dtype=float)
    return [
        Segment(rec.subject_id, samples[:, off : off + window_len].copy(), off, rec.recording_id)
        for off in range(0, n - window_len + 1, hop)
    ]


def filter_recording(rec: EegRecording, bandpass: FilterSpec = BANDPASS,
                     notch: FilterSpec | None = NOTCH) -> EegRecording:
    """Band-pass then notch every channel of ``rec``."""
    fs = rec.sampling_rate_hz
    y = apply_filter(rec.samples, bandpass, fs)
    if notch is not None:
        y = apply_filter(y, notch, fs)
    return EegRecording(rec.subject_id, fs, list(rec.channel_labels), y,
                        recording_id=rec.recording_id)


def preprocess_recording(rec: EegRecording, channels=IN_EAR_CHANNELS,
                         bandpass: FilterSpec = BANDPASS,
                         notch: FilterSpec | None = NOTCH) -> EegRecording:
    """Channel selection followed by filtering; the cleaned continuous signal."""
    return filter_recording(select_channels(rec, channels), bandpass, notch)


def preprocess_pipeline(rec: EegRecording, channels=IN_EAR_CHANNELS,
                        bandpass: FilterSpec = BANDPASS, notch: FilterSpec | None = NOTCH,
                        window_len: int = DEFAULT_WINDOW_LEN,
                        hop: int = DEFAULT_HOP) -> list[Segment]:
    """select -> band-pass -> notch -> segment."""
    cleaned = preprocess_recording(rec, channels, bandpass, notch)
    return segment_recording(cleaned, window_len, hop)
