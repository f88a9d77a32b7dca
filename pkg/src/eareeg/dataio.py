"""Recording container, file I/O and the synthetic ear-EEG cohort.

Binary ``.earg`` layout (all little-endian)::

    magic        4 bytes   b"EARG"
    version      u16       1
    subject_id   u16
    fs           f64       sampling rate in Hz
    n_channels   u16       C
    n_samples    u64       N_total
    labels       C x (u16 byte length + UTF-8 bytes)
    payload      C * N_total float32, channel-major

CSV recordings have one header row of channel labels and one row per time
sample. They carry no sampling rate, so ``fs`` must be supplied.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import DataError

IN_EAR_CHANNELS = ("LF", "LB", "LOU", "LOD", "RF", "RB", "ROU", "ROD")

MAGIC = b"EARG"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHdHQ")
_LABEL_LEN = struct.Struct("<H")


@dataclass
class EegRecording:
    """Multi-channel recording of one subject.

    ``samples`` has shape ``(n_channels, n_samples)``, in microvolts.
    """

    subject_id: int
    sampling_rate_hz: float
    channel_labels: list[str]
    samples: np.ndarray
    recording_id: int = 0

    def __post_init__(self):
        self.channel_labels = [str(label) for label in self.channel_labels]
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 2:
            raise DataError(f"samples must be 2-D (channels x time), got ndim={self.samples.ndim}")
        if self.samples.shape[0] != len(self.channel_labels):
            raise DataError(
                f"channel count mismatch: {self.samples.shape[0]} rows vs "
                f"{len(self.channel_labels)} labels"
            )
        if not self.sampling_rate_hz > 0:
            raise DataError(f"sampling rate must be positive, got {self.sampling_rate_hz}")
        if self.samples.shape[1] < 1:
            raise DataError("recording has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("non-finite sample in recording")
        if not 0 <= int(self.subject_id) < 2**16:
            raise DataError(f"subject_id out of range: {self.subject_id}")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sampling_rate_hz


def save_recording(rec: EegRecording, path) -> None:
    """Write ``rec`` to ``path`` in the ``.earg`` container format."""
    samples = np.asarray(rec.samples)
    if not np.all(np.isfinite(samples)):
        raise DataError("non-finite sample in recording")
    payload = samples.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise DataError("non-finite sample after float32 conversion")
    chunks = [
        _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            int(rec.subject_id),
            float(rec.sampling_rate_hz),
            rec.n_channels,
            rec.n_samples,
        )
    ]
    for label in rec.channel_labels:
        raw = label.encode("utf-8")
        chunks.append(_LABEL_LEN.pack(len(raw)))
        chunks.append(raw)
    chunks.append(np.ascontiguousarray(payload).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def _parse_container(buf: bytes, recording_id: int) -> EegRecording:
    if len(buf) < _HEADER.size:
        raise DataError("truncated header")
    magic, version, subject_id, fs, n_channels, n_samples = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DataError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported format version {version}")
    pos = _HEADER.size
    n_bytes = n_channels * n_samples * 4
    label_ends = [pos]
    labels = []
    try:
        for _ in range(n_channels):
            (n,) = _LABEL_LEN.unpack_from(buf, pos)
            pos += _LABEL_LEN.size
            if pos + n > len(buf):
                raise ValueError("label runs past end of file")
            labels.append(buf[pos : pos + n].decode("utf-8"))
            pos += n
            label_ends.append(pos)
    except (struct.error, ValueError):
        labels = None
    missing = [k for k, end in enumerate(label_ends[:-1]) if len(buf) - end == n_bytes]
    if labels is None or (len(buf) - pos != n_bytes and missing):
        found = missing[-1] if missing else len(label_ends) - 1
        raise DataError(
            f"channel count mismatch: header declares {n_channels} channels, "
            f"found {found} label strings"
        )
    remaining = len(buf) - pos
    if remaining < n_bytes:
        raise DataError(f"truncated payload: expected {n_bytes} bytes, found {remaining}")
    if remaining > n_bytes:
        raise DataError(f"{remaining - n_bytes} unexpected bytes after payload")
    samples = np.frombuffer(buf, dtype="<f4", count=n_channels * n_samples, offset=pos)
    samples = samples.reshape(n_channels, n_samples).astype(np.float32)
    return EegRecording(subject_id, fs, labels, samples, recording_id=recording_id)


def _read_csv(path: Path, fs: float, subject_id: int, recording_id: int) -> EegRecording:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise DataError(f"{path}: empty CSV")
    labels = [h.strip() for h in header]
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(labels):
        raise DataError(
            f"channel count mismatch: {len(labels)} labels vs {data.shape[1]} columns"
        )
    return EegRecording(subject_id, fs, labels, data.T.copy(), recording_id=recording_id)


def load_recording(path, fs: float | None = None, subject_id: int = 0,
                   recording_id: int = 0) -> EegRecording:
    """Load a recording from an ``.earg`` container or a CSV file.

    ``fs`` and ``subject_id`` are only used for CSV input, which carries
    neither. The container stores both.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        if fs is None:
            raise DataError("CSV recordings need an explicit sampling rate (fs)")
        return _read_csv(path, float(fs), subject_id, recording_id)
    return _parse_container(path.read_bytes(), recording_id)


# -- synthetic cohort ----------------------------------------------------------


def is_stable(ar_coeffs) -> bool:
    """True when all roots of ``z^p + a_1 z^(p-1) + ... + a_p`` lie inside the unit circle."""
    a = np.asarray(ar_coeffs, dtype=float)
    if a.size == 0:
        return True
    return bool(np.all(np.abs(np.roots(np.r_[1.0, a])) < 1.0))


def ar_coeffs_from_poles(poles) -> np.ndarray:
    """AR coefficients (``x(n) = -sum a_i x(n-i) + e(n)``) with the given poles.

    Complex poles are completed with their conjugates.
    """
    roots = []
    for p in poles:
        p = complex(p)
        roots.append(p)
        if abs(p.imag) > 0:
            roots.append(p.conjugate())
    return np.real(np.poly(roots))[1:]


@dataclass
class SyntheticSubjectSpec:
    """Generative model of one synthetic subject.

    Each channel is AR-filtered white noise plus a shared sinusoid.
    ``ar_coeffs[c]`` follows the ``x(n) = -sum a_i x(n-i) + e(n)`` sign
    convention; an empty or all-zero vector gives plain white noise.
    """

    subject_id: int
    ar_coeffs: list
    tone_freq_hz: float
    tone_amplitude: float = 0.0
    noise_std: float = 1.0
    rng_seed: int = 0
    channel_labels: list[str] = field(default_factory=lambda: list(IN_EAR_CHANNELS))

    def __post_init__(self):
        self.ar_coeffs = [np.asarray(a, dtype=float).ravel() for a in self.ar_coeffs]
        if len(self.ar_coeffs) != len(self.channel_labels):
            raise DataError(
                f"need one AR vector per channel: {len(self.ar_coeffs)} vs "
                f"{len(self.channel_labels)} channels"
            )
        for label, a in zip(self.channel_labels, self.ar_coeffs):
            if not is_stable(a):
                raise DataError(f"unstable AR coefficients for channel {label}: {a.tolist()}")
        if self.noise_std < 0:
            raise DataError("noise_std must be >= 0")
        if self.tone_amplitude < 0:
            raise DataError("tone_amplitude must be >= 0")


def generate_synthetic_subject(spec: SyntheticSubjectSpec, duration_s: float,
                               fs: float, recording_id: int | None = None) -> EegRecording:
    """Render ``floor(duration_s * fs)`` samples per channel from ``spec``."""
    if duration_s <= 0 or fs <= 0:
        raise DataError("duration_s and fs must be positive")
    n = int(np.floor(duration_s * fs))
    if n < 1:
        raise DataError("duration too short for a single sample")
    rng = np.random.default_rng(spec.rng_seed)
    # burn-in so the AR filter starts from its stationary regime
    burn = 1000
    t = np.arange(n) / fs
    tone = spec.tone_amplitude * np.sin(2 * np.pi * spec.tone_freq_hz * t)
    rows = []
    for a in spec.ar_coeffs:
        e = rng.standard_normal(n + burn) * spec.noise_std
        x = signal.lfilter([1.0], np.r_[1.0, a], e)[burn:]
        rows.append(x + tone)
    rid = spec.subject_id if recording_id is None else recording_id
    return EegRecording(spec.subject_id, fs, list(spec.channel_labels), np.vstack(rows),
                        recording_id=rid)


def default_cohort(n_subjects: int = 6, seed: int = 0) -> list[SyntheticSubjectSpec]:
    """Six-subject stand-in cohort with overlapping but distinct spectra.

    Subjects differ in AR order (2 to 4), resonance frequencies and tone
    frequency (8 to 14 Hz). Channels within a subject share the subject's
    resonances up to a small per-channel jitter.
    """
    if n_subjects < 1:
        raise DataError("n_subjects must be >= 1")
    fs = 1000.0
    master = np.random.default_rng(seed)
    specs = []
    for s in range(n_subjects):
        frac = s / max(n_subjects - 1, 1)
        order = 2 + s % 3
        alpha_hz = 9.0 + 3.0 * frac
        tone_hz = 8.0 + 6.0 * frac
        beta_hz = 18.0 + 5.0 * ((s * 3) % n_subjects) / max(n_subjects, 1)
        coeffs = []
        for _ in IN_EAR_CHANNELS:
            jitter_hz = master.uniform(-0.5, 0.5)
            r = 0.97 + master.uniform(-0.005, 0.005)
            poles = [r * np.exp(2j * np.pi * (alpha_hz + jitter_hz) / fs)]
            if order == 3:
                poles.append(0.6 + master.uniform(-0.05, 0.05))
            elif order == 4:
                poles.append(0.95 * np.exp(2j * np.pi * beta_hz / fs))
            coeffs.append(ar_coeffs_from_poles(poles))
        specs.append(
            SyntheticSubjectSpec(
                subject_id=s,
                ar_coeffs=coeffs,
                tone_freq_hz=tone_hz,
                tone_amplitude=2.0,
                noise_std=1.0,
                rng_seed=int(master.integers(0, 2**31 - 1)),
            )
        )
    return specs
