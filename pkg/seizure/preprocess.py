"""
From raw multi-channel EEG to labeled (32, 9, 19) STFT samples.

Pipeline per recording: resample to 250 Hz, pick the 19 common 10-20 channels
in proximity order, cut 1 s windows inside each annotated seizure and turn every
window into log10 STFT magnitudes.

A 1 s window at 250 Hz only fits 6 full 64-point frames with hop 32, so each
window is zero-padded symmetrically to 320 samples (35 per side), which gives
exactly 9 frames. Bins 0..31 are kept and the Nyquist bin is dropped.
"""
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .exceptions import ConfigError, IngestionError, SeizureNetError, StructuralError

logger = logging.getLogger(__name__)

CANONICAL_MONTAGE = (
    'Fp1', 'Fp2', 'F7', 'F3', 'Fz', 'F4', 'F8',
    'T3', 'C3', 'Cz', 'C4', 'T4',
    'T5', 'P3', 'Pz', 'P4', 'T6',
    'O1', 'O2',
)

RESAMPLE_ZERO_CROSSINGS = 16
RESAMPLE_KAISER_BETA = 5.0


@dataclass(frozen=True)
class Annotation:
    start: float
    end: float
    label: int
    event_id: str


@dataclass
class Recording:
    recording_id: str
    channels: list
    sample_rate: float
    data: np.ndarray
    annotations: list = field(default_factory=list)
    patient_id: str = ''

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise IngestionError(f'{self.recording_id}: sample rate must be positive, got {self.sample_rate}')
        if len(set(self.channels)) != len(self.channels):
            raise IngestionError(f'{self.recording_id}: duplicate channel labels')
        if self.data.ndim != 2 or self.data.shape[0] != len(self.channels):
            raise IngestionError(
                f'{self.recording_id}: data shape {self.data.shape} does not match '
                f'{len(self.channels)} channels'
            )
        duration = self.duration
        for ann in self.annotations:
            if not (0 <= ann.start < ann.end <= duration + 1e-6):
                raise IngestionError(
                    f'{self.recording_id}: annotation [{ann.start}, {ann.end}] outside 0..{duration:.3f} s'
                )

    @property
    def duration(self) -> float:
        return self.data.shape[1] / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 64
    overlap: float = 0.5
    window: str = 'hann'
    log_floor: float = 1e-8
    target_rate: int = 250
    frames: int = 9
    freq_bins_kept: int = 32

    def __post_init__(self):
        hop = self.fft_size * (1 - self.overlap)
        if not 0 <= self.overlap < 1 or hop != int(hop):
            raise ConfigError(f'overlap {self.overlap} does not give an integer hop', ['stft.overlap'])
        if self.freq_bins_kept > self.fft_size // 2 + 1:
            raise ConfigError(
                f'freq_bins_kept {self.freq_bins_kept} exceeds {self.fft_size // 2 + 1} one-sided bins',
                ['stft.freq_bins_kept'],
            )
        if self.padded_length < self.target_rate:
            raise ConfigError('frames * hop too short to cover a 1 s window', ['stft.frames'])

    @property
    def hop(self) -> int:
        return int(self.fft_size * (1 - self.overlap))

    @property
    def padded_length(self) -> int:
        return self.hop * (self.frames - 1) + self.fft_size

    @property
    def sample_shape(self) -> tuple:
        return (self.freq_bins_kept, self.frames, len(CANONICAL_MONTAGE))


class Provenance(NamedTuple):
    recording_id: str
    event_id: str
    window_start: float


class Segment(NamedTuple):
    window: np.ndarray
    label: int
    provenance: Provenance


@dataclass
class SpectroSample:
    features: np.ndarray
    label: int
    provenance: Provenance
    patient_id: str = ''


@dataclass
class CorpusResult:
    samples: list
    errors: list


def resample(rec: Recording, target: float = 250) -> Recording:
    """
    Band-limited polyphase resampling with a Kaiser-windowed sinc of 16 zero
    crossings per side.
    """
    if target <= 0:
        raise ConfigError(f'target rate must be positive, got {target}', ['stft.target_rate'])
    if rec.sample_rate == target:
        return rec
    ratio = Fraction(target).limit_denominator(10000) / Fraction(rec.sample_rate).limit_denominator(10000)
    up, down = ratio.numerator, ratio.denominator
    max_rate = max(up, down)
    taps = signal.firwin(
        2 * RESAMPLE_ZERO_CROSSINGS * max_rate + 1, 1.0 / max_rate,
        window=('kaiser', RESAMPLE_KAISER_BETA),
    )
    data = signal.resample_poly(rec.data.astype(np.float64), up, down, axis=1, window=taps, padtype='line')
    logger.debug(f'{rec.recording_id}: resampled {rec.sample_rate} Hz -> {target} Hz ({up}/{down})')
    return Recording(
        recording_id=rec.recording_id,
        channels=list(rec.channels),
        sample_rate=target,
        data=data.astype(np.float32),
        annotations=list(rec.annotations),
        patient_id=rec.patient_id,
    )


def normalize_channel(label: str) -> str:
    """'EEG FP1-REF' and 'Fp1' both normalize to 'FP1'."""
    name = label.strip().upper()
    if name.startswith('EEG '):
        name = name[4:].strip()
    return name.split('-')[0].strip()


def select_channels(rec: Recording, montage=CANONICAL_MONTAGE) -> Recording:
    if len(montage) != 19:
        raise ConfigError(f'montage must list 19 channels, got {len(montage)}', ['montage'])
    index = {}
    for position, label in enumerate(rec.channels):
        index.setdefault(normalize_channel(label), position)
    missing = [label for label in montage if normalize_channel(label) not in index]
    if missing:
        raise IngestionError(f'{rec.recording_id}: missing channels {", ".join(missing)}', missing=missing)
    rows = [index[normalize_channel(label)] for label in montage]
    return Recording(
        recording_id=rec.recording_id,
        channels=list(montage),
        sample_rate=rec.sample_rate,
        data=rec.data[rows],
        annotations=list(rec.annotations),
        patient_id=rec.patient_id,
    )


def segment(rec: Recording) -> list:
    """Non-overlapping 1 s windows fully inside each seizure interval."""
    rate = int(round(rec.sample_rate))
    if rate != rec.sample_rate:
        raise StructuralError(f'{rec.recording_id}: segmenting needs an integer rate, got {rec.sample_rate}')
    segments = []
    for ann in sorted(rec.annotations, key=lambda a: (a.start, a.end)):
        count = int(np.floor(ann.end - ann.start + 1e-9))
        for k in range(count):
            start_s = ann.start + k
            first = int(round(start_s * rate))
            last = first + rate
            if last > rec.data.shape[1]:
                break
            segments.append(Segment(
                window=rec.data[:, first:last],
                label=ann.label,
                provenance=Provenance(rec.recording_id, ann.event_id, round(start_s, 6)),
            ))
    return segments


def stft_magnitudes(window, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Linear STFT magnitudes shaped [channels, frames, freq_bins_kept]."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[1] != cfg.target_rate:
        raise StructuralError(
            f'STFT window must be [channels, {cfg.target_rate}], got {window.shape}'
        )
    total = cfg.padded_length - window.shape[1]
    padded = np.pad(window, ((0, 0), (total // 2, total - total // 2)))
    frames = sliding_window_view(padded, cfg.fft_size, axis=1)[:, ::cfg.hop]
    taper = signal.get_window(cfg.window, cfg.fft_size)
    spectrum = np.fft.rfft(frames * taper, n=cfg.fft_size, axis=-1)
    return np.abs(spectrum[..., :cfg.freq_bins_kept])


def stft_features(window, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """log10 STFT intensity of one window, shaped (32, 9, 19)."""
    magnitudes = stft_magnitudes(window, cfg)
    return np.log10(magnitudes + cfg.log_floor).transpose(2, 1, 0).astype(np.float32)


def preprocess_recording(rec: Recording, montage=CANONICAL_MONTAGE, cfg: StftConfig = StftConfig()) -> list:
    rec = select_channels(resample(rec, cfg.target_rate), montage)
    return [
        SpectroSample(stft_features(seg.window, cfg), seg.label, seg.provenance, rec.patient_id)
        for seg in segment(rec)
    ]


def preprocess_corpus(manifest, montage=CANONICAL_MONTAGE, cfg: StftConfig = StftConfig(),
                      load_recording=None) -> CorpusResult:
    """
    Run the pipeline over every manifest entry. Per-file failures are collected
    and processing goes on; output order is (recording id, window start).
    """
    if load_recording is None:
        from .dataio import read_recording
        load_recording = read_recording

    samples, errors = [], []
    for entry in sorted(manifest.entries, key=lambda e: e.recording_id):
        try:
            rec = load_recording(entry, manifest.root)
            produced = preprocess_recording(rec, montage, cfg)
        except (SeizureNetError, OSError) as e:
            logger.warning(f'Skipping {entry.file}: {e}')
            errors.append({'file': entry.file, 'error': str(e)})
            continue
        logger.info(f'{entry.recording_id}: {len(produced)} windows')
        samples.extend(produced)
    samples.sort(key=lambda s: (s.provenance.recording_id, s.provenance.window_start))
    return CorpusResult(samples=samples, errors=errors)
