"""
Seeded synthetic EEG corpus for desk-scale runs.

Every recording holds one seizure event between a second of background noise
on either side. During the event each of the 19 montage channels carries a
mixture of sinusoids drawn from its class band with random phases.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import CorpusManifest, ManifestEntry, get_schema, write_manifest, write_tensor
from .exceptions import ConfigError
from .preprocess import CANONICAL_MONTAGE, Annotation

logger = logging.getLogger(__name__)

EXTRA_CHANNELS = ('EEG A1-REF', 'EEG A2-REF', 'EEG EKG1-REF')
MANIFEST_NAME = 'manifest.csv'


@dataclass(frozen=True)
class BandSignature:
    center: float
    bandwidth: float = 2.0
    amplitude: float = 1.0

    @classmethod
    def default_for(cls, class_index: int) -> 'BandSignature':
        return cls(center=5.0 + 12.0 * class_index)

    def as_dict(self) -> dict:
        return {'center': self.center, 'bandwidth': self.bandwidth, 'amplitude': self.amplitude}


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 8
    bands: tuple = ()
    noise: float = 0.5
    events_per_class: int = 20
    event_duration: float = 4.0
    seed: int = 0
    sample_rate: float = 256.0
    target_rate: float = 250.0
    patients: int = 10
    padding: float = 1.0
    sinusoids: int = 3

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f'synthetic corpus needs at least 2 classes, got {self.classes}', ['synth.classes'])
        if not self.bands:
            object.__setattr__(self, 'bands', tuple(BandSignature.default_for(c) for c in range(self.classes)))
        object.__setattr__(self, 'bands', tuple(
            band if isinstance(band, BandSignature) else BandSignature(**band) for band in self.bands
        ))
        if len(self.bands) != self.classes:
            raise ConfigError(f'{len(self.bands)} bands for {self.classes} classes', ['synth.bands'])
        nyquist = min(self.sample_rate, self.target_rate) / 2
        for c, band in enumerate(self.bands):
            top = band.center + band.bandwidth / 2
            if band.center <= 0 or band.bandwidth < 0 or band.center - band.bandwidth / 2 <= 0:
                raise ConfigError(f'class {c}: band {band.center} Hz must lie above 0 Hz', [f'synth.bands[{c}]'])
            if top >= nyquist:
                raise ConfigError(
                    f'class {c}: band {band.center} +/- {band.bandwidth / 2} Hz reaches the {nyquist} Hz Nyquist limit',
                    [f'synth.bands[{c}]'],
                )
        if self.noise < 0:
            raise ConfigError('noise must be non-negative', ['synth.noise'])
        if self.events_per_class < 1:
            raise ConfigError('events_per_class must be positive', ['synth.events_per_class'])
        if self.event_duration < 1:
            raise ConfigError('event_duration must cover at least one 1 s window', ['synth.event_duration'])
        if self.patients < 1 or self.sinusoids < 1:
            raise ConfigError('patients and sinusoids must be positive', ['synth.patients', 'synth.sinusoids'])

    @property
    def schema_name(self) -> str:
        return f'synth{self.classes}'

    def as_dict(self) -> dict:
        return {
            'classes': self.classes,
            'bands': [band.as_dict() for band in self.bands],
            'noise': self.noise,
            'events_per_class': self.events_per_class,
            'event_duration': self.event_duration,
            'seed': self.seed,
            'sample_rate': self.sample_rate,
            'target_rate': self.target_rate,
            'patients': self.patients,
            'padding': self.padding,
            'sinusoids': self.sinusoids,
        }


@dataclass
class SynthRecording:
    file: str
    channels: list
    data: np.ndarray
    annotation: Annotation
    patient_id: str


def _event_signal(spec: SynthSpec, band: BandSignature, rng: np.random.Generator, n: int) -> np.ndarray:
    t = np.arange(n) / spec.sample_rate
    channels = len(CANONICAL_MONTAGE)
    low, high = band.center - band.bandwidth / 2, band.center + band.bandwidth / 2
    freqs = rng.uniform(low, high, size=spec.sinusoids)
    phases = rng.uniform(0, 2 * np.pi, size=(channels, spec.sinusoids))
    gains = rng.uniform(0.5, 1.5, size=(channels, 1))
    waves = np.sin(2 * np.pi * freqs[None, :, None] * t[None, None, :] + phases[..., None]).sum(axis=1)
    return band.amplitude * gains * waves / spec.sinusoids


def synth_recording(spec: SynthSpec, index: int, label: int, rng: np.random.Generator) -> SynthRecording:
    rate = spec.sample_rate
    pad = int(round(spec.padding * rate))
    event = int(round(spec.event_duration * rate))
    total = 2 * pad + event
    canonical = rng.normal(0.0, spec.noise, size=(len(CANONICAL_MONTAGE), total)) if spec.noise else \
        np.zeros((len(CANONICAL_MONTAGE), total))
    canonical[:, pad:pad + event] += _event_signal(spec, spec.bands[label], rng, event)
    extra = rng.normal(0.0, max(spec.noise, 1.0), size=(len(EXTRA_CHANNELS), total))

    names = [f'EEG {name.upper()}-REF' for name in CANONICAL_MONTAGE] + list(EXTRA_CHANNELS)
    data = np.concatenate([canonical, extra])
    order = rng.permutation(len(names))
    annotation = Annotation(
        start=spec.padding,
        end=spec.padding + spec.event_duration,
        label=label,
        event_id=f'ev{index:04d}',
    )
    return SynthRecording(
        file=f'recordings/rec{index:04d}.eegt',
        channels=[names[i] for i in order],
        data=data[order].astype(np.float32),
        annotation=annotation,
        patient_id=f'P{index % spec.patients:03d}',
    )


def generate_synthetic(spec: SynthSpec, out_dir) -> CorpusManifest:
    """
    Write the corpus under ``out_dir`` (recordings/*.eegt plus manifest.csv)
    and return its manifest. Events are interleaved by class.
    """
    out_dir = Path(out_dir)
    (out_dir / 'recordings').mkdir(parents=True, exist_ok=True)
    schema = get_schema(spec.schema_name)
    rng = np.random.default_rng(spec.seed)

    entries = []
    index = 0
    for _ in range(spec.events_per_class):
        for label in range(spec.classes):
            rec = synth_recording(spec, index, label, rng)
            write_tensor(out_dir / rec.file, rec.data)
            entries.append(ManifestEntry(
                file=rec.file,
                sample_rate=spec.sample_rate,
                channels=rec.channels,
                annotations=[rec.annotation],
                patient_id=rec.patient_id,
            ))
            index += 1

    manifest = CorpusManifest(entries=entries, schema=schema, root=out_dir)
    write_manifest(manifest, out_dir / MANIFEST_NAME)
    logger.info(
        f'Generated {len(entries)} synthetic recordings ({spec.classes} classes, seed {spec.seed}) in {out_dir}'
    )
    return manifest
