import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from seizure.dataio import SpectroDataset, load_manifest, read_recording
from seizure.exceptions import ConfigError
from seizure.preprocess import preprocess_corpus
from seizure.synthetic import MANIFEST_NAME, BandSignature, SynthSpec, generate_synthetic


class SynthSpecTest(SimpleTestCase):

    def test_default_bands(self):
        spec = SynthSpec(classes=3)
        self.assertEqual([band.center for band in spec.bands], [5.0, 17.0, 29.0])
        self.assertEqual(spec.schema_name, 'synth3')

    def test_bands_from_dicts(self):
        spec = SynthSpec(classes=2, bands=({'center': 8.0}, {'center': 20.0, 'bandwidth': 4.0}))
        self.assertEqual(spec.bands[1], BandSignature(20.0, 4.0, 1.0))

    def test_band_above_nyquist_names_class(self):
        with self.assertRaises(ConfigError) as ctx:
            SynthSpec(classes=2, bands=({'center': 10.0}, {'center': 130.0}))
        self.assertIn('class 1', str(ctx.exception))
        self.assertEqual(ctx.exception.key_paths, ['synth.bands[1]'])

    def test_band_count_must_match(self):
        with self.assertRaises(ConfigError):
            SynthSpec(classes=3, bands=({'center': 10.0},))

    def test_single_class_rejected(self):
        with self.assertRaises(ConfigError):
            SynthSpec(classes=1)


class GenerateSyntheticTest(SimpleTestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_same_seed_same_bytes(self):
        spec = SynthSpec(classes=2, events_per_class=2, seed=11)
        generate_synthetic(spec, self.tmp / 'a')
        generate_synthetic(spec, self.tmp / 'b')
        files = sorted(p.relative_to(self.tmp / 'a') for p in (self.tmp / 'a').rglob('*') if p.is_file())
        self.assertEqual(len(files), 5)
        for name in files:
            self.assertEqual((self.tmp / 'a' / name).read_bytes(), (self.tmp / 'b' / name).read_bytes())

    def test_manifest_layout(self):
        manifest = generate_synthetic(SynthSpec(classes=3, events_per_class=2), self.tmp)
        self.assertEqual(len(manifest), 6)
        self.assertEqual([e.annotations[0].label for e in manifest.entries], [0, 1, 2, 0, 1, 2])
        loaded = load_manifest(self.tmp / MANIFEST_NAME, manifest.schema)
        self.assertEqual(loaded.entries, manifest.entries)
        rec = read_recording(loaded.entries[0], loaded.root)
        self.assertEqual(rec.data.shape, (22, 6 * 256))
        self.assertIn('EEG EKG1-REF', rec.channels)

    def test_window_count_and_separability(self):
        manifest = generate_synthetic(SynthSpec(classes=2, events_per_class=5, seed=3), self.tmp)
        result = preprocess_corpus(manifest)
        self.assertEqual(result.errors, [])
        dataset = SpectroDataset.from_samples(result.samples, manifest.schema)
        self.assertEqual(dataset.class_counts().tolist(), [20, 20])
        self.assertEqual(len(set(dataset.event_ids)), 10)

        # leave-one-event-out nearest centroid on the mean spectrum per frequency bin
        profiles = dataset.features.mean(axis=(2, 3))
        events = np.array(dataset.event_ids)
        correct = 0
        for i in range(len(dataset)):
            keep = events != events[i]
            centroids = [profiles[keep & (dataset.labels == c)].mean(axis=0) for c in range(2)]
            guess = int(np.argmin([np.linalg.norm(profiles[i] - centroid) for centroid in centroids]))
            correct += guess == dataset.labels[i]
        self.assertGreaterEqual(correct / len(dataset), 0.95)
