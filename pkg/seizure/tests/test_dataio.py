import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from seizure.dataio import (
    EPILEPSIAE_SCHEMA, TUH_SCHEMA, CorpusManifest, ManifestEntry, SpectroDataset, checkpoint_load, checkpoint_save,
    decode_tensor, encode_tensor, get_schema, load_dataset, load_extractor_checkpoint, load_manifest, read_recording,
    read_tensor, save_dataset, write_manifest, write_tensor,
)
from seizure.exceptions import (
    CheckpointError, DatasetError, FormatError, SchemaError, StructuralError, TruncationError,
)
from seizure.networks import ModelKind, SeizureNet
from seizure.preprocess import CANONICAL_MONTAGE, Annotation

from .helpers import DEBUG_MODEL, banded_dataset

HEADER_ROW = 'file,sample_rate,channels,annotations,patient_id,event_id\n'


class TempDirMixin:

    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()
        super().tearDown()


class TensorContainerTest(TempDirMixin, SimpleTestCase):

    def test_file_round_trip(self):
        t = np.random.default_rng(0).normal(size=(3, 4, 5)).astype(np.float32)
        write_tensor(self.tmp / 't.eegt', t)
        out = read_tensor(self.tmp / 't.eegt')
        self.assertEqual(out.dtype, np.float32)
        np.testing.assert_array_equal(out, t)

    def test_layout(self):
        raw = encode_tensor(np.ones((2, 3), dtype=np.float32))
        self.assertEqual(raw[:4], b'EEGT')
        self.assertEqual(len(raw), 8 + 2 * 4 + 6 * 4)

    def test_bad_magic(self):
        raw = b'XXXX' + encode_tensor(np.ones(2, dtype=np.float32))[4:]
        with self.assertRaises(FormatError):
            decode_tensor(raw)

    def test_short_payload(self):
        raw = encode_tensor(np.ones((2, 3), dtype=np.float32))[:-4]
        with self.assertRaises(TruncationError) as ctx:
            decode_tensor(raw)
        self.assertEqual((ctx.exception.expected, ctx.exception.actual), (24, 20))

    def test_truncated_header(self):
        with self.assertRaises(TruncationError):
            decode_tensor(b'EEG')

    def test_rejects_integer_tensors(self):
        with self.assertRaises(StructuralError):
            encode_tensor(np.arange(4))


class SchemaTest(SimpleTestCase):

    def test_resolve_codes_and_names(self):
        self.assertEqual(TUH_SCHEMA.resolve('ABSZ'), 4)
        self.assertEqual(TUH_SCHEMA.resolve('tonic clonic'), 6)
        self.assertEqual(EPILEPSIAE_SCHEMA.resolve('sg'), 3)

    def test_unknown_label(self):
        with self.assertRaises(SchemaError):
            TUH_SCHEMA.resolve('XYZ')

    def test_synthetic_schema(self):
        schema = get_schema('synth3')
        self.assertEqual(schema.classes, ('class0', 'class1', 'class2'))
        with self.assertRaises(SchemaError):
            get_schema('synth1')


class ManifestTest(TempDirMixin, SimpleTestCase):

    def write(self, body):
        path = self.tmp / 'manifest.csv'
        path.write_text(HEADER_ROW + body)
        return path

    def test_header_only(self):
        manifest = load_manifest(self.write(''), TUH_SCHEMA)
        self.assertEqual(len(manifest), 0)

    def test_parses_rows(self):
        path = self.write('rec1.eegt,256,Fp1;Fp2,0:5:ABSZ;10:14.5:FNSZ,P1,e1;e2\n'
                          'rec2.eegt,250,Fp1,2:4:tonic,P2,e3\n')
        manifest = load_manifest(path, TUH_SCHEMA)
        first = manifest.entries[0]
        self.assertEqual(first.sample_rate, 256.0)
        self.assertEqual(first.channels, ['Fp1', 'Fp2'])
        self.assertEqual(first.annotations, [Annotation(0.0, 5.0, 4, 'e1'), Annotation(10.0, 14.5, 0, 'e2')])
        self.assertEqual(manifest.entries[1].annotations[0].label, 5)
        self.assertEqual(first.recording_id, 'rec1')
        self.assertEqual(manifest.root, self.tmp)

    def test_event_prefix_expands(self):
        path = self.write('rec1.eegt,250,Fp1,0:2:ABSZ;3:5:ABSZ,P1,ev\n')
        manifest = load_manifest(path, TUH_SCHEMA)
        self.assertEqual([a.event_id for a in manifest.entries[0].annotations], ['ev#1', 'ev#2'])

    def test_unknown_label_names_row(self):
        path = self.write('rec1.eegt,250,Fp1,0:2:ABSZ,P1,e1\nrec2.eegt,250,Fp1,0:2:XYZ,P1,e2\n')
        with self.assertRaises(SchemaError) as ctx:
            load_manifest(path, TUH_SCHEMA)
        self.assertEqual(ctx.exception.row, 3)
        self.assertIn('row 3', str(ctx.exception))

    def test_duplicate_event(self):
        path = self.write('rec1.eegt,250,Fp1,0:2:ABSZ,P1,e1\nrec2.eegt,250,Fp1,0:2:ABSZ,P1,e1\n')
        with self.assertRaises(SchemaError):
            load_manifest(path, TUH_SCHEMA)

    def test_missing_columns(self):
        path = self.tmp / 'bad.csv'
        path.write_text('file,sample_rate\nrec.eegt,250\n')
        with self.assertRaisesMessage(SchemaError, 'channels'):
            load_manifest(path, TUH_SCHEMA)

    def test_write_then_load(self):
        entry = ManifestEntry('recordings/r.eegt', 250.0, ['Fp1', 'Fp2'],
                              [Annotation(1.0, 3.0, 2, 'e1')], 'P7')
        write_manifest(CorpusManifest([entry], EPILEPSIAE_SCHEMA, self.tmp), self.tmp / 'm.csv')
        self.assertIn('1:3:SP', (self.tmp / 'm.csv').read_text())
        loaded = load_manifest(self.tmp / 'm.csv', EPILEPSIAE_SCHEMA)
        self.assertEqual(loaded.entries, [entry])

    def test_read_recording(self):
        data = np.zeros((19, 500), dtype=np.float32)
        write_tensor(self.tmp / 'r.eegt', data)
        entry = ManifestEntry('r.eegt', 250.0, list(CANONICAL_MONTAGE), [Annotation(0.0, 2.0, 0, 'e')], 'P1')
        rec = read_recording(entry, self.tmp)
        self.assertEqual(rec.duration, 2.0)
        self.assertEqual(rec.recording_id, 'r')


class DatasetTest(TempDirMixin, SimpleTestCase):

    def test_save_and_load(self):
        dataset = banded_dataset(per_class=3)
        save_dataset(dataset, self.tmp / 'ds')
        loaded = load_dataset(self.tmp / 'ds')
        np.testing.assert_array_equal(loaded.features, dataset.features)
        np.testing.assert_array_equal(loaded.labels, dataset.labels)
        self.assertEqual(loaded.event_ids, dataset.event_ids)
        self.assertEqual(loaded.window_starts, dataset.window_starts)
        header = json.loads((self.tmp / 'ds' / 'dataset.json').read_text())
        self.assertEqual(header['shape'], [32, 9, 19])
        self.assertEqual(header['count'], 6)

    def test_subset_and_counts(self):
        dataset = banded_dataset(per_class=4)
        part = dataset.subset([0, 5, 6])
        self.assertEqual(len(part), 3)
        self.assertEqual(part.class_counts().tolist(), [1, 2])
        self.assertEqual(part.event_ids, ['c0e0', 'c1e1', 'c1e2'])

    def test_from_samples_needs_samples(self):
        with self.assertRaisesMessage(StructuralError, 'no samples'):
            SpectroDataset.from_samples([], get_schema('synth2'))

    def test_samples_round_trip(self):
        dataset = banded_dataset(per_class=2)
        rebuilt = SpectroDataset.from_samples(dataset.samples(), dataset.schema)
        np.testing.assert_array_equal(rebuilt.features, dataset.features)
        self.assertEqual(rebuilt.recording_ids, dataset.recording_ids)

    def test_missing_directory(self):
        with self.assertRaisesMessage(DatasetError, 'unreadable dataset header'):
            load_dataset(self.tmp / 'nowhere')

    def test_missing_features_file(self):
        save_dataset(banded_dataset(per_class=2), self.tmp / 'ds')
        (self.tmp / 'ds' / 'features.eegt').unlink()
        with self.assertRaisesMessage(DatasetError, 'unreadable dataset files'):
            load_dataset(self.tmp / 'ds')

    def test_samples_table_without_labels(self):
        save_dataset(banded_dataset(per_class=2), self.tmp / 'ds')
        (self.tmp / 'ds' / 'samples.csv').write_text('index,recording_id\n0,rec000\n')
        with self.assertRaises(DatasetError):
            load_dataset(self.tmp / 'ds')


class CheckpointTest(TempDirMixin, SimpleTestCase):

    def test_round_trip(self):
        model = SeizureNet(ModelKind.HYBRID, 3, DEBUG_MODEL, seed=4)
        checkpoint_save(model, self.tmp / 'ck', get_schema('synth3'))
        loaded, schema = checkpoint_load(self.tmp / 'ck')
        self.assertEqual(loaded.kind, ModelKind.HYBRID)
        self.assertEqual(schema.name, 'synth3')
        self.assertEqual(set(loaded.params), set(model.params))
        for param_id, value in model.params.items():
            np.testing.assert_array_equal(loaded.params[param_id], value)
        x = np.random.default_rng(0).normal(size=(2, 32, 9, 19)).astype(np.float32)
        np.testing.assert_array_equal(loaded.logits(x), model.logits(x))

    def test_header_declares_parameters(self):
        model = SeizureNet(ModelKind.CNN, 2, DEBUG_MODEL)
        checkpoint_save(model, self.tmp / 'ck')
        header = json.loads((self.tmp / 'ck' / 'header.json').read_text())
        self.assertEqual(header['parameters']['head.weights'], [12 * 4, 2])
        self.assertEqual(header['parameter_count'], model.parameter_count)
        self.assertIsNone(header['schema'])

    def test_unknown_kind_in_header(self):
        checkpoint_save(SeizureNet(ModelKind.CNN, 2, DEBUG_MODEL), self.tmp / 'ck')
        header_path = self.tmp / 'ck' / 'header.json'
        header = json.loads(header_path.read_text())
        header['kind'] = 'svm'
        header_path.write_text(json.dumps(header))
        with self.assertRaisesMessage(CheckpointError, 'invalid checkpoint header'):
            checkpoint_load(self.tmp / 'ck')

    def test_header_without_model_section(self):
        checkpoint_save(SeizureNet(ModelKind.CNN, 2, DEBUG_MODEL), self.tmp / 'ck')
        header_path = self.tmp / 'ck' / 'header.json'
        header = json.loads(header_path.read_text())
        del header['model']
        header_path.write_text(json.dumps(header))
        with self.assertRaises(CheckpointError):
            checkpoint_load(self.tmp / 'ck')

    def test_tampered_dims(self):
        checkpoint_save(SeizureNet(ModelKind.CNN, 2, DEBUG_MODEL), self.tmp / 'ck')
        write_tensor(self.tmp / 'ck' / 'head.bias.eegt', np.zeros(3, dtype=np.float32))
        with self.assertRaises(CheckpointError) as ctx:
            checkpoint_load(self.tmp / 'ck')
        self.assertEqual(ctx.exception.param_id, 'head.bias')

    def test_missing_parameter_file(self):
        checkpoint_save(SeizureNet(ModelKind.RNN, 2, DEBUG_MODEL), self.tmp / 'ck')
        (self.tmp / 'ck' / 'rnn.layer2.gates.bias.eegt').unlink()
        with self.assertRaises(CheckpointError) as ctx:
            checkpoint_load(self.tmp / 'ck')
        self.assertEqual(ctx.exception.param_id, 'rnn.layer2.gates.bias')

    def test_not_a_checkpoint(self):
        with self.assertRaises(CheckpointError):
            checkpoint_load(self.tmp)

    def test_cnn_into_hybrid_streams(self):
        base = SeizureNet(ModelKind.CNN, 2, DEBUG_MODEL, seed=1)
        checkpoint_save(base, self.tmp / 'cnn')
        hybrid = SeizureNet(ModelKind.HYBRID, 2, DEBUG_MODEL, seed=2)
        load_extractor_checkpoint(hybrid, self.tmp / 'cnn', 'cnn')
        for param_id in base.stream_ids('cnn'):
            np.testing.assert_array_equal(hybrid.params[param_id], base.params[param_id])
        with self.assertRaises(CheckpointError) as ctx:
            load_extractor_checkpoint(hybrid, self.tmp / 'cnn', 'rnn')
        self.assertTrue(ctx.exception.param_id.startswith('cnn.'))

    def test_cnn_into_both_bcnn_streams(self):
        base = SeizureNet(ModelKind.CNN, 2, DEBUG_MODEL, seed=1)
        checkpoint_save(base, self.tmp / 'cnn')
        bcnn = SeizureNet(ModelKind.BCNN, 2, DEBUG_MODEL, seed=2)
        for stream in ('cnn_a', 'cnn_b'):
            load_extractor_checkpoint(bcnn, self.tmp / 'cnn', stream)
        np.testing.assert_array_equal(bcnn.params['cnn_a.block1.conv.weights'], base.params['cnn.block1.conv.weights'])
        np.testing.assert_array_equal(bcnn.params['cnn_b.block3.conv.bias'], base.params['cnn.block3.conv.bias'])
        bcnn.params['cnn_a.block1.conv.weights'][0, 0, 0, 0] += 1.0
        self.assertNotEqual(bcnn.params['cnn_a.block1.conv.weights'][0, 0, 0, 0],
                            bcnn.params['cnn_b.block1.conv.weights'][0, 0, 0, 0])
