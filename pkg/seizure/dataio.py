"""
On-disk formats: the EEGT tensor container, corpus manifests, label schemas,
preprocessed datasets and model checkpoints.

EEGT layout (all little-endian):
    magic b'EEGT' | version u16 | dtype u8 | ndim u8 | dims u32 x ndim | payload
dtype 0 is float32, the only one supported.
"""
import json
import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import CheckpointError, DatasetError, FormatError, SchemaError, StructuralError, TruncationError
from .networks import ModelConfig, ModelKind, SeizureNet
from .preprocess import Annotation, Recording, SpectroSample

logger = logging.getLogger(__name__)

MAGIC = b'EEGT'
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0
HEADER = struct.Struct('<4sHBB')
MANIFEST_COLUMNS = ['file', 'sample_rate', 'channels', 'annotations', 'patient_id', 'event_id']
CHECKPOINT_FORMAT = 'seizenet-checkpoint'


# ---------------------------------------------------------------------------
# Tensor container
# ---------------------------------------------------------------------------

def encode_tensor(t) -> bytes:
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.floating):
        raise StructuralError(f'EEGT stores real tensors only, got dtype {t.dtype}')
    if t.ndim == 0 or t.ndim > 255 or any(extent < 1 for extent in t.shape):
        raise StructuralError(f'EEGT needs 1..255 positive extents, got shape {t.shape}')
    header = HEADER.pack(MAGIC, FORMAT_VERSION, DTYPE_FLOAT32, t.ndim)
    dims = np.asarray(t.shape, dtype='<u4').tobytes()
    return header + dims + np.ascontiguousarray(t, dtype='<f4').tobytes()


def decode_tensor(raw: bytes, source: str = '<bytes>') -> np.ndarray:
    if len(raw) < HEADER.size:
        raise TruncationError(f'{source}: header truncated ({len(raw)} bytes)', HEADER.size, len(raw))
    magic, version, dtype, ndim = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f'{source}: bad magic {magic!r}, expected {MAGIC!r}')
    if version != FORMAT_VERSION:
        raise FormatError(f'{source}: unsupported format version {version}')
    if dtype != DTYPE_FLOAT32:
        raise FormatError(f'{source}: unsupported dtype code {dtype}')
    dims_end = HEADER.size + 4 * ndim
    if len(raw) < dims_end:
        raise TruncationError(f'{source}: dims truncated', dims_end, len(raw))
    shape = tuple(int(d) for d in np.frombuffer(raw, dtype='<u4', count=ndim, offset=HEADER.size))
    expected = int(np.prod(shape)) * 4
    actual = len(raw) - dims_end
    if actual != expected:
        raise TruncationError(
            f'{source}: payload has {actual} bytes, expected {expected} for dims {shape}', expected, actual
        )
    return np.frombuffer(raw, dtype='<f4', offset=dims_end).reshape(shape).astype(np.float32)


def write_tensor(path, t) -> None:
    Path(path).write_bytes(encode_tensor(t))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes(), str(path))


# ---------------------------------------------------------------------------
# Label schemas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelSchema:
    name: str
    classes: tuple
    codes: tuple = ()

    def __len__(self):
        return len(self.classes)

    def resolve(self, label: str) -> int:
        key = _label_key(label)
        for index, (name, code) in enumerate(zip(self.classes, self.codes or self.classes)):
            if key in (_label_key(name), _label_key(code)):
                return index
        raise SchemaError(f'unknown class label {label!r} for schema {self.name}')

    def code(self, index: int) -> str:
        return (self.codes or self.classes)[index]


def _label_key(label: str) -> str:
    return re.sub(r'[\s_\-]+', '', str(label)).lower()


TUH_SCHEMA = LabelSchema(
    name='tuh8',
    classes=('focal non-specific', 'generalized non-specific', 'simple partial', 'complex partial',
             'absence', 'tonic', 'tonic-clonic', 'myoclonic'),
    codes=('FNSZ', 'GNSZ', 'SPSZ', 'CPSZ', 'ABSZ', 'TNSZ', 'TCSZ', 'MYSZ'),
)

EPILEPSIAE_SCHEMA = LabelSchema(
    name='epi4',
    classes=('complex partial', 'unclassified', 'simple partial', 'secondarily generalized'),
    codes=('CP', 'UC', 'SP', 'SG'),
)


def get_schema(name: str) -> LabelSchema:
    if name == TUH_SCHEMA.name:
        return TUH_SCHEMA
    if name == EPILEPSIAE_SCHEMA.name:
        return EPILEPSIAE_SCHEMA
    match = re.fullmatch(r'synth(\d+)', name or '')
    if match and int(match.group(1)) >= 2:
        k = int(match.group(1))
        return LabelSchema(name=name, classes=tuple(f'class{c}' for c in range(k)))
    raise SchemaError(f'unknown schema {name!r}; expected tuh8, epi4 or synthK')


# ---------------------------------------------------------------------------
# Manifests and recordings
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    file: str
    sample_rate: float
    channels: list
    annotations: list
    patient_id: str = ''

    @property
    def recording_id(self) -> str:
        return Path(self.file).with_suffix('').as_posix()


@dataclass
class CorpusManifest:
    entries: list
    schema: LabelSchema
    root: Path = field(default_factory=Path)

    def __len__(self):
        return len(self.entries)


def _split_cell(value: str) -> list:
    return [part.strip() for part in str(value).split(';') if part.strip()]


def _parse_row(row: dict, row_number: int, schema: LabelSchema) -> ManifestEntry:
    try:
        sample_rate = float(row['sample_rate'])
    except ValueError:
        raise SchemaError(f'row {row_number}: bad sample_rate {row["sample_rate"]!r}', row=row_number)
    triples = _split_cell(row['annotations'])
    event_ids = _split_cell(row['event_id'])
    if len(event_ids) == 1 and len(triples) > 1:
        event_ids = [f'{event_ids[0]}#{n + 1}' for n in range(len(triples))]
    if len(event_ids) != len(triples):
        raise SchemaError(
            f'row {row_number}: {len(triples)} annotations but {len(event_ids)} event ids', row=row_number
        )
    annotations = []
    for triple, event_id in zip(triples, event_ids):
        parts = triple.split(':')
        if len(parts) != 3:
            raise SchemaError(f'row {row_number}: annotation {triple!r} is not start:end:label', row=row_number)
        try:
            label = schema.resolve(parts[2])
        except SchemaError as e:
            raise SchemaError(f'row {row_number}: {e}', row=row_number) from e
        try:
            start, end = float(parts[0]), float(parts[1])
        except ValueError:
            raise SchemaError(f'row {row_number}: bad interval in {triple!r}', row=row_number)
        annotations.append(Annotation(start=start, end=end, label=label, event_id=event_id))
    return ManifestEntry(
        file=row['file'],
        sample_rate=sample_rate,
        channels=_split_cell(row['channels']),
        annotations=annotations,
        patient_id=row['patient_id'],
    )


def load_manifest(path, schema: LabelSchema) -> CorpusManifest:
    """
    Parse a manifest CSV (columns: file, sample_rate, channels, annotations,
    patient_id, event_id). ``channels`` is ';'-separated; ``annotations`` holds
    ';'-separated ``start:end:label`` triples in seconds.
    """
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [column for column in MANIFEST_COLUMNS if column not in frame.columns]
    if missing:
        raise SchemaError(f'{path}: manifest lacks columns {", ".join(missing)}')

    entries, seen_events = [], set()
    for offset, row in enumerate(frame.to_dict(orient='records')):
        row_number = offset + 2  # header is line 1
        entry = _parse_row(row, row_number, schema)
        for ann in entry.annotations:
            if ann.event_id in seen_events:
                raise SchemaError(f'row {row_number}: duplicate event id {ann.event_id}', row=row_number)
            seen_events.add(ann.event_id)
        entries.append(entry)
    logger.info(f'Loaded manifest {path.name}: {len(entries)} recordings, {len(seen_events)} events')
    return CorpusManifest(entries=entries, schema=schema, root=path.parent)


def write_manifest(manifest: CorpusManifest, path) -> None:
    rows = []
    for entry in manifest.entries:
        rows.append({
            'file': entry.file,
            'sample_rate': f'{entry.sample_rate:g}',
            'channels': ';'.join(entry.channels),
            'annotations': ';'.join(
                f'{a.start:g}:{a.end:g}:{manifest.schema.code(a.label)}' for a in entry.annotations
            ),
            'patient_id': entry.patient_id,
            'event_id': ';'.join(a.event_id for a in entry.annotations),
        })
    pd.DataFrame(rows, columns=MANIFEST_COLUMNS).to_csv(path, index=False, lineterminator='\n')


def read_recording(entry: ManifestEntry, root=Path('.')) -> Recording:
    data = read_tensor(Path(root) / entry.file)
    return Recording(
        recording_id=entry.recording_id,
        channels=list(entry.channels),
        sample_rate=entry.sample_rate,
        data=data,
        annotations=list(entry.annotations),
        patient_id=entry.patient_id,
    )


# ---------------------------------------------------------------------------
# Preprocessed datasets
# ---------------------------------------------------------------------------

@dataclass
class SpectroDataset:
    features: np.ndarray
    labels: np.ndarray
    schema: LabelSchema
    recording_ids: list
    event_ids: list
    window_starts: list
    patient_ids: list

    def __len__(self):
        return int(self.labels.shape[0])

    @classmethod
    def from_samples(cls, samples: list, schema: LabelSchema) -> 'SpectroDataset':
        if not samples:
            raise StructuralError('no samples')
        return cls(
            features=np.stack([s.features for s in samples]).astype(np.float32),
            labels=np.array([s.label for s in samples], dtype=np.int64),
            schema=schema,
            recording_ids=[s.provenance.recording_id for s in samples],
            event_ids=[s.provenance.event_id for s in samples],
            window_starts=[float(s.provenance.window_start) for s in samples],
            patient_ids=[s.patient_id for s in samples],
        )

    def subset(self, indices) -> 'SpectroDataset':
        indices = np.asarray(indices, dtype=np.int64)
        return SpectroDataset(
            features=self.features[indices],
            labels=self.labels[indices],
            schema=self.schema,
            recording_ids=[self.recording_ids[i] for i in indices],
            event_ids=[self.event_ids[i] for i in indices],
            window_starts=[self.window_starts[i] for i in indices],
            patient_ids=[self.patient_ids[i] for i in indices],
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.schema))

    def samples(self) -> list:
        from .preprocess import Provenance
        return [
            SpectroSample(self.features[i], int(self.labels[i]),
                          Provenance(self.recording_ids[i], self.event_ids[i], self.window_starts[i]),
                          self.patient_ids[i])
            for i in range(len(self))
        ]


def save_dataset(dataset: SpectroDataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor(directory / 'features.eegt', dataset.features)
    pd.DataFrame({
        'index': np.arange(len(dataset)),
        'label': dataset.labels,
        'class_name': [dataset.schema.classes[label] for label in dataset.labels],
        'recording_id': dataset.recording_ids,
        'event_id': dataset.event_ids,
        'window_start': [f'{start:g}' for start in dataset.window_starts],
        'patient_id': dataset.patient_ids,
    }).to_csv(directory / 'samples.csv', index=False, lineterminator='\n')
    header = {
        'schema': dataset.schema.name,
        'classes': list(dataset.schema.classes),
        'shape': list(dataset.features.shape[1:]),
        'count': len(dataset),
    }
    (directory / 'dataset.json').write_text(json.dumps(header, indent=2, sort_keys=True) + '\n')
    return directory


def load_dataset(directory) -> SpectroDataset:
    directory = Path(directory)
    try:
        header = json.loads((directory / 'dataset.json').read_text())
        schema_name, classes, count = header['schema'], list(header['classes']), int(header['count'])
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise DatasetError(f'{directory}: unreadable dataset header ({e})') from e
    schema = get_schema(schema_name)
    if list(schema.classes) != classes:
        raise SchemaError(f'{directory}: class list does not match schema {schema.name}')
    try:
        features = read_tensor(directory / 'features.eegt')
        table = pd.read_csv(directory / 'samples.csv', dtype=str, keep_default_na=False)
        labels = table['label'].astype(np.int64).to_numpy()
        window_starts = table['window_start'].astype(float).tolist()
        recording_ids = table['recording_id'].tolist()
        event_ids = table['event_id'].tolist()
        patient_ids = table['patient_id'].tolist()
    except (OSError, ValueError, KeyError) as e:
        raise DatasetError(f'{directory}: unreadable dataset files ({e})') from e
    if features.shape[0] != len(table) or len(table) != count:
        raise FormatError(f'{directory}: {features.shape[0]} feature rows but {len(table)} sample rows')
    if labels.size and (labels.min() < 0 or labels.max() >= len(schema)):
        raise SchemaError(f'{directory}: labels outside schema {schema.name}')
    return SpectroDataset(
        features=features,
        labels=labels,
        schema=schema,
        recording_ids=recording_ids,
        event_ids=event_ids,
        window_starts=window_starts,
        patient_ids=patient_ids,
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _param_path(directory: Path, param_id: str) -> Path:
    return directory / f'{param_id}.eegt'


def checkpoint_save(model: SeizureNet, directory, schema: LabelSchema = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shapes = model.param_shapes()
    header = {
        'format': CHECKPOINT_FORMAT,
        'version': FORMAT_VERSION,
        'kind': model.kind.value,
        'n_classes': model.n_classes,
        'schema': schema.name if schema else None,
        'classes': list(schema.classes) if schema else None,
        'model': model.config.as_dict(),
        'parameters': {param_id: list(shape) for param_id, shape in shapes.items()},
        'parameter_count': model.parameter_count,
    }
    (directory / 'header.json').write_text(json.dumps(header, indent=2, sort_keys=True) + '\n')
    for param_id in shapes:
        write_tensor(_param_path(directory, param_id), model.params[param_id])
    logger.info(f'Saved {model.kind.label} checkpoint ({model.parameter_count} parameters) to {directory}')
    return directory


def read_checkpoint_header(directory) -> dict:
    directory = Path(directory)
    try:
        header = json.loads((directory / 'header.json').read_text())
    except (OSError, ValueError) as e:
        raise CheckpointError(f'{directory}: unreadable checkpoint header ({e})')
    if header.get('format') != CHECKPOINT_FORMAT:
        raise CheckpointError(f'{directory}: not a checkpoint directory')
    return header


def _read_param(directory: Path, param_id: str, declared_shape) -> np.ndarray:
    try:
        value = read_tensor(_param_path(directory, param_id))
    except FileNotFoundError:
        raise CheckpointError(f'Checkpoint lacks parameter {param_id}', param_id=param_id)
    except FormatError as e:
        raise CheckpointError(f'Parameter {param_id}: {e}', param_id=param_id) from e
    if value.shape != tuple(declared_shape):
        raise CheckpointError(
            f'Parameter {param_id} has shape {value.shape}, header declares {tuple(declared_shape)}',
            param_id=param_id,
        )
    return value


def checkpoint_load(directory):
    """Returns (model, schema or None)."""
    directory = Path(directory)
    header = read_checkpoint_header(directory)
    try:
        model_cfg = header['model']
        model = SeizureNet(
            header['kind'], header['n_classes'],
            ModelConfig(tuple(model_cfg['cnn_filters']), tuple(model_cfg['lstm_hidden']), model_cfg['kernel_size']),
        )
        declared = header['parameters']
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f'{directory}: invalid checkpoint header ({e})') from e
    params = {}
    for param_id, shape in model.param_shapes().items():
        if param_id not in declared:
            raise CheckpointError(f'Checkpoint lacks parameter {param_id}', param_id=param_id)
        if tuple(declared[param_id]) != tuple(shape):
            raise CheckpointError(
                f'Parameter {param_id} declared {tuple(declared[param_id])}, model expects {tuple(shape)}',
                param_id=param_id,
            )
        params[param_id] = _read_param(directory, param_id, shape)
    unexpected = sorted(set(declared) - set(params))
    if unexpected:
        raise CheckpointError(f'Checkpoint has unknown parameter {unexpected[0]}', param_id=unexpected[0])
    model.params = params
    schema = get_schema(header['schema']) if header.get('schema') else None
    return model, schema


def load_extractor_checkpoint(model: SeizureNet, directory, stream: str, source_stream: str = None) -> None:
    """Load one stream of ``model`` from a checkpoint of a (usually base) model."""
    directory = Path(directory)
    header = read_checkpoint_header(directory)
    if source_stream is None:
        source_streams = [name for name, _ in ModelKind(header['kind']).streams]
        source_stream = source_streams[0] if len(source_streams) == 1 else stream
    declared = header['parameters']
    state = {}
    for param_id in model.stream_ids(stream):
        source_id = source_stream + param_id[len(stream):]
        if source_id not in declared:
            raise CheckpointError(f'Checkpoint lacks parameter {source_id}', param_id=source_id)
        state[source_id] = _read_param(directory, source_id, declared[source_id])
    model.load_stream(state, stream, source_stream)
