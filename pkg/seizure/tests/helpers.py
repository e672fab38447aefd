import numpy as np

from seizure.dataio import SpectroDataset, get_schema
from seizure.networks import ModelConfig, SAMPLE_SHAPE
from seizure.training import TrainConfig

# Narrow layers keep the numpy networks fast enough for the test suite.
DEBUG_MODEL = ModelConfig(cnn_filters=(2, 2, 4), lstm_hidden=(2, 4), kernel_size=3)

FAST_TRAIN = TrainConfig(
    learning_rate=1e-2,
    fine_tune_rate=1e-3,
    batch_size=16,
    max_epochs_base=15,
    max_epochs_head=10,
    max_epochs_finetune=5,
    patience=4,
    k=3,
    strata='window',
)


def banded_dataset(per_class=8, n_classes=2, seed=0, noise=0.1, windows_per_event=1):
    """
    Separable spectro samples: class c lifts frequency rows 4c..4c+3 by 2.
    Consecutive windows of one class share an event id in groups of ``windows_per_event``.
    """
    rng = np.random.default_rng(seed)
    features, labels, events = [], [], []
    for c in range(n_classes):
        for i in range(per_class):
            sample = rng.normal(0.0, noise, size=SAMPLE_SHAPE)
            sample[4 * c:4 * c + 4] += 2.0
            features.append(sample)
            labels.append(c)
            events.append(f'c{c}e{i // windows_per_event}')
    n = len(labels)
    return SpectroDataset(
        features=np.asarray(features, dtype=np.float32),
        labels=np.asarray(labels, dtype=np.int64),
        schema=get_schema(f'synth{n_classes}'),
        recording_ids=[f'rec{i:03d}' for i in range(n)],
        event_ids=events,
        window_starts=[1.0] * n,
        patient_ids=['P000'] * n,
    )


def numeric_grad(f, x, step=1e-3):
    """Central differences of the scalar ``f()`` w.r.t. every element of ``x`` (modified in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + step
        plus = f()
        x[index] = original - step
        minus = f()
        x[index] = original
        grad[index] = (plus - minus) / (2 * step)
    return grad


def rel_error(analytic, numeric) -> float:
    analytic, numeric = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)
