"""
Optimization and the training protocols.

Base models (CNN, RNN) train end to end with Adam on class-weighted
cross-entropy under early stopping. Bilinear models follow the two-step
procedure: extractors are copied from base models trained on the same fold,
the head is trained on frozen extractor features, then the whole network is
fine-tuned at a lower rate. ``cross_validate`` runs that protocol over
stratified folds.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import numcore
from .exceptions import ConfigError, NumericError, SeizureNetError, StructuralError, TrainingError
from .metrics import ClassReport, ConfusionMatrix, class_report, confusion, mann_whitney_u, per_class_accuracy
from .networks import ModelConfig, ModelKind, SeizureNet

logger = logging.getLogger(__name__)

STRATA = ('event', 'window')
_KINDS = [kind.value for kind in ModelKind]
_INIT, _SHUFFLE_BASE, _SHUFFLE_HEAD, _SHUFFLE_FINETUNE = range(4)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    fine_tune_rate: float = 1e-4
    batch_size: int = 32
    max_epochs_base: int = 200
    max_epochs_head: int = 50
    max_epochs_finetune: int = 100
    patience: int = 10
    seed: int = 0
    k: int = 5
    strata: str = 'event'
    repeats: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        bad = []
        for name in ('learning_rate', 'fine_tune_rate', 'epsilon'):
            if not getattr(self, name) > 0:
                bad.append(name)
        for name in ('batch_size', 'max_epochs_base', 'max_epochs_head', 'max_epochs_finetune',
                     'patience', 'repeats'):
            if int(getattr(self, name)) < 1:
                bad.append(name)
        if self.k < 2:
            bad.append('k')
        if self.strata not in STRATA:
            bad.append('strata')
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            bad.append('beta1' if not 0 <= self.beta1 < 1 else 'beta2')
        if self.patience > min(self.max_epochs_base, self.max_epochs_head, self.max_epochs_finetune):
            bad.append('patience')
        if bad:
            paths = [f'train.{name}' for name in bad]
            raise ConfigError(f'Invalid training settings: {", ".join(paths)}', paths)

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def _seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> 'AdamState':
        return cls(beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """
    One bias-corrected Adam update of the parameters named in ``grads``; any
    parameter without a gradient is left untouched.

    Args:
        params: Parameter store keyed by parameter id
        grads: Gradients for the parameters to update, same keys and shapes
        state: Moment estimates and step count from the previous call
        lr: Learning rate, must be positive

    Returns:
        (new params, new AdamState); the inputs are not modified
    """
    if lr <= 0:
        raise ConfigError(f'learning rate must be positive, got {lr}', ['train.learning_rate'])
    for param_id, grad in grads.items():
        if param_id not in params:
            raise StructuralError(f'Gradient for unknown parameter {param_id}')
        if np.shape(grad) != np.shape(params[param_id]):
            raise StructuralError(
                f'{param_id}: gradient shape {np.shape(grad)} does not match {np.shape(params[param_id])}'
            )
        if not np.all(np.isfinite(grad)):
            raise NumericError(f'Non-finite gradient for {param_id}; step rejected')

    t = state.t + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    new_params, new_m, new_v = dict(params), dict(state.m), dict(state.v)
    for param_id, grad in grads.items():
        theta = params[param_id]
        g = np.asarray(grad, dtype=theta.dtype)
        m = b1 * state.m.get(param_id, 0) + (1 - b1) * g
        v = b2 * state.v.get(param_id, 0) + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params[param_id] = (theta - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(theta.dtype)
        new_m[param_id], new_v[param_id] = m, v
    return new_params, AdamState(new_m, new_v, t, b1, b2, eps)


# ---------------------------------------------------------------------------
# Class weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassWeights:
    weights: np.ndarray
    counts: np.ndarray
    missing: tuple = ()

    def for_labels(self, labels) -> np.ndarray:
        return self.weights[np.asarray(labels, dtype=np.int64)]


def compute_class_weights(counts) -> ClassWeights:
    """
    Inverse-frequency class weights, weight_c = total / (K * count_c).

    Args:
        counts: Training samples per class

    Returns:
        ClassWeights; absent classes get weight 0 and are listed in ``missing``
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        raise ConfigError('All class counts are zero', ['train'])
    weights = np.zeros(counts.shape, dtype=np.float64)
    present = counts > 0
    weights[present] = total / (counts.size * counts[present])
    missing = tuple(int(c) for c in np.flatnonzero(~present))
    if missing:
        logger.warning(f'Classes {list(missing)} have no training samples; their weight is 0')
    return ClassWeights(weights=weights, counts=counts, missing=missing)


# ---------------------------------------------------------------------------
# Stratified folds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    k: int
    unit: str
    seed: int
    assignment: np.ndarray

    def validation_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def training_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def split(self, fold: int):
        if not 0 <= fold < self.k:
            raise StructuralError(f'fold {fold} outside 0..{self.k - 1}')
        return self.training_indices(fold), self.validation_indices(fold)

    def validation_counts(self, labels, n_classes: int) -> np.ndarray:
        """[k, n_classes] matrix of validation sample counts."""
        labels = np.asarray(labels, dtype=np.int64)
        return np.stack([
            np.bincount(labels[self.assignment == fold], minlength=n_classes) for fold in range(self.k)
        ])


def stratified_kfold(labels, k: int = 5, unit: str = 'window', seed: int = 0, groups=None) -> FoldPlan:
    """
    Per class (in class order) the units are shuffled with the seeded generator
    and dealt round-robin over the folds; the dealing offset carries over from
    one class to the next so fold sizes stay balanced. With ``unit='event'``
    the units are seizure events (``groups``) and all their windows share a fold.

    Args:
        labels: Class index per window
        k: Number of folds, at least 2
        unit: 'window' or 'event'
        seed: Seed of the shuffling generator
        groups: Event id per window, required when ``unit='event'``

    Returns:
        FoldPlan assigning every window to exactly one validation fold
    """
    labels = np.asarray(labels, dtype=np.int64)
    if k < 2:
        raise ConfigError(f'k must be at least 2, got {k}', ['train.k'])
    if unit not in STRATA:
        raise ConfigError(f'unknown stratification unit {unit!r}', ['strata'])
    if labels.size == 0:
        raise ConfigError('cannot build folds over an empty dataset', ['train.k'])

    if unit == 'event':
        if groups is None or len(groups) != labels.size:
            raise StructuralError('event stratification needs one event id per sample')
        unit_ids, members = np.unique(np.asarray(groups, dtype=str), return_inverse=True)
        unit_labels = np.full(unit_ids.size, -1, dtype=np.int64)
        for member, label in zip(members, labels):
            if unit_labels[member] not in (-1, label):
                raise StructuralError(f'event {unit_ids[member]} carries more than one class label')
            unit_labels[member] = label
    else:
        members = np.arange(labels.size)
        unit_labels = labels

    rng = np.random.default_rng(seed)
    unit_fold = np.empty(unit_labels.size, dtype=np.int64)
    offset = 0
    classes, class_sizes = np.unique(unit_labels, return_counts=True)
    for cls in classes:
        units = rng.permutation(np.flatnonzero(unit_labels == cls))
        unit_fold[units] = (offset + np.arange(units.size)) % k
        offset = (offset + units.size) % k
    if class_sizes.min() < k:
        logger.warning(
            f'k={k} exceeds the smallest class ({class_sizes.min()} {unit}s); some folds miss that class'
        )
    return FoldPlan(k=k, unit=unit, seed=seed, assignment=unit_fold[members])


# ---------------------------------------------------------------------------
# Early stopping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_weighted_f1: float
    stage: str = 'base'

    def __post_init__(self):
        if not (np.isfinite(self.train_loss) and np.isfinite(self.val_loss)):
            raise NumericError(f'{self.stage} epoch {self.epoch}: non-finite loss')

    def as_dict(self) -> dict:
        return {
            'epoch': self.epoch,
            'train_loss': self.train_loss,
            'val_loss': self.val_loss,
            'val_weighted_f1': self.val_weighted_f1,
        }


class StopDecision(NamedTuple):
    stop: bool
    best_epoch: int


def early_stop_check(history: list, patience: int) -> StopDecision:
    """Stop once the current epoch is ``patience`` epochs past the best one."""
    if not history:
        raise StructuralError('early stopping needs at least one epoch')
    best = history[0]
    for record in history[1:]:
        if record.val_loss < best.val_loss:
            best = record
    return StopDecision(history[-1].epoch - best.epoch >= patience, best.epoch)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def _take(inputs, index):
    if isinstance(inputs, dict):
        return {name: value[index] for name, value in inputs.items()}
    return inputs[index]


def _network_objective(model: SeizureNet, extractors: bool = True):
    def objective(params, x, y, w):
        logits, cache = model.forward(x, params)
        loss, d_logits = numcore.batch_softmax_cross_entropy(logits, y, w)
        return loss, model.backward(cache, d_logits, params, extractors=extractors)
    return objective


def _head_objective(model: SeizureNet):
    def objective(params, features, y, w):
        logits, cache = model.head_forward(features, params)
        loss, d_logits = numcore.batch_softmax_cross_entropy(logits, y, w)
        grads, _ = model.head_backward(cache, d_logits, params)
        return loss, grads
    return objective


def _evaluate_loss(logits, labels, weights: ClassWeights, n_classes: int):
    loss, _ = numcore.batch_softmax_cross_entropy(logits, labels, weights.for_labels(labels))
    predictions = np.asarray(logits).argmax(axis=1)
    return loss, class_report(confusion(labels, predictions, n_classes)).weighted_f1


def _fit(model: SeizureNet, train_inputs, y_train, val_inputs, y_val, *, objective, logits_fn,
         trainable: list, weights: ClassWeights, cfg: TrainConfig, lr: float, max_epochs: int,
         shuffle_seed: int, stage: str, initial_eval: bool = False) -> list:
    """
    Shared mini-batch loop. Leaves the best-validation-loss parameters in
    ``model.params`` and returns the epoch history.
    """
    rng = np.random.default_rng(shuffle_seed)
    params = dict(model.params)
    state = AdamState.from_config(cfg)
    n = int(y_train.shape[0])
    train_weights = weights.for_labels(y_train)
    history, snapshots = [], {}

    def record(epoch, train_loss):
        val_loss, val_f1 = _evaluate_loss(logits_fn(params, val_inputs), y_val, weights, model.n_classes)
        history.append(EpochRecord(epoch, float(train_loss), float(val_loss), float(val_f1), stage))
        snapshots[epoch] = params
        logger.debug(f'{model.kind.label} {stage} epoch {epoch}: train {train_loss:.4f} val {val_loss:.4f} '
                     f'F1 {val_f1:.4f}')

    if initial_eval:
        train_loss, _ = _evaluate_loss(logits_fn(params, train_inputs), y_train, weights, model.n_classes)
        record(0, train_loss)

    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grads = objective(params, _take(train_inputs, batch), y_train[batch], train_weights[batch])
            params, state = adam_step(params, {pid: grads[pid] for pid in trainable}, state, lr)
            total += loss * batch.size
        record(epoch, total / n)
        decision = early_stop_check(history, cfg.patience)
        best = snapshots[decision.best_epoch]
        snapshots = {decision.best_epoch: best}
        if decision.stop:
            logger.debug(f'{model.kind.label} {stage}: early stop at epoch {epoch}, best {decision.best_epoch}')
            break

    model.params = snapshots[early_stop_check(history, cfg.patience).best_epoch]
    return history


def _extract_features(model: SeizureNet, x, batch_size: int = 256) -> dict:
    chunks = [model.features(x[start:start + batch_size]) for start in range(0, x.shape[0], batch_size)]
    return {name: np.concatenate([chunk[name] for chunk in chunks]) for name in model.streams}


def _check_split(train, val):
    if len(train) == 0 or len(val) == 0:
        raise ConfigError(f'empty split: {len(train)} training and {len(val)} validation samples', ['train.k'])


@dataclass
class TrainResult:
    model: SeizureNet
    histories: dict
    best_val_loss: dict

    @property
    def history(self) -> list:
        return [record for stage in self.histories.values() for record in stage]


def _best_loss(history: list) -> float:
    return min(record.val_loss for record in history)


def train_base(kind, train, val, cfg: TrainConfig, model_config: ModelConfig = None, fold: int = 0) -> TrainResult:
    """
    Train a CNN or RNN end to end on ``train`` with early stopping on ``val``.

    Args:
        kind: ModelKind.CNN or ModelKind.RNN
        train: Training SpectroDataset
        val: Validation SpectroDataset
        cfg: Training hyperparameters and seed
        model_config: Layer widths, defaults to the full-size model
        fold: Fold index, mixed into every seed

    Returns:
        TrainResult holding the best-validation-loss model and its history
    """
    kind = ModelKind(kind)
    if kind.is_bilinear:
        raise ConfigError(f'{kind.label} is not a base model', ['kind'])
    _check_split(train, val)
    n_classes = len(train.schema)
    kind_key = _KINDS.index(kind.value)
    model = SeizureNet(kind, n_classes, model_config, seed=_seed(cfg.seed, fold, kind_key, _INIT))
    weights = compute_class_weights(train.class_counts())
    history = _fit(
        model, train.features, train.labels, val.features, val.labels,
        objective=_network_objective(model),
        logits_fn=lambda params, x: model.logits(x, params),
        trainable=list(model.params), weights=weights, cfg=cfg, lr=cfg.learning_rate,
        max_epochs=cfg.max_epochs_base, shuffle_seed=_seed(cfg.seed, fold, kind_key, _SHUFFLE_BASE),
        stage='base',
    )
    logger.info(f'{kind.label} fold {fold}: {len(history)} epochs, best val loss {_best_loss(history):.4f}')
    return TrainResult(model, {'base': history}, {'base': _best_loss(history)})


def transplant_extractors(model: SeizureNet, pretrained: dict) -> None:
    """Copy each stream's extractor from the base model of its family."""
    for stream, family in model.kind.streams:
        if family not in pretrained:
            raise ConfigError(f'{model.kind.label} needs a pre-trained {family} extractor', ['kind'])
        model.load_stream(pretrained[family].stream_state(family), stream, source_stream=family)


def train_head(model: SeizureNet, train, val, cfg: TrainConfig, weights: ClassWeights, fold: int = 0) -> list:
    """Stage 1: extractors frozen, head trained on cached feature maps."""
    kind_key = _KINDS.index(model.kind.value)
    train_features = _extract_features(model, train.features)
    val_features = _extract_features(model, val.features)
    return _fit(
        model, train_features, train.labels, val_features, val.labels,
        objective=_head_objective(model),
        logits_fn=lambda params, features: model.head_forward(features, params)[0],
        trainable=model.head_ids(), weights=weights, cfg=cfg, lr=cfg.learning_rate,
        max_epochs=cfg.max_epochs_head, shuffle_seed=_seed(cfg.seed, fold, kind_key, _SHUFFLE_HEAD),
        stage='head',
    )


def fine_tune(model: SeizureNet, train, val, cfg: TrainConfig, weights: ClassWeights, fold: int = 0) -> list:
    """Stage 2: every parameter trainable at the fine-tune rate; epoch 0 scores the starting point."""
    kind_key = _KINDS.index(model.kind.value)
    return _fit(
        model, train.features, train.labels, val.features, val.labels,
        objective=_network_objective(model),
        logits_fn=lambda params, x: model.logits(x, params),
        trainable=list(model.params), weights=weights, cfg=cfg, lr=cfg.fine_tune_rate,
        max_epochs=cfg.max_epochs_finetune, shuffle_seed=_seed(cfg.seed, fold, kind_key, _SHUFFLE_FINETUNE),
        stage='finetune', initial_eval=True,
    )


def train_bilinear_two_step(kind, pretrained: dict, train, val, cfg: TrainConfig,
                            model_config: ModelConfig = None, fold: int = 0) -> TrainResult:
    """
    Two-step bilinear training: head on frozen extractors, then fine-tuning of
    every parameter at ``cfg.fine_tune_rate``.

    Args:
        kind: One of the bilinear kinds (bcnn, brnn, hybrid)
        pretrained: Extractor family ('cnn', 'rnn') to a trained base model
        train: Training SpectroDataset
        val: Validation SpectroDataset
        cfg: Training hyperparameters and seed
        model_config: Layer widths, must match the base models
        fold: Fold index, mixed into every seed

    Returns:
        TrainResult with 'head' and 'finetune' histories
    """
    kind = ModelKind(kind)
    if not kind.is_bilinear:
        raise ConfigError(f'{kind.label} is not a bilinear model', ['kind'])
    _check_split(train, val)
    kind_key = _KINDS.index(kind.value)
    model = SeizureNet(kind, len(train.schema), model_config, seed=_seed(cfg.seed, fold, kind_key, _INIT))
    transplant_extractors(model, pretrained)
    model.check_contract(train.features[0])
    weights = compute_class_weights(train.class_counts())

    head_history = train_head(model, train, val, cfg, weights, fold)
    finetune_history = fine_tune(model, train, val, cfg, weights, fold)
    best = {'head': _best_loss(head_history), 'finetune': _best_loss(finetune_history)}
    logger.info(
        f'{kind.label} fold {fold}: head best val loss {best["head"]:.4f}, fine-tune {best["finetune"]:.4f}'
    )
    return TrainResult(model, {'head': head_history, 'finetune': finetune_history}, best)


# ---------------------------------------------------------------------------
# Evaluation and cross-validation
# ---------------------------------------------------------------------------

def evaluate_model(model: SeizureNet, dataset, batch_size: int = 256):
    """Returns (ConfusionMatrix, ClassReport) of ``model`` on ``dataset``."""
    predictions = model.predict(dataset.features, batch_size=batch_size)
    cm = confusion(dataset.labels, predictions, model.n_classes)
    return cm, class_report(cm)


@dataclass
class FoldResult:
    kind: str
    repeat: int
    fold: int
    confusion: ConfusionMatrix
    report: ClassReport
    histories: dict
    baselines: dict = field(default_factory=dict)
    validation_indices: list = field(default_factory=list)
    model: SeizureNet = None

    @property
    def weighted_f1(self) -> float:
        return self.report.weighted_f1

    @property
    def macro_f1(self) -> float:
        return self.report.macro_f1

    def as_dict(self) -> dict:
        return {
            'repeat': self.repeat,
            'fold': self.fold,
            'weighted_f1': self.weighted_f1,
            'macro_f1': self.macro_f1,
            'accuracy': self.report.accuracy,
            'confusion': self.confusion.as_list(),
            'per_class_accuracy': [float(v) for v in per_class_accuracy(self.confusion).values],
            'report': self.report.as_dict(),
            'baselines': self.baselines,
            'history': {stage: [r.as_dict() for r in records] for stage, records in self.histories.items()},
            'validation_size': len(self.validation_indices),
        }


def train_model(kind, train, val, cfg: TrainConfig, model_config: ModelConfig = None, fold: int = 0):
    """
    Full per-fold protocol. Returns (TrainResult, {base kind: TrainResult});
    the second item holds the base models a bilinear kind was built from.
    """
    kind = ModelKind(kind)
    if not kind.is_bilinear:
        return train_base(kind, train, val, cfg, model_config, fold), {}
    bases = {
        base.value: train_base(base, train, val, cfg, model_config, fold) for base in kind.base_kinds
    }
    pretrained = {name: result.model for name, result in bases.items()}
    return train_bilinear_two_step(kind, pretrained, train, val, cfg, model_config, fold), bases


def run_fold(kind, dataset, plan: FoldPlan, fold: int, cfg: TrainConfig, model_config: ModelConfig = None,
             repeat: int = 0, keep_model: bool = False) -> FoldResult:
    kind = ModelKind(kind)
    train_idx, val_idx = plan.split(fold)
    train, val = dataset.subset(train_idx), dataset.subset(val_idx)
    try:
        result, bases = train_model(kind, train, val, cfg, model_config, fold)
        cm, report = evaluate_model(result.model, val)
        baselines = {}
        for name, base in bases.items():
            _, base_report = evaluate_model(base.model, val)
            baselines[name] = {'weighted_f1': base_report.weighted_f1, 'macro_f1': base_report.macro_f1}
    except TrainingError:
        raise
    except SeizureNetError as e:
        raise TrainingError(f'{kind.label} fold {fold} (repeat {repeat}) failed: {e}', fold=fold) from e
    logger.info(f'{kind.label} repeat {repeat} fold {fold}: weighted F1 {report.weighted_f1:.4f}')
    return FoldResult(
        kind=kind.value,
        repeat=repeat,
        fold=fold,
        confusion=cm,
        report=report,
        histories=result.histories,
        baselines=baselines,
        validation_indices=[int(i) for i in val_idx],
        model=result.model if keep_model else None,
    )


@dataclass
class FoldJob:
    repeat: int
    fold: int
    seed: int


def plan_folds(dataset, cfg: TrainConfig) -> list:
    """One FoldPlan per repeat, seeded ``seed + repeat``."""
    groups = dataset.event_ids if cfg.strata == 'event' else None
    return [
        stratified_kfold(dataset.labels, cfg.k, cfg.strata, cfg.seed + repeat, groups)
        for repeat in range(cfg.repeats)
    ]


def fold_jobs(cfg: TrainConfig) -> list:
    return [FoldJob(repeat, fold, cfg.seed + repeat) for repeat in range(cfg.repeats) for fold in range(cfg.k)]


def run_fold_job(kind, dataset, job: FoldJob, cfg: TrainConfig, model_config: ModelConfig = None) -> FoldResult:
    """
    Rebuild the fold plan of ``job`` and run that fold; used by queue workers.

    Args:
        kind: Model kind
        dataset: Full SpectroDataset
        job: Repeat, fold and seed of the fold
        cfg: Training configuration (its seed is replaced by ``job.seed``)
        model_config: Layer widths

    Returns:
        FoldResult, identical to the in-process run of the same fold
    """
    groups = dataset.event_ids if cfg.strata == 'event' else None
    plan = stratified_kfold(dataset.labels, cfg.k, cfg.strata, job.seed, groups)
    return run_fold(kind, dataset, plan, job.fold, replace(cfg, seed=job.seed), model_config, job.repeat)


@dataclass
class CrossValResult:
    kind: str
    strata: str
    folds: list
    n_classes: int

    @property
    def weighted_f1(self) -> list:
        return [fold.weighted_f1 for fold in self.folds]

    @property
    def macro_f1(self) -> list:
        return [fold.macro_f1 for fold in self.folds]

    @property
    def mean(self) -> float:
        return float(np.mean(self.weighted_f1))

    @property
    def std(self) -> float:
        return float(np.std(self.weighted_f1))

    @property
    def mean_macro(self) -> float:
        return float(np.mean(self.macro_f1))

    @property
    def total_confusion(self) -> ConfusionMatrix:
        total = ConfusionMatrix(np.zeros((self.n_classes, self.n_classes), dtype=np.int64))
        for fold in self.folds:
            total = total + fold.confusion
        return total

    def mean_class_accuracy(self) -> list:
        return [float(v) for v in np.mean([per_class_accuracy(f.confusion).values for f in self.folds], axis=0)]

    def baseline_scores(self) -> dict:
        names = sorted({name for fold in self.folds for name in fold.baselines})
        return {name: [fold.baselines[name]['weighted_f1'] for fold in self.folds] for name in names}

    def comparisons(self) -> dict:
        """Mann-Whitney U of this kind's fold scores against each baseline's."""
        return {
            name: mann_whitney_u(self.weighted_f1, scores).as_dict()
            for name, scores in self.baseline_scores().items()
        }

    def as_dict(self) -> dict:
        baselines = self.baseline_scores()
        return {
            'kind': self.kind,
            'strata': self.strata,
            'folds': [fold.as_dict() for fold in self.folds],
            'weighted_f1': self.weighted_f1,
            'macro_f1': self.macro_f1,
            'mean_weighted_f1': self.mean,
            'std_weighted_f1': self.std,
            'mean_macro_f1': self.mean_macro,
            'per_class_accuracy': self.mean_class_accuracy(),
            'confusion_total': self.total_confusion.as_list(),
            'baselines': {
                name: {'weighted_f1': scores, 'mean_weighted_f1': float(np.mean(scores))}
                for name, scores in baselines.items()
            },
            'mann_whitney': self.comparisons(),
        }


def cross_validate(kind, dataset, cfg: TrainConfig, model_config: ModelConfig = None, fold_runner=None) -> CrossValResult:
    """
    Stratified k-fold cross-validation repeated ``cfg.repeats`` times.

    ``fold_runner(jobs)`` may execute the fold jobs elsewhere (e.g. a task
    queue); it must return FoldResults in job order. Each fold derives its
    seeds from (seed + repeat, fold) alone, so results do not depend on the runner.

    Args:
        kind: Model kind
        dataset: Full SpectroDataset
        cfg: Training configuration, including k, repeats and strata
        model_config: Layer widths
        fold_runner: Optional callable taking the FoldJob list

    Returns:
        CrossValResult with one FoldResult per (repeat, fold)

    Raises:
        TrainingError: A fold failed; ``fold`` names it
    """
    kind = ModelKind(kind)
    plans = plan_folds(dataset, cfg)
    for plan in plans:
        counts = plan.validation_counts(dataset.labels, len(dataset.schema))
        logger.debug(f'{kind.label} fold plan seed {plan.seed}: validation counts {counts.tolist()}')
    jobs = fold_jobs(cfg)
    if fold_runner is None:
        folds = [run_fold(kind, dataset, plans[job.repeat], job.fold, replace(cfg, seed=job.seed), model_config,
                          job.repeat) for job in jobs]
    else:
        folds = list(fold_runner(jobs))
    result = CrossValResult(kind=kind.value, strata=cfg.strata, folds=folds, n_classes=len(dataset.schema))
    logger.info(
        f'{kind.label} {cfg.k}-fold x{cfg.repeats}: weighted F1 {result.mean:.4f} +/- {result.std:.4f}'
    )
    return result
