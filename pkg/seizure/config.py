"""
Run configuration: a JSON document with sections ``stft``, ``train``,
``synth`` and ``model`` plus scalar keys ``kind``, ``schema``, ``strata``,
``seed`` and ``out``. Values resolve as defaults <- document <- command flags.
The top-level ``seed`` and ``strata`` feed every section that needs them.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from django.conf import settings

from .exceptions import ConfigError
from .forms import ModelConfigForm, RunConfigForm, StftConfigForm, SynthConfigForm, TrainConfigForm
from .networks import ModelConfig, ModelKind
from .preprocess import StftConfig
from .synthetic import SynthSpec
from .training import TrainConfig

logger = logging.getLogger(__name__)

SECTIONS = {
    'stft': StftConfigForm,
    'train': TrainConfigForm,
    'synth': SynthConfigForm,
    'model': ModelConfigForm,
}
RUN_CONFIG_NAME = 'run_config.json'


@dataclass(frozen=True)
class RunConfig:
    kind: str = ModelKind.HYBRID.value
    schema: str = ''
    strata: str = 'event'
    seed: int = 0
    out: str = ''
    stft: StftConfig = field(default_factory=StftConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    model: ModelConfig = field(default_factory=ModelConfig)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def schema_name(self) -> str:
        """Explicit schema, else the synthetic corpus schema."""
        return self.schema or self.synth.schema_name

    @property
    def model_kind(self) -> ModelKind:
        return ModelKind(self.kind)

    def as_dict(self) -> dict:
        return {
            'kind': self.kind,
            'schema': self.schema,
            'strata': self.strata,
            'seed': self.seed,
            'out': self.out,
            'stft': {name: getattr(self.stft, name) for name in self.stft.__dataclass_fields__},
            'train': self.train.as_dict(),
            'synth': self.synth.as_dict(),
            'model': self.model.as_dict(),
        }


def _validate(form_class, data, prefix: str) -> dict:
    """Validate one mapping with ``form_class``; returns only the keys present."""
    if not isinstance(data, dict):
        raise ConfigError(f'{prefix or "config"} must be an object', [prefix or 'config'])
    dotted = (lambda key: f'{prefix}.{key}') if prefix else (lambda key: key)
    unknown = sorted(set(data) - set(form_class.base_fields) - (set(SECTIONS) if not prefix else set()))
    if unknown:
        paths = [dotted(key) for key in unknown]
        raise ConfigError(f'Unknown configuration keys: {", ".join(paths)}', paths)
    form = form_class(data={key: value for key, value in data.items() if key in form_class.base_fields})
    if not form.is_valid():
        paths, messages = [], []
        for name, errors in form.errors.as_data().items():
            for error in errors:
                index = (error.params or {}).get('index')
                path = dotted(name) if index is None else f'{dotted(name)}[{index}]'
                paths.append(path)
                messages.append(f'{path}: {" ".join(error.messages)}')
        raise ConfigError('Invalid configuration: ' + '; '.join(messages), paths)
    return {key: form.cleaned_data[key] for key in data if form.cleaned_data.get(key) is not None}


def _build(factory, values: dict, prefix: str):
    try:
        return factory(**values)
    except TypeError as e:
        raise ConfigError(f'{prefix}: {e}', [prefix])


def load_run_config(path=None, overrides: dict = None) -> RunConfig:
    document = {}
    if path:
        path = Path(path)
        try:
            document = json.loads(path.read_text())
        except OSError as e:
            raise ConfigError(f'Cannot read config {path}: {e}', ['config'])
        except ValueError as e:
            raise ConfigError(f'Config {path} is not valid JSON: {e}', ['config'])

    scalars = _validate(RunConfigForm, document, '')
    sections = {name: _validate(form, document.get(name, {}), name) for name, form in SECTIONS.items()}
    flags = {key: value for key, value in (overrides or {}).items() if value is not None}
    if flags:
        scalars.update(_validate(RunConfigForm, flags, ''))

    seed = scalars.get('seed', settings.SEIZENET['SEED'])
    strata = scalars.get('strata', 'event')
    synth = _build(SynthSpec, {**sections['synth'], 'seed': seed}, 'synth')
    config = RunConfig(
        kind=scalars.get('kind', ModelKind.HYBRID.value),
        schema=scalars.get('schema', ''),
        strata=strata,
        seed=seed,
        out=str(scalars.get('out') or settings.SEIZENET['OUTPUT_DIR']),
        stft=_build(StftConfig, sections['stft'], 'stft'),
        train=_build(TrainConfig, {**sections['train'], 'seed': seed, 'strata': strata}, 'train'),
        synth=synth,
        model=_build(ModelConfig, {key: tuple(value) if isinstance(value, list) else value
                                   for key, value in sections['model'].items()}, 'model'),
    )
    logger.debug(f'Resolved run config: kind={config.kind} schema={config.schema} seed={config.seed}')
    return config


def write_run_config(config: RunConfig, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / RUN_CONFIG_NAME
    target.write_text(json.dumps(config.as_dict(), indent=2, sort_keys=True) + '\n')
    return target
