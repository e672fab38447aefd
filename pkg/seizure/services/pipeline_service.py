"""
Pipeline service: the work behind each management command.

Each method takes a resolved RunConfig, writes its outputs under ``config.out``
and returns a summary dict for the command to print.
"""
import logging
import time

import numpy as np

from seizure.config import write_run_config
from seizure.dataio import (
    checkpoint_load, checkpoint_save, get_schema, load_dataset, load_manifest, save_dataset, SpectroDataset,
)
from seizure.exceptions import IngestionError, SchemaError, SeizureNetError
from seizure.metrics import class_report, confusion, mann_whitney_u, per_class_accuracy
from seizure.models import CrossValidationRun, FoldScore
from seizure.preprocess import preprocess_corpus
from seizure.synthetic import MANIFEST_NAME, generate_synthetic
from seizure.training import cross_validate, evaluate_model, stratified_kfold, train_model

from .report_service import ReportService

logger = logging.getLogger(__name__)

RESULTS_NAME = 'results.json'
EVALUATION_NAME = 'evaluation.json'


class PipelineService:
    """Runs pipeline stages and writes their artifacts."""

    @staticmethod
    def _check_schema(config, dataset):
        if config.schema and config.schema != dataset.schema.name:
            raise SchemaError(f'Dataset uses schema {dataset.schema.name}, config asks for {config.schema}')

    @staticmethod
    def synth(config):
        out = config.out_dir
        manifest = generate_synthetic(config.synth, out)
        write_run_config(config, out)
        summary = ReportService.manifest_summary(manifest)
        return {
            'manifest': out / MANIFEST_NAME,
            'recordings': len(manifest),
            'classes': len(manifest.schema),
            'summary': summary,
        }

    @staticmethod
    def preprocess(manifest_path, config):
        schema = get_schema(config.schema_name)
        manifest = load_manifest(manifest_path, schema)
        result = preprocess_corpus(manifest, cfg=config.stft)
        report = {
            'schema': schema.name,
            'recordings': len(manifest),
            'errors': result.errors,
            'samples': len(result.samples),
        }
        out = config.out_dir
        if not result.samples:
            ReportService.write_json(out / 'preprocess_report.json', report)
            raise IngestionError(f'no samples produced from {manifest_path} ({len(result.errors)} file errors)')

        dataset = SpectroDataset.from_samples(result.samples, schema)
        save_dataset(dataset, out)
        write_run_config(config, out)
        summary = ReportService.dataset_summary(dataset)
        report['shape'] = list(dataset.features.shape[1:])
        report['per_class'] = summary.to_dict(orient='records')
        ReportService.write_json(out / 'preprocess_report.json', report)
        logger.info(f'Preprocessed {len(dataset)} samples from {len(manifest)} recordings into {out}')
        return {
            'dataset': out,
            'samples': len(dataset),
            'shape': tuple(dataset.features.shape[1:]),
            'errors': result.errors,
            'summary': summary,
        }

    @staticmethod
    def train(dataset_dir, config):
        """Train one model with fold 0 of the stratified plan as holdout and save a checkpoint."""
        dataset = load_dataset(dataset_dir)
        PipelineService._check_schema(config, dataset)
        cfg = config.train
        groups = dataset.event_ids if cfg.strata == 'event' else None
        plan = stratified_kfold(dataset.labels, cfg.k, cfg.strata, cfg.seed, groups)
        train_idx, val_idx = plan.split(0)
        train, val = dataset.subset(train_idx), dataset.subset(val_idx)

        result, bases = train_model(config.kind, train, val, cfg, config.model)
        cm, report = evaluate_model(result.model, val)

        out = config.out_dir
        checkpoint = checkpoint_save(result.model, out / 'checkpoint', dataset.schema)
        for name, base in bases.items():
            checkpoint_save(base.model, out / f'checkpoint_{name}', dataset.schema)
        save_dataset(val, out / 'holdout')
        write_run_config(config, out)
        ReportService.write_json(out / 'train_report.json', {
            'kind': config.kind,
            'parameter_count': result.model.parameter_count,
            'holdout_size': len(val),
            'confusion': cm.as_list(),
            'report': report.as_dict(),
            'history': {stage: [r.as_dict() for r in records] for stage, records in result.histories.items()},
        })
        return {
            'checkpoint': checkpoint,
            'parameter_count': result.model.parameter_count,
            'weighted_f1': report.weighted_f1,
            'macro_f1': report.macro_f1,
            'epochs': len(result.history),
        }

    @staticmethod
    def crossval(dataset_dir, config, jobs: int = 1, compare_run: int = None):
        dataset = load_dataset(dataset_dir)
        PipelineService._check_schema(config, dataset)
        kind = config.model_kind
        fold_runner = None
        if jobs > 1:
            from seizure.tasks import queued_fold_runner
            fold_runner = queued_fold_runner(dataset_dir, kind.value, config.train, config.model, workers=jobs)
        result = cross_validate(kind, dataset, config.train, config.model, fold_runner=fold_runner)

        out = config.out_dir
        document = result.as_dict()
        document['schema'] = dataset.schema.name
        document['classes'] = list(dataset.schema.classes)
        results_path = ReportService.write_json(out / RESULTS_NAME, document)
        ReportService.write_confusion_csv(out / 'confusion_total.csv', result.total_confusion.counts,
                                          dataset.schema.classes)
        for fold in result.folds:
            ReportService.write_confusion_csv(out / f'confusion_r{fold.repeat}_f{fold.fold}.csv',
                                              fold.confusion.counts, dataset.schema.classes)
        ReportService.write_class_accuracy_csv(out / 'per_class_accuracy.csv', result.mean_class_accuracy(),
                                               dataset.schema.classes)
        write_run_config(config, out)

        run = CrossValidationRun.objects.create(
            kind=kind.value,
            schema=dataset.schema.name,
            strata=config.train.strata,
            seed=config.train.seed,
            folds=config.train.k,
            repeats=config.train.repeats,
            mean_weighted_f1=result.mean,
            std_weighted_f1=result.std,
            mean_macro_f1=result.mean_macro,
            dataset_path=str(dataset_dir),
            results_path=str(results_path),
        )
        FoldScore.objects.bulk_create([
            FoldScore(run=run, repeat=fold.repeat, fold=fold.fold,
                      weighted_f1=fold.weighted_f1, macro_f1=fold.macro_f1)
            for fold in result.folds
        ])
        ReportService.write_metadata(out / 'results_metadata.json', run_id=run.pk, jobs=jobs)

        comparison = None
        if compare_run is not None:
            comparison = PipelineService.compare_runs(run.pk, compare_run)
            ReportService.write_json(out / 'comparison.json', comparison)

        return {
            'run': run,
            'results': results_path,
            'result': result,
            'comparisons': document['mann_whitney'],
            'comparison': comparison,
            'summary': ReportService.summary_row(dataset.schema.name, kind.label, result.mean, result.std),
        }

    @staticmethod
    def compare_runs(run_id: int, other_id: int) -> dict:
        runs = {}
        for pk in (run_id, other_id):
            try:
                runs[pk] = CrossValidationRun.objects.get(pk=pk)
            except CrossValidationRun.DoesNotExist:
                raise SeizureNetError(f'No stored cross-validation run with id {pk}')
        run, other = runs[run_id], runs[other_id]
        test = mann_whitney_u(run.weighted_scores(), other.weighted_scores())
        return {
            'run': run.pk,
            'kind': run.kind,
            'other_run': other.pk,
            'other_kind': other.kind,
            'mann_whitney': test.as_dict(),
        }

    @staticmethod
    def evaluate(checkpoint_dir, dataset_dir, config):
        model, schema = checkpoint_load(checkpoint_dir)
        dataset = load_dataset(dataset_dir)
        if model.n_classes != len(dataset.schema) or (schema and schema.name != dataset.schema.name):
            raise SchemaError(
                f'Checkpoint has {model.n_classes} classes ({schema.name if schema else "no schema"}), '
                f'dataset has {len(dataset.schema)} ({dataset.schema.name})'
            )
        started = time.perf_counter()
        predictions = np.concatenate([
            model.predict(dataset.features[start:start + 256]) for start in range(0, len(dataset), 256)
        ])
        latency_ms = (time.perf_counter() - started) * 1000.0 / len(dataset)

        cm = confusion(dataset.labels, predictions, model.n_classes)
        report = class_report(cm)
        out = config.out_dir
        ReportService.write_json(out / EVALUATION_NAME, {
            'kind': model.kind.value,
            'schema': dataset.schema.name,
            'samples': len(dataset),
            'confusion': cm.as_list(),
            'per_class_accuracy': [float(v) for v in per_class_accuracy(cm).values],
            'report': report.as_dict(),
        })
        ReportService.write_confusion_csv(out / 'evaluation_confusion.csv', cm.counts, dataset.schema.classes)
        ReportService.write_metadata(out / 'evaluation_metadata.json', mean_latency_ms=latency_ms,
                                     checkpoint=str(checkpoint_dir), dataset=str(dataset_dir))
        logger.info(f'Evaluated {model.kind.label} on {len(dataset)} samples: F1 {report.weighted_f1:.4f}')
        return {
            'weighted_f1': report.weighted_f1,
            'macro_f1': report.macro_f1,
            'accuracy': report.accuracy,
            'latency_ms': latency_ms,
            'report': report,
            'confusion': cm,
            'classes': dataset.schema.classes,
        }
