import logging

from django.conf import settings
from django_q.tasks import async_task, fetch

from .dataio import load_dataset
from .exceptions import TrainingError
from .networks import ModelConfig
from .training import FoldJob, TrainConfig, run_fold_job

logger = logging.getLogger(__name__)


def crossval_fold_task(dataset_dir, kind, repeat, fold, seed, train, model):
    """One cross-validation fold, run by a django-q worker."""
    dataset = load_dataset(dataset_dir)
    model_config = ModelConfig(
        tuple(model['cnn_filters']), tuple(model['lstm_hidden']), model['kernel_size']
    )
    result = run_fold_job(kind, dataset, FoldJob(repeat, fold, seed), TrainConfig(**train), model_config)
    logger.info(f"Fold task {kind} r{repeat} f{fold} finished: {result.weighted_f1:.4f}")
    return result


def queued_fold_runner(dataset_dir, kind, train_cfg, model_cfg, workers=1, timeout=None):
    """
    Returns a fold runner for ``cross_validate`` that sends folds to the
    django-q cluster, at most ``workers`` at a time, and collects the results
    in job order.

    Args:
        dataset_dir: Dataset directory the workers load.
        kind: Model kind value.
        train_cfg: TrainConfig shared by every fold.
        model_cfg: ModelConfig shared by every fold.
        workers: Folds in flight at once (the ``--jobs`` value).
        timeout: Seconds to wait for each fold; defaults to SEIZENET['FOLD_TIMEOUT'].

    Raises:
        TrainingError: A fold failed or did not finish within the timeout.
    """
    workers = max(int(workers), 1)
    seconds = settings.SEIZENET['FOLD_TIMEOUT'] if timeout is None else timeout
    wait_ms = max(int(seconds * 1000), 1)

    def enqueue(job):
        return async_task(
            'seizure.tasks.crossval_fold_task',
            str(dataset_dir), kind, job.repeat, job.fold, job.seed,
            train_cfg.as_dict(), model_cfg.as_dict(),
            group=f'crossval-{kind}',
        )

    def collect(job, task_id):
        task = fetch(task_id, wait=wait_ms)
        if task is None:
            raise TrainingError(
                f"Fold {job.fold} (repeat {job.repeat}) timed out after {seconds:g} s; "
                f"is a cluster running (python manage.py qcluster)?",
                fold=job.fold,
            )
        if not task.success:
            raise TrainingError(f"Fold {job.fold} (repeat {job.repeat}) failed: {task.result}", fold=job.fold)
        return task.result

    def runner(jobs):
        results = []
        for start in range(0, len(jobs), workers):
            batch = jobs[start:start + workers]
            task_ids = [enqueue(job) for job in batch]
            logger.info(f"Enqueued {len(task_ids)} fold tasks for {kind}")
            results.extend(collect(job, task_id) for job, task_id in zip(batch, task_ids))
        return results
    return runner
