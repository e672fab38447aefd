"""
Stratified k-fold cross-validation of one model kind.

Usage:
    python manage.py crossval runs/dataset --model hybrid --out runs/cv_hybrid
    python manage.py crossval runs/dataset --model cnn --compare-run 3
"""
from seizure.management.base import PipelineCommand
from seizure.services.pipeline_service import PipelineService
from seizure.services.report_service import ReportService


class Command(PipelineCommand):
    help = 'Cross-validate a model kind and store the fold scores'

    def add_arguments(self, parser):
        parser.add_argument('dataset', type=str, help='Dataset directory')
        parser.add_argument('--compare-run', type=int, help='Stored run id to compare fold scores against')
        super().add_arguments(parser)

    def run(self, config, *args, **options):
        cfg = config.train
        self.stdout.write(
            f"Cross-validating {config.model_kind.label}: {cfg.k} folds x {cfg.repeats}, strata={cfg.strata}"
        )
        result = PipelineService.crossval(
            options['dataset'], config, jobs=self.jobs(options), compare_run=options.get('compare_run')
        )
        cv = result['result']
        for fold in cv.folds:
            self.stdout.write(f"  repeat {fold.repeat} fold {fold.fold}: weighted F1 {fold.weighted_f1:.4f}")
        for name, test in result['comparisons'].items():
            self.stdout.write(f"Mann-Whitney vs {name}: U={test['u']:g} p={test['p_value']:.4g}")
        if result['comparison']:
            test = result['comparison']['mann_whitney']
            self.stdout.write(
                f"Mann-Whitney vs run {result['comparison']['other_run']}: U={test['u']:g} p={test['p_value']:.4g}"
            )
        self.stdout.write(ReportService.format_table(result['summary']))
        self.stdout.write(self.style.SUCCESS(f"✓ Run {result['run'].pk} saved, results at {result['results']}"))
