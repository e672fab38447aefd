"""
Evaluate a checkpoint on a dataset (forward only).

Usage:
    python manage.py evaluate runs/train/checkpoint runs/train/holdout --out runs/eval
"""
from seizure.management.base import PipelineCommand
from seizure.services.pipeline_service import PipelineService


class Command(PipelineCommand):
    help = 'Evaluate a checkpoint on a dataset'

    def add_arguments(self, parser):
        parser.add_argument('checkpoint', type=str, help='Checkpoint directory')
        parser.add_argument('dataset', type=str, help='Dataset directory')
        super().add_arguments(parser)

    def run(self, config, *args, **options):
        result = PipelineService.evaluate(options['checkpoint'], options['dataset'], config)
        report = result['report']
        for index, name in enumerate(result['classes']):
            self.stdout.write(
                f"  {name:<28} P {report.precision[index]:.3f}  R {report.recall[index]:.3f}  "
                f"F1 {report.f1[index]:.3f}  n={report.support[index]}"
            )
        self.stdout.write(f"Mean latency: {result['latency_ms']:.3f} ms/sample")
        self.stdout.write(self.style.SUCCESS(
            f"✓ Weighted F1 {result['weighted_f1']:.4f}, macro F1 {result['macro_f1']:.4f}"
        ))
