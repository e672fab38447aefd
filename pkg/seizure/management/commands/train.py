"""
Train one model with a stratified holdout and write a checkpoint.

Usage:
    python manage.py train runs/dataset --model hybrid --out runs/train
"""
from seizure.management.base import PipelineCommand
from seizure.services.pipeline_service import PipelineService


class Command(PipelineCommand):
    help = 'Train a model on a dataset and save a checkpoint'

    def add_arguments(self, parser):
        parser.add_argument('dataset', type=str, help='Dataset directory')
        super().add_arguments(parser)

    def run(self, config, *args, **options):
        self.stdout.write(f"Training {config.model_kind.label} on {options['dataset']}...")
        result = PipelineService.train(options['dataset'], config)
        self.stdout.write(f"Parameters: {result['parameter_count']}")
        self.stdout.write(f"Epochs run: {result['epochs']}")
        self.stdout.write(f"Holdout weighted F1: {result['weighted_f1']:.4f} (macro {result['macro_f1']:.4f})")
        self.stdout.write(self.style.SUCCESS(f"✓ Checkpoint saved to {result['checkpoint']}"))
