"""
Turn a corpus manifest into a dataset of (32, 9, 19) STFT samples.

Usage:
    python manage.py preprocess runs/corpus/manifest.csv --out runs/dataset
"""
from seizure.management.base import PipelineCommand
from seizure.services.pipeline_service import PipelineService
from seizure.services.report_service import ReportService


class Command(PipelineCommand):
    help = 'Preprocess a manifest into an STFT dataset'

    def add_arguments(self, parser):
        parser.add_argument('manifest', type=str, help='Manifest CSV')
        super().add_arguments(parser)

    def run(self, config, *args, **options):
        result = PipelineService.preprocess(options['manifest'], config)
        for error in result['errors']:
            self.stdout.write(self.style.WARNING(f"⚠ {error['file']}: {error['error']}"))
        self.stdout.write(ReportService.format_table(result['summary']))
        self.stdout.write(f"Sample shape: {result['shape']}")
        self.stdout.write(self.style.SUCCESS(f"✓ {result['samples']} samples written to {result['dataset']}"))
