"""
Generate a seeded synthetic EEG corpus (recordings + manifest.csv).

Usage:
    python manage.py synth --out runs/corpus --seed 0
"""
from seizure.management.base import PipelineCommand
from seizure.services.pipeline_service import PipelineService
from seizure.services.report_service import ReportService


class Command(PipelineCommand):
    help = 'Generate a synthetic seizure corpus'

    def run(self, config, *args, **options):
        self.stdout.write(f"Generating {config.synth.classes}-class synthetic corpus in {config.out}...")
        result = PipelineService.synth(config)
        self.stdout.write(ReportService.format_table(result['summary']))
        self.stdout.write(self.style.SUCCESS(
            f"✓ {result['recordings']} recordings, manifest at {result['manifest']}"
        ))
