"""
Shared base for the pipeline commands: the common flags, config resolution
and translation of pipeline errors into CommandError (nonzero exit).
"""
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from seizure.config import load_run_config
from seizure.exceptions import ConfigError, SeizureNetError
from seizure.networks import ModelKind
from seizure.training import STRATA


class PipelineCommand(BaseCommand):

    def add_arguments(self, parser):
        parser.add_argument('--config', type=str, help='RunConfig JSON document')
        parser.add_argument('--seed', type=int, help='Seed for every random choice')
        parser.add_argument('--out', type=str, help='Output directory')
        parser.add_argument('--jobs', type=int, default=None, help='Parallel folds (uses the task queue when > 1)')
        parser.add_argument('--model', type=str, choices=ModelKind.values, help='Model kind')
        parser.add_argument('--schema', type=str, help='Label schema: tuh8, epi4 or synthK')
        parser.add_argument('--strata', type=str, choices=STRATA, help='Cross-validation unit')

    def resolve_config(self, options):
        return load_run_config(options.get('config'), {
            'seed': options.get('seed'),
            'out': options.get('out'),
            'kind': options.get('model'),
            'schema': options.get('schema'),
            'strata': options.get('strata'),
        })

    def jobs(self, options) -> int:
        jobs = options.get('jobs')
        return int(settings.SEIZENET['JOBS'] if jobs is None else jobs)

    def handle(self, *args, **options):
        try:
            config = self.resolve_config(options)
            # --config is consumed by resolve_config; drop it so it does not clash with run(config)
            run_options = {k: v for k, v in options.items() if k != 'config'}
            self.run(config, *args, **run_options)
        except ConfigError as e:
            raise CommandError(f"Configuration error ({', '.join(e.key_paths)}): {e}")
        except SeizureNetError as e:
            raise CommandError(f"{type(e).__name__}: {e}")

    def run(self, config, *args, **options):
        raise NotImplementedError
