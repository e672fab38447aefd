from django.apps import AppConfig


class SeizureConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'seizure'
    verbose_name = 'Seizure type classification'
