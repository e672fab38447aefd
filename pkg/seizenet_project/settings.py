from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

DEBUG = config('DEBUG', default=True, cast=bool)

# Only used for Django internals (no web surface is served).
SECRET_KEY = config('SECRET_KEY', default='django-insecure-seizenet-desk-key-not-for-deployment')

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    # Third party
    'django_q',
    # Local
    'seizure',
]

# Database
# The run registry is small; SQLite is enough on a desk, PostgreSQL for shared servers.

DB_ENGINE = config('DB_ENGINE', default='sqlite3')

if DB_ENGINE == 'postgresql':
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.postgresql',
            'NAME': config('DB_NAME', default='seizenet_db'),
            'USER': config('DB_USER', default='seizenet'),
            'PASSWORD': config('DB_PASSWORD', default=''),
            'HOST': config('DB_HOST', default='localhost'),
            'PORT': config('DB_PORT', default='5432'),
            'OPTIONS': {
                'client_encoding': 'UTF8',
            },
            'CONN_MAX_AGE': config('DB_CONN_MAX_AGE', default=600, cast=int),
        }
    }
else:
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': config('DB_NAME', default=str(BASE_DIR / 'seizenet.sqlite3')),
        }
    }

# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

FOLD_TIMEOUT = config('SEIZENET_FOLD_TIMEOUT', default=3600, cast=int)

# Pipeline defaults (overridable per run by the config document and CLI flags)
SEIZENET = {
    'OUTPUT_DIR': Path(config('SEIZENET_OUTPUT_DIR', default=str(BASE_DIR / 'runs'))),
    'SEED': config('SEIZENET_SEED', default=0, cast=int),
    'JOBS': config('SEIZENET_JOBS', default=1, cast=int),
    # seconds to wait for one queued fold before giving up
    'FOLD_TIMEOUT': FOLD_TIMEOUT,
}

# Django Q configuration (cross-fold parallelism with --jobs > 1)
Q_CLUSTER = {
    'name': 'seizenet_cluster',
    'workers': config('SEIZENET_JOBS', default=1, cast=int),
    'recycle': 50,
    'timeout': FOLD_TIMEOUT,
    'retry': 2 * FOLD_TIMEOUT,
    'compress': True,
    'save_limit': 250,
    'queue_limit': 50,
    'label': 'Django Q',
    'orm': 'default',
    'sync': config('Q_SYNC', default=False, cast=bool),
}

# Logging Configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'seizure': {
            'handlers': ['console'],
            'level': config('LOG_LEVEL', default='INFO'),
            'propagate': False,
        },
    },
}
