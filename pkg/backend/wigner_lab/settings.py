"""
Django settings for the wigner_lab project.

The LABORATORY dict holds the harness defaults used by the ``rmt`` management
command and the HTTP views. Nothing here is read from the environment: runs
are configured by explicit flags and config files only.
"""

from pathlib import Path

BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = 'django-insecure-dev-key-change-in-production'

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = True

ALLOWED_HOSTS = ['*']


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'corsheaders',
    'laboratory',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'corsheaders.middleware.CorsMiddleware',
    'django.middleware.common.CommonMiddleware',
]

ROOT_URLCONF = 'wigner_lab.urls'

WSGI_APPLICATION = 'wigner_lab.wsgi.application'


# The lab stores nothing; the database only satisfies contrib.auth.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}


LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# CORS settings
CORS_ALLOWED_ORIGINS = [
    "http://localhost:8000",
    "http://127.0.0.1:8000",
]

CORS_ALLOW_ALL_ORIGINS = True  # For development only

# REST Framework settings
REST_FRAMEWORK = {
    'DEFAULT_RENDERER_CLASSES': [
        'rest_framework.renderers.JSONRenderer',
    ],
    'DEFAULT_PARSER_CLASSES': [
        'rest_framework.parsers.JSONParser',
    ],
    'DEFAULT_AUTHENTICATION_CLASSES': [],
    'DEFAULT_PERMISSION_CLASSES': [],
    'UNAUTHENTICATED_USER': None,
}

# Laboratory defaults
LABORATORY = {
    # None: one worker per logical core
    'DEFAULT_THREADS': None,
    'DEFAULT_OUTPUT_DIR': BASE_DIR / 'runs',
    # K = TRUNCATION_LOG_FACTOR * log n unless an ensemble fixes K
    'TRUNCATION_LOG_FACTOR': 10.0,
    'KS_DEFAULT_ALPHA': 0.01,
    'PROGRESS_EVERY': 10,
    # trials * sum(n_values) * ensembles accepted by POST /api/lab/experiments/
    'MAX_REQUEST_WORK': 20000,
}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'stderr': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'laboratory': {
            'handlers': ['stderr'],
            'level': 'INFO',
            'propagate': False,
        },
    },
}
