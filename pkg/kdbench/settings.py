import os
from pathlib import Path
from dotenv import load_dotenv

BASE_DIR = Path(__file__).resolve().parent.parent
load_dotenv(BASE_DIR / ".env")

SECRET_KEY = os.getenv("DJANGO_KEY", "angular-kd-local-only")

DEBUG = os.getenv("DJANGO_DEBUG", "false").lower() == "true"

ALLOWED_HOSTS = []

# Experiment outputs and process-level knobs
ANGULAR_KD_OUTPUT_DIR = Path(os.getenv("ANGULAR_KD_OUTPUT_DIR", BASE_DIR / "runs"))
ANGULAR_KD_LOG_LEVEL = os.getenv("ANGULAR_KD_LOG_LEVEL", "INFO").upper()
ANGULAR_KD_WORKERS = int(os.getenv("ANGULAR_KD_WORKERS", "1"))

# Application definition

INSTALLED_APPS = [
    'angular_kd',
]

# Commands and tests never touch a database
DATABASES = {}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'angular_kd': {
            'handlers': ['console'],
            'level': ANGULAR_KD_LOG_LEVEL,
            'propagate': False,
        },
    },
}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'
