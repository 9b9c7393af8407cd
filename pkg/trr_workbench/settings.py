"""
=============================================================================
Django Settings for the Trimmed-Ridge Workbench
=============================================================================

This file contains all process-level configuration for the workbench.
Experiment-level knobs (antennas, SNR, solver hyperparameters...) live in
the flat `key = value` config files under presets/, not here.

ENVIRONMENT VARIABLES:
----------------------
Django:
    - DJANGO_SECRET_KEY    : Secret key (only used by Django internals)
    - DJANGO_DEBUG         : "0" to disable debug mode
    - DATABASE_URL         : Run registry database (SQLite fallback)

Workbench:
    - TRR_SEED             : Master seed, overrides the config file seed
    - TRR_THREADS          : Worker threads for sample-parallel sections
    - TRR_RUNS_DIR         : Parent directory for run artifacts
    - TRR_LOG_LEVEL        : Console log level for the beamspace logger
    - TRR_SLOW_TESTS       : "1" enables desk-scale acceptance tests

Author: TRR Workbench Team
=============================================================================
"""

import os
from pathlib import Path

import dj_database_url


# =============================================================================
# BASE CONFIGURATION
# =============================================================================

# Base directory of the project (parent of trr_workbench folder)
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv("DJANGO_SECRET_KEY", "dev-insecure-key")

DEBUG = os.getenv("DJANGO_DEBUG", "1") == "1"

ALLOWED_HOSTS = []


# =============================================================================
# INSTALLED APPLICATIONS
# =============================================================================

INSTALLED_APPS = [
    # Django built-in apps (the admin browses the run registry)
    "django.contrib.admin",
    "django.contrib.auth",
    "django.contrib.contenttypes",
    "django.contrib.sessions",
    "django.contrib.messages",
    "django.contrib.staticfiles",

    # Local apps
    "beamspace",                     # Channel model, solvers, UTRR, workbench CLI
]


# =============================================================================
# MIDDLEWARE CONFIGURATION
# =============================================================================

MIDDLEWARE = [
    "django.middleware.security.SecurityMiddleware",
    "django.contrib.sessions.middleware.SessionMiddleware",
    "django.middleware.common.CommonMiddleware",
    "django.middleware.csrf.CsrfViewMiddleware",
    "django.contrib.auth.middleware.AuthenticationMiddleware",
    "django.contrib.messages.middleware.MessageMiddleware",
    "django.middleware.clickjacking.XFrameOptionsMiddleware",
]


# =============================================================================
# URL & TEMPLATE CONFIGURATION
# =============================================================================

# Only the admin site is routed (`python manage.py runserver`, then /admin/)
ROOT_URLCONF = "trr_workbench.urls"

TEMPLATES = [
    {
        "BACKEND": "django.template.backends.django.DjangoTemplates",
        "DIRS": [],
        "APP_DIRS": True,
        "OPTIONS": {
            "context_processors": [
                "django.template.context_processors.debug",
                "django.template.context_processors.request",
                "django.contrib.auth.context_processors.auth",
                "django.contrib.messages.context_processors.messages",
            ],
        },
    }
]

STATIC_URL = "static/"


# =============================================================================
# DATABASE CONFIGURATION (run registry)
# =============================================================================

# Uses DATABASE_URL when set, falls back to a local SQLite file
DATABASES = {
    "default": dj_database_url.config(
        default=f"sqlite:///{BASE_DIR / 'db.sqlite3'}",
        conn_max_age=600,
    )
}

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"


# =============================================================================
# INTERNATIONALIZATION
# =============================================================================

LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True


# =============================================================================
# WORKBENCH SETTINGS
# =============================================================================

# Seed used when neither --seed, TRR_SEED nor the config file provides one
TRR_DEFAULT_SEED = 42

# Sample-parallel sections (dataset generation, solves, sweeps)
TRR_THREADS = int(os.getenv("TRR_THREADS", "1"))

# Where runs land when --out is not given
TRR_RUNS_DIR = Path(os.getenv("TRR_RUNS_DIR", str(BASE_DIR / "runs")))

# Shipped desk-scale presets
TRR_PRESETS_DIR = BASE_DIR / "presets"

# Desk-scale acceptance tests take minutes; opt in explicitly
TRR_SLOW_TESTS = os.getenv("TRR_SLOW_TESTS", "0") == "1"

TRR_LOG_LEVEL = os.getenv("TRR_LOG_LEVEL", "INFO").upper()


# =============================================================================
# LOGGING CONFIGURATION
# =============================================================================

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {
            "format": "%(asctime)s %(levelname)s %(name)s %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "plain",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": "WARNING",
    },
    "loggers": {
        "django": {
            "handlers": ["console"],
            "level": "INFO",
            "propagate": False,
        },
        # Workbench logging (per-run file handlers are attached at runtime)
        "beamspace": {
            "handlers": ["console"],
            "level": TRR_LOG_LEVEL,
            "propagate": False,
        },
    },
}
