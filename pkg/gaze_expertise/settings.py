"""
Django settings for gaze_expertise project.

The project has no web surface. Django provides the settings layer, the
management commands that run the pipeline stages, and the ORM for the
trial registry.

For more information on this file, see
https://docs.djangoproject.com/en/6.0/topics/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get('GAZE_SECRET_KEY', 'gaze-expertise-local-only')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'core',
]


# Database
# https://docs.djangoproject.com/en/6.0/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

TIME_ZONE = 'UTC'

USE_TZ = True


# Logging
# https://docs.djangoproject.com/en/6.0/topics/logging/

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'core': {
            'handlers': ['console'],
            'level': os.environ.get('GAZE_LOG_LEVEL', 'INFO'),
        },
    },
}


# Pipeline defaults. Values are the ones used in the goalkeeper study unless
# the comment says otherwise; a TOML file passed with --config overrides them.

GAZE_PIPELINE = {
    # ingest
    'min_ratio': 0.75,              # trials below 75% tracking ratio are dropped
    'nominal_period_ms': 4.0,       # 250 Hz eye tracker

    # geometry: 2400 px <-> 225 deg horizontally, 1000 px <-> 187.5 deg vertically
    'px_per_deg_x': 2400 / 225,
    'px_per_deg_y': 1000 / 187.5,

    # event detection
    'peak_threshold': 40.0,         # deg/s
    'min_fix_dur': 50.0,            # ms
    'sp_dispersion': 100.0,         # px, "more than 100 px" is a smooth pursuit
    'dispersion_metric': 'bbox',    # not stated in the study; 'bbox' or 'pairwise'
    'max_bridge_samples': 3,        # not stated in the study

    # cleaning
    'max_velocity': 1000.0,         # deg/s
    'max_accel': 100000.0,          # deg/s^2
    'max_decel': 100000.0,          # deg/s^2

    # model
    'kernel': 'linear',             # not stated in the study
    'gamma': 1.0,                   # RBF only
    'C': 1.0,                       # not stated in the study; sweep 0.1, 1, 10
    'C_sweep': [0.1, 1.0, 10.0],
    'tol': 1e-3,
    'max_passes': 100000,
    'k': 50,                        # folds in the training cross-validation
    'n_train': 8,                   # participants per class used for training
    'n_holdout': 2,                 # participants per class held out

    # protocol
    'runs': 1000,
    'alpha': 0.0011,                # 0.11%; the text also quotes p < 0.011
    'top_m': 7,
    'mff_threshold': 0.5,
    'flip_iterations': 100,

    # synthetic data (fixture calibration, not study values)
    'synth_participants': {'Novice': 13, 'Intermediate': 10, 'Expert': 12},
    'synth_trials': 52,
    'synth_sigma_p': 0.5,
    'synth_events_per_trial': 10,

    'seed': 20211,
    'jobs': 1,
    'out_dir': 'artifacts',
    'gaze_csv': 'gaze.csv',
    'schema': None,
}
