"""
Django settings for the stomo project.

Solo se usa la parte de Django que sirve a una herramienta de línea de comandos:
settings por variables de entorno, management commands, logging y el test runner.
No hay base de datos, vistas ni archivos estáticos.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


def _env_bool(name: str, default: str = 'false') -> bool:
    return os.environ.get(name, default).lower() in ('1', 'true', 'yes')


# No hay sesiones ni formularios; la clave solo existe porque Django la exige.
SECRET_KEY = os.environ.get('SECRET_KEY', 'stomo-insecure-cli-only-key')

DEBUG = _env_bool('DEBUG')

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'tomography',
]

# Sin base de datos: los comandos leen y escriben contenedores binarios en disco.
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Reconstrucción
# --threads tiene prioridad sobre STOMO_THREADS
STOMO_THREADS = max(1, int(os.environ.get('STOMO_THREADS', '1') or '1'))

# Directorio de salida por defecto (--out-dir tiene prioridad)
STOMO_OUT_DIR = Path(os.environ.get('STOMO_OUT_DIR', '') or BASE_DIR / 'runs')

# Límite n·d para ensamblar la matriz densa (solo oráculos de test)
STOMO_DENSE_LIMIT = int(os.environ.get('STOMO_DENSE_LIMIT', str(10**6)))

# Calibración del reloj de trabajo: segundos por proyección de un ángulo
STOMO_SECONDS_PER_BLOCK = float(os.environ.get('STOMO_SECONDS_PER_BLOCK', '1e-3'))

STOMO_LOG_LEVEL = os.environ.get('STOMO_LOG_LEVEL', 'DEBUG' if DEBUG else 'WARNING').upper()


# Logging
# Los logs van a stderr; los artefactos (volúmenes, trazas, tablas) nunca los incluyen.
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '{levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'tomography': {
            'handlers': ['console'],
            'level': STOMO_LOG_LEVEL,
            'propagate': False,
        },
    },
}
