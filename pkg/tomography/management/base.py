"""
Base común de los comandos de reconstrucción: opciones compartidas, resolución
de hilos y directorio de salida, y traducción de errores a códigos de salida.

Códigos de salida:
  0  éxito
  2  error de configuración (incluye archivo de configuración inexistente)
  3  el solver abortó (tope de backtracking)
  4  error de entrada/salida
"""
from __future__ import annotations

import os
from contextlib import contextmanager
from pathlib import Path

from django.conf import settings
from django.core.exceptions import ImproperlyConfigured, ValidationError
from django.core.management.base import BaseCommand, CommandError

from tomography.exceptions import ContainerError
from tomography.experiments import SCALES, ExperimentConfig, case_config, load_config

EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4


def describe_validation_error(exc: ValidationError) -> str:
    if hasattr(exc, 'error_dict'):
        return "; ".join(f"{field}: {' '.join(messages)}" for field, messages in exc.message_dict.items())
    return " ".join(exc.messages)


@contextmanager
def exit_codes():
    """Convierte las excepciones del dominio en CommandError con el código estable."""
    try:
        yield
    except CommandError:
        raise
    except ContainerError as exc:
        raise CommandError(f"Contenedor inválido: {exc}", returncode=EXIT_IO) from exc
    except OSError as exc:
        raise CommandError(f"Error de E/S: {exc}", returncode=EXIT_IO) from exc
    except ValidationError as exc:
        raise CommandError(f"Configuración inválida: {describe_validation_error(exc)}", returncode=EXIT_CONFIG) from exc
    except (ImproperlyConfigured, ValueError) as exc:
        raise CommandError(f"Configuración inválida: {exc}", returncode=EXIT_CONFIG) from exc


class StomoCommand(BaseCommand):
    # Opciones compartidas que acepta cada comando
    shared_options = ('config', 'seed', 'threads', 'out_dir', 'scale')

    def add_arguments(self, parser):
        if 'config' in self.shared_options:
            parser.add_argument(
                "--config",
                dest="config",
                default=None,
                help="Archivo TOML del experimento (por defecto: caso 1 incorporado a la escala --scale)",
            )
        if 'seed' in self.shared_options:
            parser.add_argument(
                "--seed",
                dest="seed",
                type=int,
                default=None,
                help="Semilla (entero >= 0); se derivan semillas independientes para ruido y solver",
            )
        if 'threads' in self.shared_options:
            parser.add_argument(
                "--threads",
                dest="threads",
                type=int,
                default=None,
                help="Hilos para aplicar el proyector (por defecto: STOMO_THREADS o 1)",
            )
        if 'out_dir' in self.shared_options:
            parser.add_argument(
                "--out-dir",
                dest="out_dir",
                default=None,
                help="Directorio de salida (por defecto: STOMO_OUT_DIR o ./runs)",
            )
        if 'scale' in self.shared_options:
            parser.add_argument(
                "--scale",
                dest="scale",
                choices=SCALES,
                default="desk",
                help="desk = 128² en haz paralelo 2D; small3d = 48³ en haz cónico",
            )

    def resolve_threads(self, options) -> int:
        threads = options.get("threads")
        if threads is None:
            threads = getattr(settings, "STOMO_THREADS", 1)
        if threads < 1:
            raise CommandError("--threads debe ser >= 1", returncode=EXIT_CONFIG)
        return threads

    def resolve_out_dir(self, options) -> Path:
        out_dir = Path(options.get("out_dir") or settings.STOMO_OUT_DIR)
        if not out_dir.is_absolute():
            out_dir = Path(os.getcwd()) / out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        return out_dir

    def resolve_seed(self, options, default: int = 0) -> int:
        seed = options.get("seed")
        if seed is None:
            return default
        if seed < 0:
            raise CommandError("--seed debe ser >= 0", returncode=EXIT_CONFIG)
        return seed

    def load_experiment(self, options) -> ExperimentConfig:
        config_path = options.get("config")
        if config_path:
            path = Path(config_path)
            if not path.is_file():
                raise CommandError(f"No se encontró el archivo de configuración: {path}", returncode=EXIT_CONFIG)
            if options.get("scale") not in (None, "desk"):
                self.stdout.write(self.style.WARNING("--scale se ignora cuando se indica --config"))
            config = load_config(path)
        else:
            config = case_config(1, options.get("scale") or "desk")
        return config.with_seed(self.resolve_seed(options, config.run.seed))
