from django.core.exceptions import ImproperlyConfigured


class GeometryMismatch(ImproperlyConfigured):
    """Una imagen o un sinograma no encaja con la geometría del escaneo."""


class DenseAssemblyRefused(RuntimeError):
    """La matriz densa superaría el límite n·d permitido."""


class BacktrackCapHit(RuntimeError):
    """El line-search agotó max_backtracks sin cumplir la condición de descenso."""

    def __init__(self, backtracks: int, alpha: float):
        super().__init__(
            f"line-search no aceptó ningún paso tras {backtracks} reducciones (último alpha={alpha:.3e})"
        )
        self.backtracks = backtracks
        self.alpha = alpha


class ContainerError(ValueError):
    """Archivo .stomo ilegible: magic incorrecto, cabecera inválida o datos truncados."""
