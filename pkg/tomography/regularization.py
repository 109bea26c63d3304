"""
Término no suave ℛ y su operador proximal en forma cerrada.

    L1_NONNEG  μ||x||₁ + ι_{x≥0}   prox: max(v - αμ, 0)
    L1         μ||x||₁             prox: sign(v)·max(|v| - αμ, 0)
    NONNEG     ι_{x≥0}             prox: max(v, 0)
    ZERO       0                   prox: v
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from django.core.exceptions import ValidationError


class RegularizerKind(str, Enum):
    L1_NONNEG = 'l1_nonneg'
    L1 = 'l1'
    NONNEG = 'nonneg'
    ZERO = 'zero'


@dataclass(frozen=True)
class Regularizer:
    kind: RegularizerKind = RegularizerKind.L1_NONNEG
    mu: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'kind', RegularizerKind(self.kind))
        object.__setattr__(self, 'mu', float(self.mu))
        self.clean()

    def clean(self) -> None:
        if not (self.mu >= 0 and math.isfinite(self.mu)):
            raise ValidationError({'mu': f"mu debe ser finito y >= 0, llegó {self.mu}"})

    @classmethod
    def l1_nonneg(cls, mu: float) -> 'Regularizer':
        return cls(RegularizerKind.L1_NONNEG, mu)

    @classmethod
    def l1(cls, mu: float) -> 'Regularizer':
        return cls(RegularizerKind.L1, mu)

    @classmethod
    def nonneg(cls) -> 'Regularizer':
        return cls(RegularizerKind.NONNEG)

    @classmethod
    def zero(cls) -> 'Regularizer':
        return cls(RegularizerKind.ZERO)

    @property
    def constrained(self) -> bool:
        return self.kind in (RegularizerKind.L1_NONNEG, RegularizerKind.NONNEG)

    @property
    def weighted(self) -> bool:
        return self.kind in (RegularizerKind.L1_NONNEG, RegularizerKind.L1)

    def __str__(self) -> str:
        return f"{self.kind.value}(mu={self.mu:g})" if self.weighted else self.kind.value


def _finite(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contiene valores no finitos")
    return v


def prox(reg: Regularizer, v, step: float) -> np.ndarray:
    """argmin_u αℛ(u) + ½||u - v||², componente a componente. No modifica ``v``."""
    if not step > 0:
        raise ValueError(f"El paso del prox debe ser > 0, llegó {step}")
    v = _finite(v, 'v')
    threshold = step * reg.mu
    if reg.kind is RegularizerKind.L1_NONNEG:
        return np.maximum(v - threshold, 0.0)
    if reg.kind is RegularizerKind.L1:
        return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)
    if reg.kind is RegularizerKind.NONNEG:
        return np.maximum(v, 0.0)
    return v.copy()


def is_feasible(reg: Regularizer, x) -> bool:
    if not reg.constrained:
        return True
    # Tolerancia cero: el indicador es estricto
    return bool(np.all(np.asarray(x) >= 0.0))


def evaluate(reg: Regularizer, x) -> float:
    """ℛ(x); ``math.inf`` si x viola la restricción de no negatividad."""
    x = _finite(x, 'x')
    if not is_feasible(reg, x):
        return math.inf
    if reg.weighted:
        return reg.mu * float(np.abs(x).sum())
    return 0.0
