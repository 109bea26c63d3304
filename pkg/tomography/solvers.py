"""
FB-LISA: forward-backward estocástico con búsqueda de línea por backtracking y
tamaño de mini-batch creciente predeterminado. Incluye las líneas base FB (paso
fijo, gradiente completo) y prox-SGD (mini-batch fijo N0).

Cada época t:
  1. N_t = min{n_max, max{ceil(C / ε_{k̂ + ceil(n_θ/N_{t-1})}), N0}}, sin bajar de N_{t-1}
  2. ceil(n_θ/N_t) iteraciones internas:
       muestrear S_k (|S_k| = N_t), calcular f_S y ∇f_S en x_k,
       backtracking desde α0 hasta cumplir la condición de descenso suficiente,
       x_{k+1} = prox_{αℛ}(x_k - α ∇f_S(x_k)).
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

from tomography import regularization
from tomography.exceptions import BacktrackCapHit
from tomography.geometry import AngleSubset, ImageGrid, ScanGeometry, Sinogram
from tomography.operators import BlockLeastSquares
from tomography.regularization import Regularizer

logger = logging.getLogger(__name__)

# Tolerancia relativa del techo en el tamaño de batch: C/ε = 8.000000001 cuenta como 8
CEIL_GUARD = 1e-9

METHODS = ('fblisa', 'fb', 'proxsgd')
TELEMETRY_LEVELS = ('basic', 'full')


class Termination(str, Enum):
    EPOCHS_EXHAUSTED = 'epochs_exhausted'
    TIME_BUDGET = 'time_budget'
    BACKTRACK_CAP_HIT = 'backtrack_cap_hit'


@dataclass(frozen=True)
class SolverConfig:
    alpha0: float = 1e-3
    beta: float = 0.5
    N0: int = 8
    n_max: int | None = None  # None: n_θ
    C: float | None = None  # None: N0·r^ceil(n_θ/N0), primera época en N0
    eps_ratio: float = 0.99
    mu: float = 1.0
    epochs: int = 10
    time_budget: float | None = None
    max_backtracks: int = 60
    seed: int = 0
    alpha_max: float | None = None  # None: alpha0
    telemetry: str = 'basic'
    lipschitz_estimate: float | None = None

    def clean(self, n_theta: int | None = None) -> None:
        errors = {}
        if not (self.alpha0 > 0 and math.isfinite(self.alpha0)):
            errors['alpha0'] = "alpha0 debe ser > 0."
        if not 0 < self.beta < 1:
            errors['beta'] = "beta debe estar en (0, 1)."
        if self.N0 < 1:
            errors['N0'] = "N0 debe ser >= 1."
        if self.n_max is not None and self.n_max < self.N0:
            errors['n_max'] = f"n_max ({self.n_max}) debe ser >= N0 ({self.N0})."
        if n_theta is not None:
            if self.N0 > n_theta:
                errors['N0'] = f"N0 ({self.N0}) supera el número de ángulos ({n_theta})."
            if self.n_max is not None and self.n_max > n_theta:
                errors['n_max'] = f"n_max ({self.n_max}) supera el número de ángulos ({n_theta})."
        if self.C is not None and not self.C > 0:
            errors['C'] = "C debe ser > 0."
        if not 0 < self.eps_ratio < 1:
            errors['eps_ratio'] = "eps_ratio debe estar en (0, 1)."
        if not self.mu >= 0:
            errors['mu'] = "mu debe ser >= 0."
        if self.epochs < 1:
            errors['epochs'] = "epochs debe ser >= 1."
        if self.time_budget is not None and not self.time_budget > 0:
            errors['time_budget'] = "time_budget debe ser > 0."
        if self.max_backtracks < 0:
            errors['max_backtracks'] = "max_backtracks debe ser >= 0."
        if self.alpha_max is not None and not self.alpha_max > 0:
            errors['alpha_max'] = "alpha_max debe ser > 0."
        if self.telemetry not in TELEMETRY_LEVELS:
            errors['telemetry'] = f"telemetry debe ser uno de {TELEMETRY_LEVELS}."
        if self.lipschitz_estimate is not None and not self.lipschitz_estimate > 0:
            errors['lipschitz_estimate'] = "lipschitz_estimate debe ser > 0."
        if errors:
            raise ValidationError(errors)

        if self.lipschitz_estimate and self.alpha0 > 1.0 / (2.0 * self.lipschitz_estimate):
            message = (
                f"alpha0={self.alpha0:g} supera 1/(2L)={1.0 / (2.0 * self.lipschitz_estimate):g}; "
                "la búsqueda de línea sigue garantizando descenso por iteración"
            )
            logger.warning(message)
            warnings.warn(message, RuntimeWarning, stacklevel=2)

    def resolved(self, n_theta: int) -> 'SolverConfig':
        """Copia validada con n_max, C y alpha_max concretos para ``n_theta`` ángulos."""
        self.clean(n_theta)
        n_max = n_theta if self.n_max is None else self.n_max
        C = self.C
        if C is None:
            C = self.N0 * self.eps_ratio ** math.ceil(n_theta / self.N0)
        alpha_max = self.alpha0 if self.alpha_max is None else self.alpha_max
        return dataclasses.replace(self, n_max=n_max, C=C, alpha_max=alpha_max)


@dataclass(frozen=True)
class IterationRecord:
    k: int
    t: int
    batch_size: int
    alpha_accepted: float
    backtracks: int
    sub_objective: float
    full_objective: float | None
    grad_map_norm: float
    elapsed: float


@dataclass(frozen=True)
class SolverResult:
    x_final: ImageGrid | np.ndarray
    trace: tuple[IterationRecord, ...]
    termination: Termination
    snapshots: dict = field(default_factory=dict)

    @property
    def aborted(self) -> bool:
        return self.termination is Termination.BACKTRACK_CAP_HIT

    def batch_sizes(self) -> list[int]:
        return [record.batch_size for record in self.trace]


class WallClock:
    """Segundos reales desde el inicio de la corrida."""

    def start(self, problem: BlockLeastSquares) -> None:
        self._started = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self._started


class WorkClock:
    """
    Tiempo modelado: aplicaciones de bloque (A_i o A_iᵀ) × segundos por bloque.

    Hace deterministas el presupuesto de tiempo, los checkpoints y la columna
    elapsed_s de la traza.
    """

    def __init__(self, seconds_per_block: float | None = None):
        if seconds_per_block is None:
            seconds_per_block = getattr(settings, 'STOMO_SECONDS_PER_BLOCK', 1e-3)
        if not seconds_per_block > 0:
            raise ValueError("seconds_per_block debe ser > 0")
        self.seconds_per_block = float(seconds_per_block)

    def start(self, problem: BlockLeastSquares) -> None:
        self._problem = problem
        self._base = problem.applications

    def elapsed(self) -> float:
        return (self._problem.applications - self._base) * self.seconds_per_block


def make_clock(name: str, seconds_per_block: float | None = None):
    if name == 'work':
        return WorkClock(seconds_per_block)
    if name == 'wall':
        return WallClock()
    raise ValueError(f"Reloj desconocido: {name!r} (use 'work' o 'wall')")


def _ceil(value: float) -> int:
    nearest = round(value)
    if abs(value - nearest) <= CEIL_GUARD * max(1.0, abs(value)):
        return int(nearest)
    return math.ceil(value)


def batch_schedule(t: int, n_prev: int, k_hat: int, cfg: SolverConfig, n_theta: int) -> int:
    """
    Tamaño N_t de la época ``t`` (1-based). ``k_hat`` es el número de iteraciones
    ya ejecutadas; en la primera época n_prev = N0 y k_hat = 0.
    """
    if t < 1 or n_prev < 1 or k_hat < 0:
        raise ValueError(f"Argumentos inválidos: t={t}, n_prev={n_prev}, k_hat={k_hat}")
    cfg = cfg.resolved(n_theta) if cfg.C is None or cfg.n_max is None else cfg
    index = k_hat + math.ceil(n_theta / n_prev)
    eps = cfg.eps_ratio ** index
    if eps == 0.0:
        return cfg.n_max
    wanted = cfg.C / eps
    if wanted >= cfg.n_max:
        return cfg.n_max
    return min(cfg.n_max, max(_ceil(wanted), cfg.N0))


def sample_minibatch(rng: np.random.Generator, n_theta: int, size: int) -> AngleSubset:
    """``size`` ángulos distintos, uniforme entre los subconjuntos de ese tamaño."""
    if not 1 <= size <= n_theta:
        raise ValueError(f"Tamaño de batch {size} fuera de [1, {n_theta}]")
    if size == n_theta:
        return AngleSubset.full(n_theta)
    return AngleSubset.of(rng.choice(n_theta, size=size, replace=False), n_theta)


def line_search(
    problem: BlockLeastSquares,
    x: np.ndarray,
    subset: AngleSubset,
    alpha_start: float,
    reg: Regularizer,
    cfg: SolverConfig,
    *,
    grad: np.ndarray | None = None,
) -> tuple[np.ndarray, float, int]:
    """
    Backtracking α ← βα desde ``alpha_start`` hasta que

        f_S(x̄) <= f_S(x) + ∇f_S(x)ᵀ(x̄ - x) + ||x̄ - x||² / (2α)

    con x̄ = prox_{αℛ}(x - α∇f_S(x)). La igualdad se acepta.
    Devuelve (x̄, α aceptado, número de reducciones).

    f_S es cuadrática, así que la condición equivale a
    (n_theta/|S|)·||A_S(x̄ - x)||² <= ||x̄ - x||² / α. Se evalúa en esa forma:
    restar f_S(x̄) - f_S(x) pierde toda la precisión cuando el paso es pequeño.
    """
    if not alpha_start > 0:
        raise ValueError(f"alpha_start debe ser > 0, llegó {alpha_start}")
    if grad is None:
        _, grad = problem.value_and_grad(x, subset)

    alpha = alpha_start
    for backtracks in range(cfg.max_backtracks + 1):
        x_bar = regularization.prox(reg, x - alpha * grad, alpha)
        step = x_bar - x
        if problem.curvature(step, subset) <= float(np.dot(step, step)) / alpha:
            return x_bar, alpha, backtracks
        alpha *= cfg.beta
    raise BacktrackCapHit(cfg.max_backtracks + 1, alpha)


def full_objective(problem: BlockLeastSquares, x: np.ndarray, reg: Regularizer) -> float:
    """F(x) = ½||Ax - b||² + ℛ(x); ``math.inf`` si x no es factible."""
    penalty = regularization.evaluate(reg, x)
    if math.isinf(penalty):
        return math.inf
    return problem.full_value(x) + penalty


def sinogram_objective(x: ImageGrid, b: Sinogram, geom: ScanGeometry, reg: Regularizer, *, threads: int = 1) -> float:
    """``full_objective`` para una imagen y un sinograma adquirido con ``geom``."""
    if b.geometry != geom:
        raise ValueError("El sinograma fue adquirido con otra geometría")
    geom.check_layout(x.layout)
    problem = BlockLeastSquares.from_sinogram(b, x.layout, threads=threads)
    return full_objective(problem, x.values, reg)


class _Snapshots:
    def __init__(self, marks: Iterable[float]):
        self.pending = sorted(set(float(m) for m in marks))
        self.taken: dict[float, np.ndarray] = {}

    def offer(self, elapsed: float, x: np.ndarray) -> None:
        while self.pending and elapsed >= self.pending[0]:
            self.taken[self.pending.pop(0)] = x.copy()

    def close(self, x: np.ndarray) -> dict[float, np.ndarray]:
        for mark in self.pending:
            self.taken[mark] = x.copy()
        self.pending = []
        return dict(sorted(self.taken.items()))


def solve(
    problem: BlockLeastSquares,
    x0: np.ndarray,
    reg: Regularizer,
    cfg: SolverConfig,
    *,
    method: str = 'fblisa',
    clock=None,
    checkpoints: Sequence[float] = (),
    callback: Callable[[IterationRecord, np.ndarray], None] | None = None,
) -> SolverResult:
    """Ejecuta ``method`` sobre un problema por bloques; ``x_final`` es un arreglo."""
    if method not in METHODS:
        raise ValueError(f"Método desconocido {method!r}; opciones: {', '.join(METHODS)}")
    n_theta = problem.n_blocks
    cfg = cfg.resolved(n_theta)
    x = np.array(x0, dtype=np.float64).ravel()
    if x.size != problem.dim:
        raise ValueError(f"x0 tiene {x.size} componentes; el problema tiene {problem.dim}")

    if method == 'fb' and cfg.lipschitz_estimate and cfg.alpha0 > 2.0 / cfg.lipschitz_estimate:
        message = f"FB con alpha={cfg.alpha0:g} > 2/L={2.0 / cfg.lipschitz_estimate:g}: la iteración puede divergir"
        logger.warning(message)
        warnings.warn(message, RuntimeWarning, stacklevel=2)

    rng = np.random.default_rng(cfg.seed)
    clock = clock or WorkClock()
    clock.start(problem)
    snapshots = _Snapshots(checkpoints)
    alpha_start = min(cfg.alpha0, cfg.alpha_max)

    trace: list[IterationRecord] = []
    termination = Termination.EPOCHS_EXHAUSTED
    k = 0
    n_prev = cfg.N0
    initial_objective = None
    divergence_warned = False

    for t in range(1, cfg.epochs + 1):
        if method == 'fb':
            n_t = n_theta
        elif method == 'proxsgd':
            n_t = cfg.N0
        else:
            # La fórmula puede bajar tras un salto grande de N; se conserva el tamaño previo
            n_t = max(batch_schedule(t, n_prev, k, cfg, n_theta), n_prev)
        inner = math.ceil(n_theta / n_t)

        for _ in range(inner):
            if trace and cfg.time_budget is not None and clock.elapsed() >= cfg.time_budget:
                termination = Termination.TIME_BUDGET
                break
            subset = sample_minibatch(rng, n_theta, n_t)
            value, grad = problem.value_and_grad(x, subset)
            if method == 'fb':
                alpha, backtracks = cfg.alpha0, 0
                x_bar = regularization.prox(reg, x - alpha * grad, alpha)
            else:
                try:
                    x_bar, alpha, backtracks = line_search(
                        problem, x, subset, alpha_start, reg, cfg, grad=grad
                    )
                except BacktrackCapHit as exc:
                    logger.warning(
                        "Iteración %d: %d reducciones sin aceptar (alpha=%.3e); corrida abortada",
                        k, exc.backtracks, exc.alpha,
                    )
                    termination = Termination.BACKTRACK_CAP_HIT
                    break

            full = full_objective(problem, x, reg) if cfg.telemetry == 'full' else None
            if method == 'fb':
                current = value + regularization.evaluate(reg, x)
                if initial_objective is None:
                    initial_objective = current
                elif current > initial_objective and not divergence_warned:
                    message = f"FB: el objetivo subió sobre su valor inicial en la iteración {k} ({current:.6e})"
                    logger.warning(message)
                    warnings.warn(message, RuntimeWarning, stacklevel=2)
                    divergence_warned = True

            record = IterationRecord(
                k=k,
                t=t,
                batch_size=n_t,
                alpha_accepted=alpha,
                backtracks=backtracks,
                sub_objective=value,
                full_objective=full,
                grad_map_norm=float(np.linalg.norm(x - x_bar)) / alpha,
                elapsed=clock.elapsed(),
            )
            x = x_bar
            trace.append(record)
            snapshots.offer(record.elapsed, x)
            if callback is not None:
                callback(record, x)
            k += 1

        if termination is not Termination.EPOCHS_EXHAUSTED:
            break
        logger.info(
            "%s época %d: N_t=%d, %d iteraciones, f_S=%.6e",
            method, t, n_t, inner, trace[-1].sub_objective,
        )
        n_prev = n_t

    if not trace:
        # Solo ocurre si la primera iteración aborta: el registro deja constancia de x0
        trace.append(IterationRecord(
            k=0,
            t=1,
            batch_size=n_t,
            alpha_accepted=cfg.alpha0,
            backtracks=cfg.max_backtracks + 1,
            sub_objective=value,
            full_objective=None,
            grad_map_norm=math.nan,
            elapsed=clock.elapsed(),
        ))
    return SolverResult(x, tuple(trace), termination, snapshots.close(x))


def _run(method: str, b: Sinogram, geom: ScanGeometry, x0: ImageGrid, reg: Regularizer, cfg: SolverConfig, **kwargs):
    if b.geometry != geom:
        raise ValueError("El sinograma fue adquirido con otra geometría")
    geom.check_layout(x0.layout)
    threads = kwargs.pop('threads', 1)
    problem = BlockLeastSquares.from_sinogram(b, x0.layout, threads=threads)
    result = solve(problem, x0.values, reg, cfg, method=method, **kwargs)
    return dataclasses.replace(
        result,
        x_final=x0.with_values(result.x_final),
        snapshots={mark: x0.with_values(x) for mark, x in result.snapshots.items()},
    )


def fblisa_run(b: Sinogram, geom: ScanGeometry, x0: ImageGrid, reg: Regularizer, cfg: SolverConfig, **kwargs) -> SolverResult:
    return _run('fblisa', b, geom, x0, reg, cfg, **kwargs)


def fb_run(b: Sinogram, geom: ScanGeometry, x0: ImageGrid, reg: Regularizer, cfg: SolverConfig, **kwargs) -> SolverResult:
    """Gradiente proximal completo con paso fijo cfg.alpha0 y sin búsqueda de línea."""
    return _run('fb', b, geom, x0, reg, cfg, **kwargs)


def proxsgd_run(b: Sinogram, geom: ScanGeometry, x0: ImageGrid, reg: Regularizer, cfg: SolverConfig, **kwargs) -> SolverResult:
    """Como FB-LISA pero con mini-batch constante N0."""
    return _run('proxsgd', b, geom, x0, reg, cfg, **kwargs)


RUNNERS = {'fblisa': fblisa_run, 'fb': fb_run, 'proxsgd': proxsgd_run}


TRACE_FIELDS = (
    'k', 't', 'batch_size', 'alpha_accepted', 'backtracks',
    'sub_objective', 'full_objective', 'grad_map_norm', 'elapsed_s',
)


def _format_float(value: float | None) -> str:
    return '' if value is None else repr(float(value))


def write_trace_csv(path, trace: Sequence[IterationRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS, lineterminator='\n')
        writer.writeheader()
        for record in trace:
            writer.writerow({
                'k': record.k,
                't': record.t,
                'batch_size': record.batch_size,
                'alpha_accepted': _format_float(record.alpha_accepted),
                'backtracks': record.backtracks,
                'sub_objective': _format_float(record.sub_objective),
                'full_objective': _format_float(record.full_objective),
                'grad_map_norm': _format_float(record.grad_map_norm),
                'elapsed_s': _format_float(record.elapsed),
            })
    return path


def read_trace_csv(path) -> list[IterationRecord]:
    with Path(path).open(newline='', encoding='utf-8') as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_FIELDS:
            raise ValueError(f"{path}: encabezado de traza inesperado {reader.fieldnames}")
        return [
            IterationRecord(
                k=int(row['k']),
                t=int(row['t']),
                batch_size=int(row['batch_size']),
                alpha_accepted=float(row['alpha_accepted']),
                backtracks=int(row['backtracks']),
                sub_objective=float(row['sub_objective']),
                full_objective=float(row['full_objective']) if row['full_objective'] else None,
                grad_map_norm=float(row['grad_map_norm']),
                elapsed=float(row['elapsed_s']),
            )
            for row in reader
        ]
