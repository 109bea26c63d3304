"""
Configuración de experimentos (archivos TOML) y el pipeline simular → reconstruir
→ evaluar que usan los management commands.

Secciones: [phantom] [geometry] [noise] [simulation] [solver] [outputs] [run].
Claves o secciones desconocidas son errores de configuración.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from django.core.exceptions import ValidationError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from tomography import metrics
from tomography.geometry import GeometryKind, GridLayout, ImageGrid, ScanGeometry, Sinogram, desk_geometry, make_angles
from tomography.regularization import Regularizer
from tomography.simulation import NoiseSpec, PhantomKind, PhantomSpec, make_phantom, simulate_scan
from tomography.solvers import METHODS, RUNNERS, IterationRecord, SolverConfig, SolverResult, make_clock

logger = logging.getLogger(__name__)

SCALES = ('desk', 'small3d')
CLOCKS = ('work', 'wall')
CASE_IDS = (1, 2, 3)
CASE_METHODS = ('fblisa', 'proxsgd', 'fb')
CASE_EPOCHS = 15
# Paso fijo de la línea base FB
FB_ALPHA = 1e-5
CHECKPOINT_FRACTIONS = (1 / 3, 1 / 2, 1.0)

TABLE_FIELDS = ('method', 'checkpoint_s', 're', 'psnr_db', 'ssim')
CURVE_FIELDS = ('method', 'seed', 'elapsed_s', 're')


@dataclass(frozen=True)
class GeometrySpec:
    kind: GeometryKind = GeometryKind.PARALLEL_2D
    n_theta: int = 36
    det_cols: int | None = None
    det_rows: int | None = None
    detector_spacing: float | None = None
    source_distance: float | None = None
    detector_distance: float | None = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', GeometryKind(self.kind))
        if self.n_theta < 1:
            raise ValidationError({'n_theta': "n_theta debe ser >= 1."})

    def build(self, layout: GridLayout) -> ScanGeometry:
        return desk_geometry(
            self.kind,
            make_angles(self.n_theta),
            layout,
            det_cols=self.det_cols,
            det_rows=self.det_rows,
            detector_spacing=self.detector_spacing,
            source_distance=self.source_distance,
            detector_distance=self.detector_distance,
        )


@dataclass(frozen=True)
class OutputSpec:
    phantom: str = 'phantom.stomo'
    sinogram: str = 'sinogram.stomo'
    volume: str = 'recon.stomo'
    trace: str = 'trace.csv'
    preview: str = 'recon.png'
    metrics: str = 'metrics.txt'

    def clean(self) -> None:
        empty = [f.name for f in dataclasses.fields(self) if not getattr(self, f.name)]
        if empty:
            raise ValidationError({name: "El nombre de archivo no puede estar vacío." for name in empty})


@dataclass(frozen=True)
class RunSpec:
    seed: int = 0
    clock: str = 'work'
    seconds_per_block: float | None = None
    checkpoints: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'checkpoints', tuple(float(c) for c in self.checkpoints))

    def clean(self) -> None:
        errors = {}
        if self.clock not in CLOCKS:
            errors['clock'] = f"clock debe ser uno de {CLOCKS}."
        if self.seed < 0:
            errors['seed'] = "seed debe ser >= 0."
        if self.seconds_per_block is not None and not self.seconds_per_block > 0:
            errors['seconds_per_block'] = "seconds_per_block debe ser > 0."
        if any(c < 0 for c in self.checkpoints):
            errors['checkpoints'] = "Los checkpoints deben ser >= 0."
        if errors:
            raise ValidationError(errors)


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: PhantomSpec
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    oversample: int = 1
    solver_name: str = 'fblisa'
    solver: SolverConfig = field(default_factory=SolverConfig)
    outputs: OutputSpec = field(default_factory=OutputSpec)
    run: RunSpec = field(default_factory=RunSpec)

    def __post_init__(self):
        self.clean()

    def clean(self) -> None:
        errors = {}
        if self.solver_name not in METHODS:
            errors['solver.name'] = f"Solver desconocido {self.solver_name!r}; opciones: {', '.join(METHODS)}."
        if self.oversample < 1:
            errors['simulation.oversample'] = "oversample debe ser >= 1."
        if errors:
            raise ValidationError(errors)
        self.outputs.clean()
        self.run.clean()
        self.solver.clean(self.geometry.n_theta)

    @property
    def layout(self) -> GridLayout:
        return self.phantom.layout

    def scan_geometry(self) -> ScanGeometry:
        return self.geometry.build(self.layout)

    def seeds(self) -> tuple[int, int]:
        """Semillas independientes (ruido, solver) derivadas de run.seed."""
        noise_seq, solver_seq = np.random.SeedSequence(self.run.seed).spawn(2)
        return int(noise_seq.generate_state(1)[0]), int(solver_seq.generate_state(1)[0])

    def noise_spec(self) -> NoiseSpec:
        return dataclasses.replace(self.noise, seed=self.seeds()[0])

    def solver_config(self) -> SolverConfig:
        return dataclasses.replace(self.solver, seed=self.seeds()[1])

    def with_seed(self, seed: int) -> 'ExperimentConfig':
        return dataclasses.replace(self, run=dataclasses.replace(self.run, seed=seed))

    def with_solver(self, name: str, **changes) -> 'ExperimentConfig':
        return dataclasses.replace(self, solver_name=name, solver=dataclasses.replace(self.solver, **changes))


SECTIONS = {
    'phantom': ('kind', 'dims', 'voxel_size', 'disks', 'value_max'),
    'geometry': tuple(f.name for f in dataclasses.fields(GeometrySpec)),
    'noise': ('kind', 'rel_std'),
    'simulation': ('oversample',),
    'solver': ('name',) + tuple(f.name for f in dataclasses.fields(SolverConfig) if f.name != 'seed'),
    'outputs': tuple(f.name for f in dataclasses.fields(OutputSpec)),
    'run': tuple(f.name for f in dataclasses.fields(RunSpec)),
}


def _section(data: dict, name: str) -> dict:
    section = data.get(name, {})
    if not isinstance(section, dict):
        raise ValidationError({name: "Se esperaba una sección [tabla]."})
    allowed = SECTIONS[name]
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ValidationError({
            f"{name}.{key}": f"Clave desconocida; permitidas: {', '.join(allowed)}" for key in unknown
        })
    return dict(section)


def config_from_dict(data: dict) -> ExperimentConfig:
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ValidationError({key: f"Sección desconocida; permitidas: {', '.join(SECTIONS)}" for key in unknown})
    if 'phantom' not in data:
        raise ValidationError({'phantom': "La sección [phantom] es obligatoria."})

    sections = {name: _section(data, name) for name in SECTIONS}
    current = 'phantom'
    try:
        phantom = PhantomSpec(**sections['phantom'])
        current = 'geometry'
        geometry = GeometrySpec(**sections['geometry'])
        current = 'noise'
        noise = NoiseSpec(**sections['noise'])
        current = 'solver'
        solver_section = sections['solver']
        solver_name = solver_section.pop('name', 'fblisa')
        solver = SolverConfig(**solver_section)
        current = 'outputs'
        outputs = OutputSpec(**sections['outputs'])
        current = 'run'
        run = RunSpec(**sections['run'])
        current = 'simulation'
        return ExperimentConfig(
            phantom=phantom,
            geometry=geometry,
            noise=noise,
            oversample=sections['simulation'].get('oversample', 1),
            solver_name=solver_name,
            solver=solver,
            outputs=outputs,
            run=run,
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError({current: str(exc)}) from exc


def load_config(path) -> ExperimentConfig:
    """Lee un TOML de experimento. FileNotFoundError si no existe."""
    with Path(path).open('rb') as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"{path}: TOML inválido ({exc})") from exc
    return config_from_dict(data)


# --------------------------------
# Casos incorporados (escala desk)
# --------------------------------
CASES = {
    1: {'n_theta': 36, 'rel_std': 0.0, 'mu': 2.0},
    2: {'n_theta': 36, 'rel_std': 0.02, 'mu': 1.0},
    3: {'n_theta': 72, 'rel_std': 0.02, 'mu': 1.0},
}


def case_config(case_id: int, scale: str = 'desk', *, seed: int = 0) -> ExperimentConfig:
    if case_id not in CASES:
        raise ValueError(f"Caso desconocido {case_id}; opciones: {CASE_IDS}")
    if scale not in SCALES:
        raise ValueError(f"Escala desconocida {scale!r}; opciones: {SCALES}")
    case = CASES[case_id]
    if scale == 'desk':
        phantom = PhantomSpec(PhantomKind.SHEPP_LOGAN_2D, (128, 128))
        geometry = GeometrySpec(GeometryKind.PARALLEL_2D, case['n_theta'])
    else:
        phantom = PhantomSpec(PhantomKind.SHEPP_LOGAN_3D, (48, 48, 48))
        # Detector con celdas de 2 vóxeles magnificados: mantiene la matriz del sistema en memoria
        geometry = GeometrySpec(GeometryKind.CONE_BEAM_3D, case['n_theta'], detector_spacing=3.0)
    noise = NoiseSpec.gaussian(case['rel_std']) if case['rel_std'] else NoiseSpec.none()
    solver = SolverConfig(mu=case['mu'], epochs=CASE_EPOCHS)
    return ExperimentConfig(phantom=phantom, geometry=geometry, noise=noise, solver=solver, run=RunSpec(seed=seed))


def nominal_budget(config: ExperimentConfig, seconds_per_block: float) -> float:
    """Costo modelado de ``epochs`` gradientes completos (A y Aᵀ sobre todos los ángulos)."""
    return config.solver.epochs * config.geometry.n_theta * 2 * seconds_per_block


# --------
# Pipeline
# --------
@dataclass
class Simulation:
    truth: ImageGrid
    sinogram: Sinogram


def simulate(config: ExperimentConfig, *, threads: int = 1) -> Simulation:
    """Fantoma de referencia (resolución nativa) y su sinograma, opcionalmente desde una grilla más fina."""
    truth = make_phantom(config.phantom)
    source = truth if config.oversample == 1 else make_phantom(config.phantom, config.oversample)
    geometry = config.scan_geometry()
    sinogram = simulate_scan(source, geometry, config.noise_spec(), threads=threads)
    return Simulation(truth, sinogram)


def reconstruct(
    config: ExperimentConfig,
    sinogram: Sinogram,
    *,
    threads: int = 1,
    checkpoints=None,
    callback: Callable[[IterationRecord, np.ndarray], None] | None = None,
) -> SolverResult:
    x0 = ImageGrid.from_layout(config.layout)
    cfg = config.solver_config()
    runner = RUNNERS[config.solver_name]
    logger.info("Reconstrucción %s: %s", config.solver_name, cfg)
    return runner(
        sinogram,
        sinogram.geometry,
        x0,
        Regularizer.l1_nonneg(cfg.mu),
        cfg,
        threads=threads,
        clock=make_clock(config.run.clock, config.run.seconds_per_block),
        checkpoints=config.run.checkpoints if checkpoints is None else checkpoints,
        callback=callback,
    )


@dataclass
class MethodRun:
    method: str
    seed: int
    result: SolverResult
    rows: list[tuple[float | str, metrics.MetricsReport]]
    curve: list[tuple[float, float]]


def run_method(
    config: ExperimentConfig,
    method: str,
    simulation: Simulation,
    checkpoints: tuple[float, ...],
    *,
    threads: int = 1,
) -> MethodRun:
    """Corre un método y evalúa en cada checkpoint y en el iterado final."""
    truth = simulation.truth
    curve = []

    def track(record: IterationRecord, x: np.ndarray) -> None:
        curve.append((record.elapsed, metrics.relative_error(x, truth.values)))

    result = reconstruct(config, simulation.sinogram, threads=threads, checkpoints=checkpoints, callback=track)
    rows = [(mark, metrics.evaluate(image, truth)) for mark, image in result.snapshots.items()]
    rows.append(('final', metrics.evaluate(result.x_final, truth)))
    return MethodRun(method, config.run.seed, result, rows, curve)


def case_method_config(config: ExperimentConfig, method: str) -> ExperimentConfig:
    if method == 'fb':
        return config.with_solver('fb', alpha0=FB_ALPHA)
    return config.with_solver(method)


def curve_rows(runs: list[MethodRun]) -> list[dict]:
    return [
        {'method': run.method, 'seed': run.seed, 'elapsed_s': elapsed, 're': re}
        for run in runs
        for elapsed, re in run.curve
    ]


def _csv_value(value):
    return repr(float(value)) if isinstance(value, (float, np.floating)) else value


def write_rows_csv(path, fieldnames, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _csv_value(value) for key, value in row.items()})
    return path


def summarize(runs: list[MethodRun]) -> list[dict]:
    """Filas de la tabla (mediana sobre semillas) por método y checkpoint, en orden de aparición."""
    grouped: dict[tuple[str, object], list[tuple[float, metrics.MetricsReport]]] = {}
    for run in runs:
        final_elapsed = run.result.trace[-1].elapsed
        for mark, report in run.rows:
            elapsed = final_elapsed if mark == 'final' else mark
            grouped.setdefault((run.method, mark), []).append((elapsed, report))

    table = []
    for (method, _), items in grouped.items():
        table.append({
            'method': method,
            'checkpoint_s': statistics.median(e for e, _ in items),
            're': statistics.median(r.re for _, r in items),
            'psnr_db': statistics.median(r.psnr for _, r in items),
            'ssim': statistics.median(r.ssim for _, r in items),
        })
    return table
