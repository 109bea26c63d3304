"""
Reproduce uno de los casos experimentales de punta a punta.

  caso 1: 36 ángulos, sin ruido, mu = 2
  caso 2: 36 ángulos, ruido gaussiano rel_std = 0.02, mu = 1
  caso 3: 72 ángulos, ruido gaussiano rel_std = 0.02, mu = 1

Corre fblisa, proxsgd (N fijo = 8) y fb (paso 1e-5) con 15 épocas cada uno,
evalúa en 1/3, 1/2 y 1 del presupuesto nominal y en el iterado final.

Uso:
  python manage.py case 1 --seed 7
  python manage.py case 2 --repeats 5 --threads 4 --out-dir runs/
"""
from django.conf import settings
from django.core.management.base import CommandError

from tomography.containers import write_image, write_sinogram
from tomography.experiments import (
    CASE_IDS,
    CASE_METHODS,
    CHECKPOINT_FRACTIONS,
    CURVE_FIELDS,
    TABLE_FIELDS,
    case_config,
    case_method_config,
    curve_rows,
    nominal_budget,
    run_method,
    simulate,
    summarize,
    write_rows_csv,
)
from tomography.management.base import EXIT_CONFIG, EXIT_SOLVER, StomoCommand, exit_codes
from tomography.previews import write_preview
from tomography.solvers import write_trace_csv
from tomography.spreadsheets import write_table_xlsx


class Command(StomoCommand):
    help = "Simula, reconstruye con los tres métodos y emite la tabla comparativa de un caso."
    shared_options = ('seed', 'threads', 'out_dir', 'scale')

    def add_arguments(self, parser):
        parser.add_argument("case_id", type=int, choices=CASE_IDS, help="Caso experimental (1, 2 o 3)")
        parser.add_argument(
            "--repeats",
            dest="repeats",
            type=int,
            default=1,
            help="Número de semillas (seed … seed+R-1); la tabla reporta medianas",
        )
        super().add_arguments(parser)

    def handle(self, *args, **options):
        case_id = options["case_id"]
        repeats = options["repeats"]
        if repeats < 1:
            raise CommandError("--repeats debe ser >= 1", returncode=EXIT_CONFIG)

        with exit_codes():
            scale = options["scale"]
            seed0 = self.resolve_seed(options)
            threads = self.resolve_threads(options)
            out_dir = self.resolve_out_dir(options) / f"case{case_id}"

            base = case_config(case_id, scale)
            seconds_per_block = base.run.seconds_per_block or settings.STOMO_SECONDS_PER_BLOCK
            budget = nominal_budget(base, seconds_per_block)
            marks = tuple(fraction * budget for fraction in CHECKPOINT_FRACTIONS)
            self.stdout.write(self.style.NOTICE(
                f"Caso {case_id} ({scale}): n_theta={base.geometry.n_theta}, ruido={base.noise.describe()}, "
                f"mu={base.solver.mu:g}, presupuesto nominal={budget:g} s"
            ))

            runs = []
            aborted = []
            for seed in range(seed0, seed0 + repeats):
                config = base.with_seed(seed)
                simulation = simulate(config, threads=threads)
                if seed == seed0:
                    write_image(out_dir / "phantom.stomo", simulation.truth)
                write_sinogram(out_dir / f"sinogram_seed{seed}.stomo", simulation.sinogram)

                for method in CASE_METHODS:
                    run = run_method(case_method_config(config, method), method, simulation, marks, threads=threads)
                    method_dir = out_dir / method
                    write_image(method_dir / f"recon_seed{seed}.stomo", run.result.x_final)
                    write_trace_csv(method_dir / f"trace_seed{seed}.csv", run.result.trace)
                    write_preview(method_dir / f"recon_seed{seed}.png", run.result.x_final, vmax=base.phantom.value_max)
                    final = run.rows[-1][1]
                    self.stdout.write(
                        f"  {method} seed={seed}: {len(run.result.trace)} iteraciones, "
                        f"RE final={final.re:.4f}, terminación={run.result.termination.value}"
                    )
                    if run.result.aborted:
                        aborted.append(f"{method}/seed{seed}")
                    runs.append(run)

            table = summarize(runs)
            write_rows_csv(out_dir / "table.csv", TABLE_FIELDS, table)
            write_rows_csv(out_dir / "re_vs_time.csv", CURVE_FIELDS, curve_rows(runs))
            write_table_xlsx(out_dir / "table.xlsx", TABLE_FIELDS, table, title=f"caso{case_id}")

        self.stdout.write(",".join(TABLE_FIELDS))
        for row in table:
            self.stdout.write(
                f"{row['method']},{row['checkpoint_s']:.4g},{row['re']:.4f},{row['psnr_db']:.2f},{row['ssim']:.4f}"
            )
        if aborted:
            raise CommandError(f"Corridas abortadas por tope de backtracking: {', '.join(aborted)}", returncode=EXIT_SOLVER)
        self.stdout.write(self.style.SUCCESS(f"Caso {case_id} completo: resultados en {out_dir}"))
