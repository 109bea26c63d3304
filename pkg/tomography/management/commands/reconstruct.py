"""
Reconstruye con el solver configurado (fblisa, fb o proxsgd).

Si el directorio de salida ya tiene el sinograma de `simulate` se usa ese; si
no, se simula en memoria con la misma configuración.

Uso:
  python manage.py reconstruct --config configs/case1.toml --seed 7 --threads 4
"""
from django.core.management.base import CommandError

from tomography.containers import read_sinogram, write_image
from tomography.exceptions import GeometryMismatch
from tomography.experiments import reconstruct, simulate
from tomography.management.base import EXIT_SOLVER, StomoCommand, exit_codes
from tomography.previews import write_preview
from tomography.solvers import write_trace_csv


class Command(StomoCommand):
    help = "Ejecuta FB-LISA (o una línea base) y escribe volumen, traza y vista previa."

    def handle(self, *args, **options):
        with exit_codes():
            config = self.load_experiment(options)
            threads = self.resolve_threads(options)
            out_dir = self.resolve_out_dir(options)

            sinogram_path = out_dir / config.outputs.sinogram
            if sinogram_path.exists():
                sinogram = read_sinogram(sinogram_path)
                if sinogram.geometry != config.scan_geometry():
                    raise GeometryMismatch(
                        f"{sinogram_path} fue adquirido con otra geometría; vuelva a ejecutar simulate"
                    )
                self.stdout.write(self.style.NOTICE(f"Sinograma leído de {sinogram_path}"))
            else:
                sinogram = simulate(config, threads=threads).sinogram
                self.stdout.write(self.style.NOTICE("Sinograma simulado en memoria"))

            result = reconstruct(config, sinogram, threads=threads)
            write_image(out_dir / config.outputs.volume, result.x_final)
            write_trace_csv(out_dir / config.outputs.trace, result.trace)
            write_preview(out_dir / config.outputs.preview, result.x_final, vmax=config.phantom.value_max)

        last = result.trace[-1]
        summary = (
            f"{config.solver_name}: {len(result.trace)} iteraciones, {last.t} épocas, "
            f"terminación={result.termination.value}, f_S={last.sub_objective:.6e}"
        )
        if result.aborted:
            self.stderr.write(self.style.ERROR(summary))
            raise CommandError(
                "El solver abortó: la búsqueda de línea superó max_backtracks (resultado parcial escrito)",
                returncode=EXIT_SOLVER,
            )
        self.stdout.write(self.style.SUCCESS(summary))
