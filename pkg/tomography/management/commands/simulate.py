"""
Simula un escaneo: fantoma de referencia y sinograma (con ruido si se configura).

Uso:
  python manage.py simulate --config configs/case2.toml --seed 7
  python manage.py simulate --scale small3d --out-dir runs/small3d
"""
from tomography.containers import write_image, write_sinogram
from tomography.experiments import simulate
from tomography.management.base import StomoCommand, exit_codes


class Command(StomoCommand):
    help = "Genera el fantoma y su sinograma en formato contenedor .stomo."

    def handle(self, *args, **options):
        with exit_codes():
            config = self.load_experiment(options)
            threads = self.resolve_threads(options)
            out_dir = self.resolve_out_dir(options)

            result = simulate(config, threads=threads)
            phantom_path = write_image(out_dir / config.outputs.phantom, result.truth)
            sinogram_path = write_sinogram(out_dir / config.outputs.sinogram, result.sinogram)

        geometry = result.sinogram.geometry
        self.stdout.write(self.style.SUCCESS(
            f"Simulación: dims={'x'.join(str(n) for n in result.truth.dims)}, "
            f"n_theta={geometry.n_theta}, n_p={geometry.n_p}, ruido={config.noise.describe()}, "
            f"seed={config.run.seed} -> {phantom_path.name}, {sinogram_path.name}"
        ))
