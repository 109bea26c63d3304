"""
Compara una reconstrucción con la referencia: RE, PSNR y SSIM sobre el volumen completo.

Uso:
  python manage.py evaluate runs/recon.stomo runs/phantom.stomo
  python manage.py evaluate runs/recon.stomo runs/phantom.stomo --peak 1.0
"""
from tomography import metrics
from tomography.containers import read_image
from tomography.exceptions import GeometryMismatch
from tomography.management.base import StomoCommand, exit_codes


class Command(StomoCommand):
    help = "Calcula métricas de calidad y escribe metrics.txt y metrics.csv."
    shared_options = ('out_dir',)

    def add_arguments(self, parser):
        parser.add_argument("recon", help="Contenedor .stomo con la reconstrucción")
        parser.add_argument("ground_truth", help="Contenedor .stomo con la referencia")
        parser.add_argument(
            "--peak",
            dest="peak",
            type=float,
            default=None,
            help="Pico para PSNR/SSIM (por defecto: máximo de la referencia)",
        )
        super().add_arguments(parser)

    def handle(self, *args, **options):
        with exit_codes():
            recon = read_image(options["recon"])
            truth = read_image(options["ground_truth"])
            if recon.layout != truth.layout:
                raise GeometryMismatch(f"Grillas distintas: {recon.layout} vs {truth.layout}")
            report = metrics.evaluate(recon, truth, options["peak"])

            out_dir = self.resolve_out_dir(options)
            (out_dir / "metrics.txt").write_text(report.to_text(), encoding="utf-8")
            (out_dir / "metrics.csv").write_text(f"{metrics.CSV_HEADER}\n{report.to_csv_row()}\n", encoding="utf-8")

        self.stdout.write(report.to_text(), ending="")
        self.stdout.write(self.style.SUCCESS(f"Métricas escritas en {out_dir}"))
