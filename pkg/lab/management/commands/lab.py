# lab/management/commands/lab.py
import logging
import os
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from lab import __version__
from lab.conf import thresholds
from lab.exceptions import ConfigError, LabError
from lab.services import registry, reports

logger = logging.getLogger(__name__)

EXIT_FAILED = 1
EXIT_ERROR = 2


class Command(BaseCommand):
    help = "Run, list and describe the verification experiments."
    requires_system_checks = []

    def add_arguments(self, parser):
        sub = parser.add_subparsers(dest="action", required=True, metavar="{run,list,version}")

        run = sub.add_parser("run", help="Run every experiment in an INI file or a previous manifest.json.")
        run.add_argument("config", help="INI experiment file or manifest.json")
        run.add_argument("--out", default=None, help="output directory (default: LAB_OUTPUT_DIR)")
        run.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker processes")
        run.add_argument("--plots", action="store_true", help="also write SVG plots")

        listing = sub.add_parser("list", help="List experiments and their keys.")
        listing.add_argument("--csv", action="store_true", help="CSV instead of a text table")

        sub.add_parser("version", help="Print the tool and artifact versions.")

    def handle(self, *args, **options):
        action = options["action"]
        if action == "version":
            self.stdout.write(
                f"lab {__version__} (artifact {settings.LAB_ARTIFACT_VERSION}, "
                f"manifest schema {reports.SCHEMA_VERSION})"
            )
        elif action == "list":
            self._list(options["csv"])
        else:
            self._run(Path(options["config"]), options["out"], options["workers"], options["plots"])

    # ---- list ----

    def _list(self, as_csv: bool):
        frame = registry.table()
        if as_csv:
            self.stdout.write(frame.to_csv(index=False, lineterminator="\n"), ending="")
        else:
            self.stdout.write(frame.to_string(index=False))

    # ---- run ----

    def _run(self, config: Path, out, workers: int, plots: bool):
        if workers < 1:
            raise CommandError(f"--workers must be >= 1, got {workers}", returncode=EXIT_ERROR)
        # Everything is validated before anything is written.
        try:
            configs = registry.load_config(config)
            thr = thresholds()
        except (ConfigError, ValueError) as exc:
            raise CommandError(str(exc), returncode=EXIT_ERROR) from exc
        out_dir = Path(out) if out else Path(settings.LAB_OUTPUT_DIR)

        results = []
        for cfg in configs:
            try:
                results.append(registry.run(cfg, thr, workers))
            except LabError as exc:
                logger.error("[%s] %s", cfg.label, exc)
                raise CommandError(f"[{cfg.label}] {exc}", returncode=EXIT_ERROR) from exc

        try:
            written = reports.write_all(configs, results, out_dir, plots=plots)
        except OSError as exc:
            raise CommandError(f"cannot write to {out_dir}: {exc}", returncode=EXIT_ERROR) from exc

        failed = 0
        for result in results:
            for verdict in result.verdicts:
                line = (
                    f"{result.label}/{verdict.name}: {verdict.statistic:.6g} "
                    f"[{verdict.ci_low:.6g}, {verdict.ci_high:.6g}] threshold {verdict.threshold:.6g}"
                )
                if verdict.passed:
                    self.stdout.write(self.style.SUCCESS(f"[PASS] {line}"))
                else:
                    failed += 1
                    self.stdout.write(self.style.ERROR(f"[FAIL] {line}"))
        self.stdout.write(f"report: {written['report']}")
        if failed:
            raise CommandError(f"{failed} verdict(s) failed", returncode=EXIT_FAILED)
