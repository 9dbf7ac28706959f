"""
harness/report.py -- Presentacion en consola (rich) de auditorias, entrenamiento y evaluacion.

Solo presenta; las salidas legibles por maquina (JSON, CSV) se escriben en audit.py y runner.py.
"""
from typing import Optional

from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from harness.audit import AuditReport

_console: Optional[Console] = None


def get_console() -> Console:
    global _console
    if _console is None:
        _console = Console()
    return _console


def _status(passed: bool) -> str:
    return "[green]OK[/green]" if passed else "[red]FALLO[/red]"


def audit_table(reports: list[AuditReport], title: str = "Auditoria de equivarianza") -> Table:
    table = Table(title=title, show_header=True, header_style="bold magenta")
    table.add_column("Objetivo")
    table.add_column("Modo", style="dim")
    table.add_column("Max", justify="right")
    table.add_column("Media", justify="right")
    table.add_column("Tolerancia", justify="right")
    table.add_column("Estado", justify="center")
    for r in reports:
        table.add_row(r.name, r.mode, f"{r.max_error:.3e}", f"{r.mean_error:.3e}", f"{r.tolerance:.0e}",
                      _status(r.passed))
    return table


def print_audit(reports: list[AuditReport], title: str = "Auditoria de equivarianza"):
    console = get_console()
    console.print(audit_table(reports, title))
    failed = [r for r in reports if not r.passed]
    for r in failed:
        worst = r.worst
        console.print(f"[red]{r.name} ({r.mode}): peor error {worst.error:.3e} en irrep {worst.irrep}, "
                      f"elemento {worst.element}[/red]")
    summary = f"{len(reports) - len(failed)}/{len(reports)} auditorias aprobadas"
    console.print(Panel(summary, border_style="green" if not failed else "red"))


def print_gradient_report(report: AuditReport, top: int = 5):
    """Resumen de la auditoria de gradientes con las peores coordenadas."""
    console = get_console()
    table = Table(title="Auditoria de gradientes", show_header=True, header_style="bold magenta")
    table.add_column("Slice")
    table.add_column("Local", justify="right")
    table.add_column("Analitico", justify="right")
    table.add_column("Numerico", justify="right")
    table.add_column("Error rel.", justify="right")
    for e in sorted(report.entries, key=lambda e: e.error, reverse=True)[:top]:
        table.add_row(e.target, str(e.element["local"]), f"{e.detail['analytic']:.6e}",
                      f"{e.detail['numeric']:.6e}", f"{e.error:.3e}")
    console.print(table)
    console.print(Panel(
        f"{len(report.entries)} coordenadas, max={report.max_error:.3e}, tolerancia={report.tolerance:.0e}: "
        f"{_status(report.passed)}",
        border_style="green" if report.passed else "red",
    ))


def print_training(history: list[dict], checkpoint=None):
    console = get_console()
    table = Table(title="Entrenamiento", show_header=True, header_style="bold magenta")
    for col in ("Epoca", "Perdida", "Train", "Test", "lr"):
        table.add_column(col, justify="right")
    for row in history:
        table.add_row(str(row["epoch"]), f"{row['loss']:.4f}", f"{row['train_accuracy']:.3f}",
                      f"{row['test_accuracy']:.3f}", f"{row['lr']:.2e}")
    console.print(table)
    if checkpoint is not None:
        console.print(f"[dim]Checkpoint final: {checkpoint}[/]")


def print_eval(result):
    console = get_console()
    table = Table(title="Evaluacion", show_header=True, header_style="bold magenta")
    table.add_column("Protocolo")
    table.add_column("Precision", justify="right")
    table.add_row("Plana", f"{result.accuracy:.4f}")
    table.add_row(f"Rotada (x{len(result.rotated)})", f"{result.rotated_mean:.4f} +- {result.rotated_std:.4f}")
    table.add_row("TTA", f"{result.tta_accuracy:.4f}")
    console.print(table)


def print_healthcheck(issues: dict):
    console = get_console()
    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Categoria", style="dim", width=12)
    table.add_column("Estado", justify="center", width=10)
    table.add_column("Mensaje")
    for c in issues["critical"]:
        table.add_row("CRITICO", "[red]Fallo[/red]", c)
    for w in issues["warnings"]:
        table.add_row("AVISO", "[yellow]Aviso[/yellow]", w)
    if not issues["critical"] and not issues["warnings"]:
        table.add_row("ENTORNO", "[green]OK[/green]", "Todas las verificaciones pasaron.")
    console.print(table)
