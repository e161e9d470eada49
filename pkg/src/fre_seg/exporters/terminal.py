"""Terminal output exporter using rich for formatted tables."""

from typing import Optional, Sequence

from rich.console import Console
from rich.table import Table


class TerminalExporter:
    """Print comparison tables (class IoU [%] and mIoU [%]) to the terminal."""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console()

    def export(self, table: Sequence[Sequence[str]], title: str = "Segmentation results") -> None:
        """
        Print a header-first table.

        Args:
            table: First row is the header, the first column holds row labels
            title: Table title
        """
        if len(table) < 2:
            self.console.print("[yellow]No results to display.[/yellow]")
            return

        out = Table(title=title, show_header=True, header_style="bold cyan")
        header = table[0]
        out.add_column(header[0], style="white")
        for name in header[1:-1]:
            out.add_column(name, style="green", justify="right")
        out.add_column(header[-1], style="bold yellow", justify="right")
        for row in table[1:]:
            out.add_row(*[str(cell) for cell in row])
        self.console.print(out)

    def summary(self, items: Sequence[Sequence[str]]) -> None:
        """Bold key / value lines under a table."""
        self.console.print()
        for key, value in items:
            self.console.print(f"[bold]{key}:[/bold] {value}")
