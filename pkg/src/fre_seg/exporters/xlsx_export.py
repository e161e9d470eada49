"""Excel XLSX file exporter using openpyxl."""

from pathlib import Path
from typing import Sequence, Union

from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter


class XLSXExporter:
    """Write comparison tables to an Excel workbook, one sheet per table."""

    def __init__(self, output_path: Union[str, Path]):
        self.output_path = Path(output_path)

    def export(self, tables: Sequence[Sequence[Sequence[str]]], titles: Sequence[str]) -> Path:
        """
        Export header-first tables; numeric cells are stored as numbers.

        Args:
            tables: Tables as produced by metrics.format_table
            titles: Sheet titles, one per table
        """
        self.output_path.parent.mkdir(parents=True, exist_ok=True)

        header_font = Font(bold=True, color="FFFFFF")
        header_fill = PatternFill(start_color="4472C4", end_color="4472C4", fill_type="solid")
        header_alignment = Alignment(horizontal="center", vertical="center")
        thin_border = Border(
            left=Side(style="thin"),
            right=Side(style="thin"),
            top=Side(style="thin"),
            bottom=Side(style="thin"),
        )

        wb = Workbook()
        wb.remove(wb.active)
        for table, title in zip(tables, titles):
            ws = wb.create_sheet(title=title[:31])
            for col, header in enumerate(table[0], 1):
                cell = ws.cell(row=1, column=col, value=header)
                cell.font = header_font
                cell.fill = header_fill
                cell.alignment = header_alignment
                cell.border = thin_border

            for r, values in enumerate(table[1:], 2):
                for col, value in enumerate(values, 1):
                    cell = ws.cell(row=r, column=col, value=_cell_value(value))
                    cell.border = thin_border
                    if col > 1:
                        cell.alignment = Alignment(horizontal="right")
                        cell.number_format = "0.00"

            ws.column_dimensions["A"].width = 42
            for col in range(2, len(table[0]) + 1):
                ws.column_dimensions[get_column_letter(col)].width = 16

        wb.save(self.output_path)
        return self.output_path


def _cell_value(value: str):
    try:
        return float(value)
    except (TypeError, ValueError):
        return value
