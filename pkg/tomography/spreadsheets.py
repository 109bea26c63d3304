"""
Exportación de tablas de resultados a Excel (.xlsx) y su lectura.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Sequence, Tuple

from openpyxl import Workbook, load_workbook
from openpyxl.styles import Font


def write_table_xlsx(path, fieldnames: Sequence[str], rows: Sequence[Dict[str, Any]], *, title: str = 'resultados') -> Path:
    """Una hoja: encabezados en negrita en la fila 1 y una fila por registro."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wb = Workbook()
    ws = wb.active
    ws.title = title
    ws.append(list(fieldnames))
    for cell in ws[1]:
        cell.font = Font(bold=True)
    for row in rows:
        ws.append([_cell_value(row.get(name)) for name in fieldnames])
    ws.freeze_panes = 'A2'
    wb.save(path)
    return path


def _cell_value(value):
    # Excel no admite infinitos: se guardan como texto
    if isinstance(value, float) and value in (float('inf'), float('-inf')):
        return str(value)
    return value


def read_table_xlsx(path, sheet_name: str | None = None) -> Tuple[Tuple[str, ...], list[Dict[str, Any]]]:
    wb = load_workbook(path, data_only=True)
    ws = wb[sheet_name] if sheet_name else wb.active
    rows = ws.iter_rows(values_only=True)
    headers = tuple((h or '').strip() for h in next(rows))
    records = [{headers[i]: row[i] for i in range(min(len(headers), len(row)))} for row in rows]
    return headers, records
