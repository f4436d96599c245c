from __future__ import annotations

from collections.abc import Iterable, Sequence
from io import BytesIO

from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter
from openpyxl.worksheet.worksheet import Worksheet

from core.models.dataset import DatasetStats
from core.models.training import HistoryRow
from core.schema import LOSS_COMPONENTS_D, LOSS_COMPONENTS_G

__all__ = [
    "build_history_workbook",
    "build_stats_workbook",
]

_HEAD_FILL = PatternFill("solid", fgColor="F2F3F5")
_BOLD = Font(bold=True)
_CENTER = Alignment(horizontal="center", vertical="center")
_THIN = Side(style="thin", color="DDDDDD")
_BORDER = Border(top=_THIN, left=_THIN, right=_THIN, bottom=_THIN)
_LOSS_FORMAT = "0.000000"


def _style_header(ws: Worksheet, width: int, row: int = 1) -> None:
    for c in range(1, width + 1):
        cell = ws.cell(row=row, column=c)
        cell.fill = _HEAD_FILL
        cell.font = _BOLD
        cell.alignment = _CENTER
        cell.border = _BORDER


def _autosize(ws: Worksheet) -> None:
    for col_idx in range(1, ws.max_column + 1):
        max_len = 0
        for row_idx in range(1, ws.max_row + 1):
            val = ws.cell(row=row_idx, column=col_idx).value
            max_len = max(max_len, len(str(val)) if val is not None else 0)
        ws.column_dimensions[get_column_letter(col_idx)].width = min(32, max(8, max_len + 2))


def _append_rows(ws: Worksheet, rows: Iterable[Sequence[object]], number_format: str | None = None) -> None:
    for values in rows:
        ws.append(list(values))
        r = ws.max_row
        for c in range(1, len(values) + 1):
            cell = ws.cell(row=r, column=c)
            cell.border = _BORDER
            if number_format and isinstance(cell.value, float):
                cell.number_format = number_format


def _save(wb: Workbook) -> BytesIO:
    bio = BytesIO()
    wb.save(bio)
    bio.seek(0)
    return bio


def build_history_workbook(history: Sequence[HistoryRow]) -> BytesIO:
    """Per-batch losses on one sheet, per-epoch means on a second."""
    components = [*LOSS_COMPONENTS_D, *LOSS_COMPONENTS_G]
    wb = Workbook()
    ws = wb.active
    ws.title = "batches"
    header = ["epoch", "batch", *components]
    ws.append(header)
    _style_header(ws, len(header))
    _append_rows(
        ws,
        ([row.epoch, row.batch, *(float(row.losses[c]) for c in components)] for row in history),
        _LOSS_FORMAT,
    )
    ws.freeze_panes = "C2"
    _autosize(ws)

    per_epoch: dict[int, list[HistoryRow]] = {}
    for row in history:
        per_epoch.setdefault(row.epoch, []).append(row)
    ws_epochs = wb.create_sheet("epochs")
    epoch_header = ["epoch", "batches", *components]
    ws_epochs.append(epoch_header)
    _style_header(ws_epochs, len(epoch_header))
    _append_rows(
        ws_epochs,
        (
            [epoch, len(rows), *(sum(r.losses[c] for r in rows) / len(rows) for c in components)]
            for epoch, rows in sorted(per_epoch.items())
        ),
        _LOSS_FORMAT,
    )
    ws_epochs.freeze_panes = "B2"
    _autosize(ws_epochs)
    return _save(wb)


def build_stats_workbook(stats: DatasetStats) -> BytesIO:
    wb = Workbook()
    ws = wb.active
    ws.title = "summary"
    ws.append(["class", "phrases", "before balancing", "density"])
    _style_header(ws, 4)
    _append_rows(
        ws,
        (
            [name, stats.counts.get(name, 0), stats.raw_counts.get(name, 0), float(stats.density.get(name, 0.0))]
            for name in ("negative", "positive")
        ),
        "0.0000",
    )
    _append_rows(ws, [["mixed pool", stats.mixed_pool_size, "", float(stats.mixed_density)]], "0.0000")
    _append_rows(ws, [["empty windows dropped", stats.empty_windows_dropped, "", ""]])
    for c in range(1, 5):
        ws.cell(row=ws.max_row - 1, column=c).font = _BOLD
    _autosize(ws)

    ws_pieces = wb.create_sheet("pieces")
    ws_pieces.append(["piece", "phrases"])
    _style_header(ws_pieces, 2)
    _append_rows(ws_pieces, ([piece, n] for piece, n in stats.phrases_per_piece.items()))
    ws_pieces.freeze_panes = "A2"
    _autosize(ws_pieces)
    return _save(wb)
