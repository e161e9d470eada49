"""CSV file exporter."""

import csv
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

from fre_seg.models import ActivationStat

HISTORY_FIELDS = ("epoch", "split")


def history_fieldnames(class_names: Sequence[str]) -> List[str]:
    return list(HISTORY_FIELDS) + [f"iou_{name}" for name in class_names] + ["miou", "loss"]


class CSVExporter:
    """Write dict rows to a CSV file with a fixed header."""

    def __init__(self, output_path: Union[str, Path]):
        """
        Initialize the CSV exporter.

        Args:
            output_path: Path to the output CSV file
        """
        self.output_path = Path(output_path)

    def export(self, rows: Iterable[Dict], fieldnames: Sequence[str]) -> Path:
        """
        Export rows to a CSV file; the header is written even when there are no rows.

        Args:
            rows: Mappings keyed by `fieldnames`
            fieldnames: Column order
        """
        self.output_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.output_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=list(fieldnames))
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
        return self.output_path

    def export_history(self, history, class_names: Sequence[str]) -> Path:
        """Metric history: epoch, split, iou_<class>..., miou, loss."""
        return self.export((row.to_row(class_names) for row in history), history_fieldnames(class_names))

    def export_stats(self, stats: Iterable[ActivationStat]) -> Path:
        """Activation statistics: epoch, site, statistic, channel, value."""
        return self.export((stat.to_row() for stat in stats), ActivationStat.FIELDNAMES)


def read_rows(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def read_stats(path: Union[str, Path]) -> List[ActivationStat]:
    return [ActivationStat.from_row(row) for row in read_rows(path)]


def read_table(path: Union[str, Path]) -> List[List[str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return [row for row in csv.reader(f)]


def write_table(path: Union[str, Path], table: Sequence[Sequence[str]]) -> Path:
    """Write a header-first list of rows as it is."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        csv.writer(f).writerows(table)
    return path
