"""JSON file exporter."""

import json
import os
from pathlib import Path
from typing import Any, Dict, Union


class JSONExporter:
    """Write one JSON document (config echoes, run summaries)."""

    def __init__(self, output_path: Union[str, Path]):
        self.output_path = Path(output_path)

    def export(self, data: Dict[str, Any]) -> Path:
        """
        Export `data` with sorted keys so identical runs produce identical files.

        Args:
            data: JSON-compatible mapping
        """
        self.output_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.output_path.with_name(self.output_path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write("\n")
        os.replace(tmp, self.output_path)
        return self.output_path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, encoding="utf-8") as f:
        return json.load(f)
