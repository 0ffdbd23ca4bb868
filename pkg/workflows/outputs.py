"""
Output directory layout: CSV series, KSF1 snapshots and the run manifest.
"""
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence
import csv
import json
import math

from engine import __version__
from engine.fields import Grid2D, write_snapshot
from engine.integrator import TrajectoryRecord

MANIFEST_NAME = "manifest.json"


def _jsonable(value: Any) -> Any:
    """Replace non-finite floats (invalid JSON) by strings"""
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)
    return path


def write_csv(path: Path, rows: Sequence[Dict[str, Any]],
              fieldnames: Optional[List[str]] = None) -> Path:
    """CSV with a header; columns default to the keys of the first row"""
    path.parent.mkdir(parents=True, exist_ok=True)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=fieldnames)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in fieldnames})
    return path


def series_fieldnames(record: TrajectoryRecord) -> List[str]:
    return ["t", "sup_norm", "mass", "min_value"] + [f"L{p:g}" for p in record.lp_norms]


def write_series(path: Path, record: TrajectoryRecord) -> Path:
    """Time series CSV: t, sup_norm, mass, min_value, one column per L^p norm"""
    return write_csv(path, record.series_rows(), series_fieldnames(record))


def write_snapshots(directory: Path, record: TrajectoryRecord, prefix: str = "u") -> List[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    return [
        write_snapshot(directory / f"{prefix}_t{t:.6g}.ksf", field, t)
        for t, field in sorted(record.snapshots.items())
    ]


def grid_summary(grid: Grid2D) -> Dict[str, Any]:
    return {"nx": grid.nx, "ny": grid.ny, "lx": grid.lx, "ly": grid.ly}


def build_manifest(command: str, config_echo: Dict[str, Any], seed: int, grid: Grid2D,
                   thresholds: Optional[Dict[str, Any]] = None,
                   extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Everything needed to re-run bit-identically, plus a creation timestamp"""
    manifest = {
        "command": command,
        "code_version": __version__,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "seed": seed,
        "grid": grid_summary(grid),
        "config": config_echo,
        "thresholds": thresholds or {},
    }
    manifest.update(extra or {})
    return manifest


def write_manifest(directory: Path, manifest: Dict[str, Any]) -> Path:
    return write_json(directory / MANIFEST_NAME, manifest)


def load_manifest(directory: Path) -> Dict[str, Any]:
    return json.loads((directory / MANIFEST_NAME).read_text(encoding="utf-8"))


def comparable(manifest: Dict[str, Any], volatile: Iterable[str] = ("created_at", "run_log")) -> Dict[str, Any]:
    """Manifest without timestamped keys, for byte comparisons between re-runs"""
    return {k: v for k, v in manifest.items() if k not in set(volatile)}
