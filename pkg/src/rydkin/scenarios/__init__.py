"""Declarative scenarios: config parsing, dispatch and result files."""
from pathlib import Path

from .config import KINDS, emit_config, load_document, parse_config
from .runner import OBSERVABLES, ResultBundle, Table, run_scenario, serialize_results, table_csv

PRESET_DIR = Path(__file__).with_name("presets")


def preset_path(kind: str) -> Path:
    return PRESET_DIR / f"{kind}.yaml"


__all__ = ["KINDS", "OBSERVABLES", "PRESET_DIR", "ResultBundle", "Table", "emit_config",
           "load_document", "parse_config", "preset_path", "run_scenario", "serialize_results",
           "table_csv"]
