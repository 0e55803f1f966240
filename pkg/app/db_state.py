"""
db_state.py - Registro persistente das execuções (experimentos e benchmarks)

Cada chave vira um documento JSON em <dir>/<key>.json, onde <dir> é:
  - STATE_DIR, se definido
  - senão RESULTS_DIR das configurações (padrão data/results)

Chaves usadas:
  last_run    - último run_experiment (config, arquivos, médias)
  last_bench  - último bench_planners
"""

import json
import logging
import os
from pathlib import Path

from app.core.config import settings

log = logging.getLogger("db_state")


def _data_dir() -> Path:
    return Path(os.getenv("STATE_DIR") or settings.RESULTS_DIR)


def load_state(key: str, default: dict) -> dict:
    path = _data_dir() / f"{key}.json"
    try:
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        log.error(f"load_state({key}) falhou: {e}")
    return dict(default)


def save_state(key: str, obj: dict) -> bool:
    """Grava o documento; falha de disco é logada e não interrompe quem chamou."""
    data_dir = _data_dir()
    try:
        data_dir.mkdir(parents=True, exist_ok=True)
        (data_dir / f"{key}.json").write_text(json.dumps(obj, indent=2, default=str), encoding="utf-8")
        return True
    except OSError as e:
        log.error(f"save_state({key}) falhou: {e}")
        return False


def storage_info() -> dict:
    d = _data_dir()
    return {
        "backend": "json",
        "data_dir": str(d),
        "keys": sorted(p.stem for p in d.glob("*.json")) if d.exists() else [],
    }
