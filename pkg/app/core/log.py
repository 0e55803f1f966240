"""
Configuração de logging compartilhada (CLI, servidor HTTP e servidor TCP).
"""

import logging

from app.core.config import settings

_FORMAT = "[%(asctime)s] %(levelname)s [%(name)s] %(message)s"
_configured = False


def setup_logging(level: str = None) -> None:
    """Configura o logging raiz uma única vez; chamadas seguintes só ajustam o nível."""
    global _configured
    lvl = getattr(logging, (level or settings.LOG_LEVEL).upper(), logging.INFO)
    if not _configured:
        logging.basicConfig(level=lvl, format=_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")
        _configured = True
    logging.getLogger().setLevel(lvl)
