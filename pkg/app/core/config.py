"""
Configurações da aplicação Evac Router
"""

import os
from typing import List


def _env_list(name: str, default: str, cast=float) -> list:
    raw = os.getenv(name, default)
    return [cast(v) for v in raw.split(",") if v.strip()]


class Settings:
    """Configurações globais da aplicação"""

    # Aplicação
    APP_NAME: str = "Evac Router"
    APP_VERSION: str = "1.0.0"
    DEBUG: bool = os.getenv("DEBUG", "False").lower() == "true"

    # ── Grid / planta ──────────────────────────────────────────────────
    CELL_SIZE: float = float(os.getenv("CELL_SIZE", "1.0"))  # metros por célula (100 m / 100 células)
    GRID_CONNECTIVITY: int = int(os.getenv("GRID_CONNECTIVITY", "8"))  # 8 (padrão) ou 4
    MAP_FILE: str = os.getenv("MAP_FILE", "data/maps/five_exits.map")

    # ── Mapa de densidade ──────────────────────────────────────────────
    GAMMA: float = float(os.getenv("GAMMA", "5.0"))  # coeficiente de congestionamento
    PATCH_RADIUS: int = int(os.getenv("PATCH_RADIUS", "3"))  # Chebyshev, em células

    # ── Roteador ───────────────────────────────────────────────────────
    BETA: float = float(os.getenv("BETA", "0.5"))  # 1 = só distância, 0 = só densidade
    RAW_HEURISTIC: bool = os.getenv("RAW_HEURISTIC", "False").lower() == "true"
    # reservado: desconto ao trocar de saída num replanejamento (0 = desligado)
    REROUTE_DISCOUNT: float = float(os.getenv("REROUTE_DISCOUNT", "0.0"))

    # ── Simulador ──────────────────────────────────────────────────────
    V_MAX: float = float(os.getenv("V_MAX", "1.5"))  # m/s, caminhada típica
    V_MIN_FRAC: float = float(os.getenv("V_MIN_FRAC", "0.1"))
    RHO_CAP: float = float(os.getenv("RHO_CAP", "6.0"))
    TICK_SECONDS: float = float(os.getenv("TICK_SECONDS", "1.0"))
    REPLAN_EVERY: int = int(os.getenv("REPLAN_EVERY", "5"))  # ticks
    TICK_LIMIT: int = int(os.getenv("TICK_LIMIT", "10000"))
    MAP_DENSITY: float = float(os.getenv("MAP_DENSITY", "0.02"))  # agentes por célula livre
    SEED: int = int(os.getenv("SEED", "0"))
    POLICY: str = os.getenv("POLICY", "congestion_aware")  # ou nearest_exit
    SPAWN_MODE: str = os.getenv("SPAWN_MODE", "uniform")  # ou clustered
    SPAWN_CLUSTERS: int = int(os.getenv("SPAWN_CLUSTERS", "3"))
    SPAWN_CLUSTER_SPREAD: float = float(os.getenv("SPAWN_CLUSTER_SPREAD", "4.0"))  # células
    # reservado: modelo preditivo de movimento (não implementado)
    PREDICTIVE_MOVEMENT: bool = os.getenv("PREDICTIVE_MOVEMENT", "False").lower() == "true"

    # ── Dispatch (master + workers) ────────────────────────────────────
    WORKERS: int = int(os.getenv("WORKERS", str(min(8, os.cpu_count() or 1))))
    WORKER_BACKEND: str = os.getenv("WORKER_BACKEND", "process")  # process ou thread
    QUEUE_BOUND: int = int(os.getenv("QUEUE_BOUND", "4096"))  # por worker
    REPUBLISH_MS: int = int(os.getenv("REPUBLISH_MS", "100"))
    BATCH_WINDOW_MS: int = int(os.getenv("BATCH_WINDOW_MS", "5"))
    TCP_HOST: str = os.getenv("TCP_HOST", "127.0.0.1")
    TCP_PORT: int = int(os.getenv("TCP_PORT", "7070"))
    SERVE_TCP: bool = os.getenv("SERVE_TCP", "True").lower() == "true"  # sobe o servidor de linhas junto da API
    HTTP_HOST: str = os.getenv("HTTP_HOST", "0.0.0.0")
    HTTP_PORT: int = int(os.getenv("PORT", "8000"))
    RATE_LIMIT: str = os.getenv("RATE_LIMIT", "600/minute")

    # ── Experimentos / benchmark ───────────────────────────────────────
    TRIALS: int = int(os.getenv("TRIALS", "30"))
    CONFIDENCE: float = 0.98  # intervalo de confiança reportado
    DENSITY_SWEEP: List[float] = _env_list("DENSITY_SWEEP", "0.02,0.06")
    BENCH_AGENTS: List[int] = _env_list("BENCH_AGENTS", "10,100,500,1000", int)
    BENCH_WORKERS: List[int] = _env_list("BENCH_WORKERS", "1,2,4,8", int)
    BENCH_TRIALS: int = int(os.getenv("BENCH_TRIALS", "3"))
    RESULTS_DIR: str = os.getenv("RESULTS_DIR", "data/results")

    # Logs
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")


settings = Settings()
