"""
CLI do Evac Router

Subcomandos:
  run       experimentos de evacuação (varredura de densidade × políticas × trials)
  bench     tempo de planejamento: single_pass × repeated_astar × dijkstra, e W workers
  plan      rota única a partir de uma posição (metros), opcionalmente com multidão sorteada
  serve     serviço de dispatch (TCP de linhas; --http sobe também a API FastAPI)
  validate  diagnóstico do mapa
  heatmap   CSV x,y,rho do campo de densidade de uma população sorteada

Precedência de configuração: flags > arquivo (--config, key=value) > ambiente > padrão.

Códigos de saída: 0 sucesso | 2 erro de configuração ou mapa | 3 falha em execução.
"""

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence

from app.core.config import settings
from app.core.log import setup_logging
from app.engines.crowd_sim import Scenario, ScenarioError, spawn_population
from app.engines.density_map import DensityField, empty_density
from app.engines.grid_world import MapError, exit_label_index, load_grid, validate_map
from app.engines.router import PlanningError, plan_route
from app.reports import ExperimentConfig, ExperimentError, bench_planners, render_heatmap_csv, run_experiment

log = logging.getLogger("cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(ValueError):
    pass


# ═══════════════════════════════════════════
# CONFIGURAÇÃO
# ═══════════════════════════════════════════

# chave do arquivo / flag → atributo de Settings
CONFIG_KEYS: Dict[str, str] = {
    "map": "MAP_FILE",
    "connectivity": "GRID_CONNECTIVITY",
    "gamma": "GAMMA",
    "patch_radius": "PATCH_RADIUS",
    "beta": "BETA",
    "raw_heuristic": "RAW_HEURISTIC",
    "reroute_discount": "REROUTE_DISCOUNT",
    "v_max": "V_MAX",
    "v_min_frac": "V_MIN_FRAC",
    "rho_cap": "RHO_CAP",
    "tick_seconds": "TICK_SECONDS",
    "replan_every": "REPLAN_EVERY",
    "tick_limit": "TICK_LIMIT",
    "map_density": "MAP_DENSITY",
    "seed": "SEED",
    "policy": "POLICY",
    "spawn": "SPAWN_MODE",
    "clusters": "SPAWN_CLUSTERS",
    "cluster_spread": "SPAWN_CLUSTER_SPREAD",
    "predictive_movement": "PREDICTIVE_MOVEMENT",
    "workers": "WORKERS",
    "backend": "WORKER_BACKEND",
    "queue_bound": "QUEUE_BOUND",
    "republish_ms": "REPUBLISH_MS",
    "host": "TCP_HOST",
    "port": "TCP_PORT",
    "http_port": "HTTP_PORT",
    "trials": "TRIALS",
    "densities": "DENSITY_SWEEP",
    "bench_agents": "BENCH_AGENTS",
    "bench_workers": "BENCH_WORKERS",
    "bench_trials": "BENCH_TRIALS",
    "out": "RESULTS_DIR",
    "log_level": "LOG_LEVEL",
}


def _cast(key: str, raw, current):
    try:
        if isinstance(current, bool):
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return text in ("true", "1", "yes")
        if isinstance(current, list):
            if isinstance(raw, list):
                return raw
            elem = type(current[0]) if current else float
            return [elem(v) for v in str(raw).split(",") if v.strip()]
        return type(current)(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"valor inválido para '{key}': {raw!r}") from e


def load_config_file(path: str) -> Dict[str, str]:
    """key=value por linha; '#' inicia comentário; chave desconhecida é erro."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"arquivo de configuração não encontrado: {path}")
    out: Dict[str, str] = {}
    for n, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: esperado key=value, recebido '{line}'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{n}: chave desconhecida '{key}'")
        out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> Dict[str, object]:
    """Mescla flags, arquivo e Settings (que já traz ambiente > padrão)."""
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    cfg: Dict[str, object] = {}
    for key, attr in CONFIG_KEYS.items():
        current = getattr(settings, attr)
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = _cast(key, flag, current)
        elif key in file_values:
            cfg[key] = _cast(key, file_values[key], current)
        else:
            cfg[key] = current
    return cfg


def apply_to_settings(cfg: Dict[str, object]) -> None:
    """Usado pelo serve: a API lê as configurações globais no lifespan."""
    for key, attr in CONFIG_KEYS.items():
        setattr(settings, attr, cfg[key])


def _load_map(cfg: Dict[str, object]):
    try:
        return load_grid(cfg["map"], cfg["connectivity"])
    except OSError as e:
        raise ConfigError(f"não foi possível ler o mapa '{cfg['map']}': {e}") from e


def _scenario(cfg: Dict[str, object], grid) -> Scenario:
    return Scenario(
        grid=grid,
        map_density=cfg["map_density"],
        beta=cfg["beta"],
        gamma=cfg["gamma"],
        patch_radius=cfg["patch_radius"],
        seed=cfg["seed"],
        policy=cfg["policy"],
        replan_every=cfg["replan_every"],
        tick_seconds=cfg["tick_seconds"],
        v_max=cfg["v_max"],
        v_min_frac=cfg["v_min_frac"],
        rho_cap=cfg["rho_cap"],
        tick_limit=cfg["tick_limit"],
        spawn=cfg["spawn"],
        clusters=cfg["clusters"],
        cluster_spread=cfg["cluster_spread"],
        raw_heuristic=cfg["raw_heuristic"],
        reroute_discount=cfg["reroute_discount"],
        predictive_movement=cfg["predictive_movement"],
    ).validate()


def _experiment_config(cfg: Dict[str, object], args: argparse.Namespace) -> ExperimentConfig:
    return ExperimentConfig(
        densities=list(cfg["densities"]),
        policies=list(args.policies.split(",")) if getattr(args, "policies", None) else ["congestion_aware", "nearest_exit"],
        trials=cfg["trials"],
        seed=cfg["seed"],
        beta=cfg["beta"],
        gamma=cfg["gamma"],
        patch_radius=cfg["patch_radius"],
        replan_every=cfg["replan_every"],
        tick_limit=cfg["tick_limit"],
        spawn=cfg["spawn"],
        clusters=cfg["clusters"],
        cluster_spread=cfg["cluster_spread"],
        v_max=cfg["v_max"],
        v_min_frac=cfg["v_min_frac"],
        rho_cap=cfg["rho_cap"],
        tick_seconds=cfg["tick_seconds"],
        raw_heuristic=cfg["raw_heuristic"],
        planners=list(args.planners.split(",")) if getattr(args, "planners", None) else ["single_pass", "repeated_astar", "dijkstra"],
        bench_agents=list(cfg["bench_agents"]),
        bench_workers=list(cfg["bench_workers"]),
        bench_trials=cfg["bench_trials"],
        workers=cfg["workers"] if getattr(args, "parallel", False) else 1,
        out_dir=str(cfg["out"]),
    ).validate()


# ═══════════════════════════════════════════
# SUBCOMANDOS
# ═══════════════════════════════════════════

def cmd_run(args, cfg) -> int:
    grid = _load_map(cfg)
    _scenario(cfg, grid)
    record = run_experiment(_experiment_config(cfg, args), grid)
    for key, mean in record["mean_egress"].items():
        print(f"[run] {key:<28} mean_egress={mean:.2f}", flush=True)
    return EXIT_OK


def cmd_bench(args, cfg) -> int:
    grid = _load_map(cfg)
    bench_planners(_experiment_config(cfg, args), grid, backend=cfg["backend"])
    return EXIT_OK


def cmd_plan(args, cfg) -> int:
    grid = _load_map(cfg)
    if args.crowd:
        sc = _scenario({**cfg, "map_density": args.crowd}, grid)
        dmap = DensityField.from_positions([a.position for a in spawn_population(sc)], grid,
                                           cfg["gamma"], cfg["patch_radius"])
    else:
        dmap = empty_density(grid, cfg["gamma"], cfg["patch_radius"])
    if not grid.contains_world(args.x, args.y):
        raise ConfigError(f"posição ({args.x}, {args.y}) fora do mapa")
    src = grid.world_to_cell(args.x, args.y)
    route = plan_route(grid, dmap, src, grid.exits, cfg["beta"], cfg["raw_heuristic"])
    if route is None:
        print(f"[plan] sem rota a partir de {tuple(src)}", flush=True)
        return EXIT_RUNTIME
    label = exit_label_index(grid).get(route.chosen_exit, "?")
    print(f"exit {label} {route.chosen_exit.x} {route.chosen_exit.y} cost {route.total_cost:.6f} cells {len(route.cells)}")
    print(" ".join(f"{c.x},{c.y}" for c in route.cells))
    return EXIT_OK


def cmd_serve(args, cfg) -> int:
    apply_to_settings(cfg)
    grid = _load_map(cfg)
    if args.http:
        import uvicorn
        settings.SERVE_TCP = True
        uvicorn.run("app.main:app", host=settings.HTTP_HOST, port=cfg["http_port"], log_level=cfg["log_level"].lower())
        return EXIT_OK

    from app.execution.dispatch import MasterState, PlannerPool, publish_snapshot
    from app.execution.line_server import run_line_server

    state = MasterState(grid=grid, gamma=cfg["gamma"], patch_radius=cfg["patch_radius"],
                        beta=cfg["beta"], raw_heuristic=cfg["raw_heuristic"], queue_bound=cfg["queue_bound"])
    publish_snapshot(state)
    with PlannerPool(grid, workers=cfg["workers"], backend=cfg["backend"], beta=cfg["beta"],
                     raw_heuristic=cfg["raw_heuristic"]) as pool:
        try:
            asyncio.run(run_line_server(state, pool, cfg["host"], cfg["port"]))
        except KeyboardInterrupt:
            print("[serve] encerrado", flush=True)
    return EXIT_OK


def cmd_validate(args, cfg) -> int:
    grid = _load_map(cfg)
    diag = validate_map(grid)
    labels = exit_label_index(grid)
    print(f"map {grid.name} {grid.width}x{grid.height} cell_size={grid.cell_size}")
    print(f"free {diag.free_cells} exits {diag.exit_cells} groups {len(set(labels.values()))} unreachable {diag.unreachable}")
    for c in diag.unreachable_cells[:20]:
        print(f"  unreachable {c.x},{c.y}")
    return EXIT_OK if diag.valid else EXIT_RUNTIME


def cmd_heatmap(args, cfg) -> int:
    grid = _load_map(cfg)
    sc = _scenario(cfg, grid)
    dmap = DensityField.from_positions([a.position for a in spawn_population(sc)], grid, cfg["gamma"], cfg["patch_radius"])
    text = render_heatmap_csv(dmap)
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text, encoding="utf-8")
        print(f"[heatmap] {grid.width * grid.height} linhas em {args.output} (pico {dmap.peak:.6f})", flush=True)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ═══════════════════════════════════════════
# PARSER
# ═══════════════════════════════════════════

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="arquivo key=value")
    p.add_argument("--map", help="arquivo de mapa ASCII")
    p.add_argument("--connectivity", type=int, choices=(4, 8))
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--patch-radius", dest="patch_radius", type=int)
    p.add_argument("--raw-heuristic", dest="raw_heuristic", action="store_const", const=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--log-level", dest="log_level")


def _sim(p: argparse.ArgumentParser) -> None:
    p.add_argument("--map-density", dest="map_density", type=float)
    p.add_argument("--policy", choices=("congestion_aware", "nearest_exit"))
    p.add_argument("--replan-every", dest="replan_every", type=int)
    p.add_argument("--tick-limit", dest="tick_limit", type=int)
    p.add_argument("--spawn", choices=("uniform", "clustered"))
    p.add_argument("--clusters", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evac", description="Roteamento de evacuação com consciência de congestionamento")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="experimentos de evacuação")
    _common(p)
    _sim(p)
    p.add_argument("--densities", help="lista separada por vírgula, ex. 0.02,0.06")
    p.add_argument("--policies", help="congestion_aware,nearest_exit")
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--parallel", action="store_true", help="roda trials em --workers processos")
    p.add_argument("--out", help="diretório de saída")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="tempo de planejamento por variante")
    _common(p)
    p.add_argument("--bench-agents", dest="bench_agents")
    p.add_argument("--bench-workers", dest="bench_workers")
    p.add_argument("--bench-trials", dest="bench_trials", type=int)
    p.add_argument("--planners", help="single_pass,repeated_astar,dijkstra")
    p.add_argument("--backend", choices=("process", "thread"))
    p.add_argument("--out", help="diretório de saída")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plan", help="rota única")
    _common(p)
    _sim(p)
    p.add_argument("x", type=float, help="x em metros")
    p.add_argument("y", type=float, help="y em metros")
    p.add_argument("--crowd", type=float, help="sorteia uma multidão com esta map_density para o campo")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("serve", help="serviço de dispatch")
    _common(p)
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--backend", choices=("process", "thread"))
    p.add_argument("--queue-bound", dest="queue_bound", type=int)
    p.add_argument("--http", action="store_true", help="sobe também a API HTTP (uvicorn)")
    p.add_argument("--http-port", dest="http_port", type=int)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("validate", help="diagnóstico do mapa")
    _common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("heatmap", help="CSV do campo de densidade")
    _common(p)
    _sim(p)
    p.add_argument("-o", "--output", help="arquivo de saída (padrão: stdout)")
    p.set_defaults(func=cmd_heatmap)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    try:
        cfg = resolve_config(args)
        setup_logging(str(cfg["log_level"]))
        return args.func(args, cfg)
    except (ConfigError, MapError, PlanningError, ScenarioError, ExperimentError) as e:
        print(f"[{args.command}] ❌ {e}", file=sys.stderr, flush=True)
        return EXIT_CONFIG
    except Exception as e:
        log.exception(f"{args.command} falhou")
        print(f"[{args.command}] ❌ {e}", file=sys.stderr, flush=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
