"""
Atalho de linha de comando: python evac.py <subcomando> [opções]

Exemplos:
    python evac.py validate --map data/maps/five_exits.map
    python evac.py run --densities 0.02,0.06 --trials 30 --parallel --workers 8
    python evac.py bench --bench-agents 10,100,1000 --bench-workers 1,2,4,8
    python evac.py plan 12.5 30.0 --crowd 0.06
    python evac.py serve --port 7070 --workers 8 --http
"""

import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
