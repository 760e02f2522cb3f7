from __future__ import annotations

import sys
from pathlib import Path
from typing import Dict, Sequence

from app.ablation import ablate, ablation_lines
from app.commands.common import build_run_config, parse_config_file
from app.errors import ScaError
from app.log import configure_logging
from app.schemas import AblationRow
from app.synthetic import generate

ROOT_DIR = Path(__file__).resolve().parents[1]
CONFIG_FILE = ROOT_DIR / "data" / "ablation.cfg"
REPEATS = 3
NO_CONTEXT_MARGIN = 0.10


def check_order(rows: Sequence[AblationRow]) -> Dict[str, bool]:
    ppa = {row.mode: row.ppa for row in rows}
    return {
        "sca >= baseline_ave": ppa["sca"] >= ppa["baseline_ave"],
        "sca >= baseline_no + 10 points": ppa["sca"] >= ppa["baseline_no"] + NO_CONTEXT_MARGIN,
    }


def main() -> int:
    configure_logging("WARNING")
    try:
        cfg = build_run_config(parse_config_file(CONFIG_FILE))
        dataset = generate(cfg.synthesis())
        rows = ablate(cfg, dataset, REPEATS)
    except ScaError as exc:
        print(f"[ablation] {exc}")
        return 1

    for line in ablation_lines(rows):
        print(f"[ablation] {line}")
    checks = check_order(rows)
    for name, ok in checks.items():
        print(f"[ablation] {name}: {'ok' if ok else 'FAILED'}")
    return 0 if all(checks.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
