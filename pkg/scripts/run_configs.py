"""Run every checked-in config through the CLI and tabulate exit codes.

    python3 scripts/run_configs.py                 # all configs, outputs under runs/
    python3 scripts/run_configs.py gibbs haar      # only configs whose name contains a pattern
"""
import argparse
import json
import time
from pathlib import Path

from liestoch import cli

ROOT = Path(__file__).resolve().parent.parent
STATUS = {0: "ok", 1: "fail", 2: "input error", 3: "inconclusive"}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("patterns", nargs="*")
    ap.add_argument("--out", type=Path, default=ROOT / "runs")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    configs = sorted((ROOT / "configs").glob("*.toml"))
    configs = [c for c in configs if c.stem != "heisenberg"]  # algebra file, not a run config
    if args.patterns:
        configs = [c for c in configs if any(p in c.stem for p in args.patterns)]

    rows = []
    for cfg in configs:
        out = args.out / cfg.stem
        t0 = time.perf_counter()
        code = cli.main(["run", str(cfg), "--out", str(out), "--threads", str(args.threads)])
        rows.append((cfg.stem, STATUS.get(code, str(code)), time.perf_counter() - t0))

    width = max(len(r[0]) for r in rows)
    for name, status, secs in rows:
        print(f"{name:<{width}}  {status:<12} {secs:8.1f}s")
    (args.out / "summary.json").write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
