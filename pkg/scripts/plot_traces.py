"""Plot chain traces exported by ``mcqr diagnose``.

Development aid: turns the tidy ``trace_*.csv`` files under a diagnose
output directory into one PNG per parameter, chains overlaid.

Example
-------
python scripts/plot_traces.py diag_out/tau_0.5 --out plots
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # headless use
import matplotlib.pyplot as plt
import pandas as pd


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("trace_dir", help="directory holding trace_*.csv files")
    ap.add_argument("--out", default=None, help="output directory (default: trace_dir)")
    ap.add_argument("--dpi", type=int, default=100)
    return ap.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    trace_dir = Path(args.trace_dir)
    out_dir = Path(args.out) if args.out is not None else trace_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    paths = sorted(trace_dir.glob("trace_*.csv"))
    if not paths:
        raise SystemExit(f"no trace_*.csv files under {trace_dir}")
    for path in paths:
        frame = pd.read_csv(path)
        fig, ax = plt.subplots(figsize=(8, 3))
        for chain_id, block in frame.groupby("chain"):
            ax.plot(block["iter"], block["value"], lw=0.5, label=f"chain {int(chain_id)}")
        ax.set_xlabel("retained iteration")
        ax.set_ylabel(path.stem.removeprefix("trace_"))
        ax.legend(loc="upper right", fontsize="small")
        fig.tight_layout()
        target = out_dir / f"{path.stem}.png"
        fig.savefig(target, dpi=args.dpi)
        plt.close(fig)
        print(f"wrote {target}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
