"""Compare a fitted summary table against external reference values.

Reads the ``summary.csv`` written by ``mcqr summarize`` and a reference CSV
with columns ``param`` plus any subset of the summary's columns (for example
``mean_tau0.5``).  Prints the two side by side with absolute and relative
deviations.  Reporting only; no pass/fail judgement, since reference tables
from other software differ by estimator, prior and run length.

Example
-------
python scripts/compare_tables.py fit_out/summary.csv reference.csv
"""

import argparse
import sys

import numpy as np
import pandas as pd


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("summary", help="summary.csv from a summarize run")
    ap.add_argument("reference", help="CSV with a param column and reference values")
    ap.add_argument("--digits", type=int, default=4)
    return ap.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    fitted = pd.read_csv(args.summary, index_col="param")
    reference = pd.read_csv(args.reference, index_col="param")

    shared_cols = [c for c in reference.columns if c in fitted.columns]
    if not shared_cols:
        print(f"no shared columns; summary has {list(fitted.columns)}, "
              f"reference has {list(reference.columns)}", file=sys.stderr)
        return 1
    shared_rows = fitted.index.intersection(reference.index)
    missing = reference.index.difference(fitted.index)
    if len(missing):
        print(f"note: reference rows absent from the fit: {list(missing)}")

    blocks = []
    for col in shared_cols:
        fit_v = fitted.loc[shared_rows, col]
        ref_v = reference.loc[shared_rows, col]
        diff = fit_v - ref_v
        rel = diff / np.where(ref_v != 0, np.abs(ref_v), np.nan)
        blocks.append(pd.DataFrame({
            f"{col}:fit": fit_v, f"{col}:ref": ref_v,
            f"{col}:diff": diff, f"{col}:rel": rel,
        }))
    table = pd.concat(blocks, axis=1)
    print(table.round(args.digits).to_string())
    worst = max(float(np.nanmax(np.abs(b.iloc[:, 2]))) for b in blocks)
    print(f"\nlargest absolute deviation: {worst:.{args.digits}f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
