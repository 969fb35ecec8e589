"""Print a ``results.csv`` from ``twophasecox simulate`` as mean (SD) per metric."""

import csv
import sys

METRICS = [("c_index", "C-index", 3), ("calibration_slope", "Slope", 2), ("ibs", "IBS", 3), ("mcc", "MCC", 2)]


def cell(row, key, digits):
    mean, sd = row[f"{key}_mean"], row[f"{key}_sd"]
    if mean == "NA":
        return "NA"
    return f"{float(mean):.{digits}f} ({float(sd):.{digits}f})"


def main(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    header = ["scenario", "method", *(label for _, label, _ in METRICS), "failed"]
    table = [[r["scenario"], r["method"], *(cell(r, k, d) for k, _, d in METRICS), r["failures"]] for r in rows]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *table)]
    for line in [header, *table]:
        print("  ".join(str(x).ljust(w) for x, w in zip(line, widths)))


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit("usage: summarize_results.py RESULTS_CSV")
    main(sys.argv[1])
