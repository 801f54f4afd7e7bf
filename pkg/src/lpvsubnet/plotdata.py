"""Wide CSV tables <-> tidy long format (one observation per row)."""
import csv
from pathlib import Path

TIDY_HEADER = ["source", "series", "index", "value"]


def read_table(path):
    """Header plus rows of a numeric CSV whose first column is the index; blanks stay ``None``."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValueError(f"{path}: missing header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) if v != "" else None for v in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
            if rows[-1][0] is None:
                raise ValueError(f"{path}:{lineno}: missing index value")
    return header, rows


def _num(v):
    return repr(int(v)) if float(v).is_integer() and abs(v) < 2**53 else repr(v)


def tidy_rows(source, header, rows):
    for col, name in enumerate(header[1:], start=1):
        for row in rows:
            if row[col] is not None:
                yield [source, name, _num(row[0]), repr(row[col])]


def export(inputs, out):
    """Write the tidy union of ``inputs``; returns the number of observations."""
    n = 0
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIDY_HEADER)
        for path in inputs:
            header, rows = read_table(path)
            for rec in tidy_rows(Path(path).stem, header, rows):
                w.writerow(rec)
                n += 1
    return n


def pivot(path, source):
    """Rebuild ``{series: {index: value}}`` of one source from a tidy file."""
    table = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != TIDY_HEADER:
            raise ValueError(f"{path}: not a tidy plot-data file")
        for rec in reader:
            if rec[0] == source:
                table.setdefault(rec[1], {})[float(rec[2])] = float(rec[3])
    return table
