"""CSV and JSON writers with a fixed float format (17 significant digits)."""
import csv
import json
import math
import os

import numpy as np


class IoFailure(OSError):
    pass


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    if isinstance(v, (complex, np.complexfloating)):
        return "%.17g%+.17gj" % (v.real, v.imag)
    return str(v)


def write_csv(path, header, rows):
    """Write ``rows`` under ``header``; an empty ``rows`` gives a header-only file."""
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                if len(r) != len(header):
                    raise ValueError("row has %d fields, header %d" % (len(r), len(header)))
                w.writerow([fmt(v) for v in r])
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    return obj


def write_json(path, obj):
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as fh:
            # repr of a Python float round-trips exactly
            json.dump(_plain(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return path


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
