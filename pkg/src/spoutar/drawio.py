"""Draw storage: a self-describing binary container plus a CSV export.

Layout: one magic line, one JSON header line, then ``n_draws`` fixed-width
little-endian float64 records.  Record ``i`` starts at
``header_end + i * record_bytes`` so single draws can be read without
loading the file.
"""
from __future__ import annotations

import csv
import json

import numpy as np

from .sampler import PosteriorDraws

MAGIC = b"SPOUTAR-DRAWS 1\n"
_DTYPE = np.dtype("<f8")


def _layout(draws: PosteriorDraws) -> list[tuple[str, list[int]]]:
    m = draws.p * (draws.p - 1) // 2
    out = [("d", [draws.p]), ("l1", [m])]
    if draws.paired:
        out.append(("l2", [m]))
    out += [("a", [m]), ("pacf", [draws.p, draws.q]), ("xi", []), ("lam", [3]), ("s2", [3])]
    return out


def _width(shape) -> int:
    return int(np.prod(shape)) if shape else 1


def write_draws(draws: PosteriorDraws, path) -> None:
    layout = _layout(draws)
    header = {"p": draws.p, "q": draws.q, "n_draws": draws.n_draws, "paired": draws.paired,
              "dtype": "float64-le", "layout": [[k, s] for k, s in layout]}
    width = sum(_width(s) for _, s in layout)
    rec = np.empty((draws.n_draws, width), dtype=_DTYPE)
    col = 0
    for name, shape in layout:
        w = _width(shape)
        rec[:, col : col + w] = np.asarray(getattr(draws, name), dtype=float).reshape(draws.n_draws, w)
        col += w
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(rec.tobytes())


def _read_header(fh):
    if fh.readline() != MAGIC:
        raise ValueError("not a draw file (bad magic line)")
    try:
        header = json.loads(fh.readline())
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt draw-file header: {exc}") from None
    return header


def read_draws(path, select=None) -> PosteriorDraws:
    """Load all draws, or only the record indices in ``select``."""
    with open(path, "rb") as fh:
        header = _read_header(fh)
        start = fh.tell()
        layout = [(k, list(s)) for k, s in header["layout"]]
        width = sum(_width(s) for _, s in layout)
        n = header["n_draws"]
        if select is None:
            raw = np.frombuffer(fh.read(), dtype=_DTYPE)
            if raw.size != n * width:
                raise ValueError(f"draw file truncated: expected {n * width} values, found {raw.size}")
            rec = raw.reshape(n, width)
        else:
            idx = np.atleast_1d(select)
            rec = np.empty((idx.size, width))
            for r, i in enumerate(idx):
                if not 0 <= i < n:
                    raise IndexError(f"draw {i} out of range [0, {n})")
                fh.seek(start + int(i) * width * 8)
                rec[r] = np.frombuffer(fh.read(width * 8), dtype=_DTYPE)
    parts, col = {}, 0
    for name, shape in layout:
        w = _width(shape)
        parts[name] = rec[:, col : col + w].reshape((rec.shape[0], *shape))
        col += w
    return PosteriorDraws(p=header["p"], q=header["q"], d=parts["d"], l1=parts["l1"],
                          l2=parts.get("l2"), a=parts["a"], pacf=parts["pacf"],
                          xi=parts["xi"], lam=parts["lam"], s2=parts["s2"])


def export_csv(draws: PosteriorDraws, path) -> None:
    """One row per draw; columns named ``field[index]``."""
    layout = _layout(draws)
    names, cols = [], []
    for name, shape in layout:
        arr = np.asarray(getattr(draws, name), dtype=float).reshape(draws.n_draws, -1)
        for idx in np.ndindex(*shape) if shape else [()]:
            names.append(name + ("[" + ",".join(map(str, idx)) + "]" if idx else ""))
        cols.append(arr)
    table = np.hstack(cols) if cols else np.empty((0, 0))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in table:
            w.writerow([repr(float(v)) for v in row])
