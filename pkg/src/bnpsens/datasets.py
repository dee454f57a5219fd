"""CSV ingestion and the bundled iris fixture.

Files are expected to carry one header row followed by numeric rows.
Non-numeric columns are dropped with a warning (so labeled datasets load
without preprocessing); ragged rows and non-finite values are hard
errors that report the offending physical line number.
"""

import csv
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from .model import Dataset


def load_csv(path, standardize: bool = False) -> Dataset:
    """Load an N x D dataset from a headed CSV file.

    Parameters
    ----------
    path : str or Path
        File with one header row; columns whose values do not all parse
        as numbers are ignored (with a warning naming them).
    standardize : bool
        If true, center each column and scale it to unit sample
        standard deviation.  Constant columns are centered only.

    Returns
    -------
    Dataset
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        table = [(lineno, row) for lineno, row in enumerate(reader, start=1)
                 if row and any(cell.strip() for cell in row)]
    if not table:
        raise ValueError(f"{path}: file is empty")
    if len(table) < 2:
        raise ValueError(f"{path}: no data rows after the header")

    header = [cell.strip() for cell in table[0][1]]
    width = len(header)
    for lineno, row in table[1:]:
        if len(row) != width:
            raise ValueError(
                f"{path}: line {lineno} has {len(row)} fields, expected {width}")

    columns = []
    dropped = []
    for j, name in enumerate(header):
        parsed = np.empty(len(table) - 1)
        ok = True
        for i, (lineno, row) in enumerate(table[1:]):
            try:
                parsed[i] = float(row[j])
            except ValueError:
                ok = False
                break
        if not ok:
            dropped.append(name)
            continue
        bad = np.flatnonzero(~np.isfinite(parsed))
        if bad.size:
            lineno = table[1 + int(bad[0])][0]
            raise ValueError(
                f"{path}: non-finite value in column {name!r} on line {lineno}")
        columns.append(parsed)

    if dropped:
        warnings.warn(
            f"{path.name}: ignoring non-numeric column(s) {', '.join(dropped)}",
            stacklevel=2)
    if not columns:
        raise ValueError(f"{path}: no numeric columns")

    points = np.column_stack(columns)
    if standardize:
        points = points - points.mean(axis=0)
        sd = points.std(axis=0, ddof=1)
        keep = sd > 0.0
        if not np.all(keep):
            warnings.warn(f"{path.name}: constant column(s) centered but not "
                          "scaled", stacklevel=2)
        points[:, keep] /= sd[keep]
    return Dataset(points)


def load_iris(standardize: bool = False) -> Dataset:
    """The bundled 150 x 4 iris measurements (species column dropped)."""
    with resources.as_file(resources.files("bnpsens").joinpath("data/iris.csv")) as p:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # the species column is expected
            return load_csv(p, standardize=standardize)
