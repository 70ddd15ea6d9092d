"""CSV panels in and result tables out."""

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from targeted_factors._internals.errors import MalformedCsv

logger = logging.getLogger(__name__)

NA_VALUES = ["", "NA"]
FLOAT_FORMAT = "%.17g"


def read_panel_csv(path: str | Path) -> tuple[pd.DataFrame, pd.Series | None]:
    """
    Read a numeric panel with a header row.

    A non-numeric first column is taken as opaque date labels. Empty cells and "NA" are
    missing.

    Returns:
        The numeric columns (float, NaN for missing) and the date labels if present.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=NA_VALUES, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise MalformedCsv(f"{path}: {exc}") from exc
    if frame.shape[1] == 0 or frame.shape[0] == 0:
        raise MalformedCsv(f"{path}: no data rows")

    dates = None
    first = frame.columns[0]
    if pd.to_numeric(frame[first], errors="coerce").isna().gt(frame[first].isna()).any():
        dates = frame[first].fillna("")
        frame = frame.drop(columns=first)
    if frame.shape[1] == 0:
        raise MalformedCsv(f"{path}: no numeric columns")

    numeric = {}
    for column in frame.columns:
        values = pd.to_numeric(frame[column], errors="coerce")
        bad = values.isna() & frame[column].notna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise MalformedCsv(f"{path}: non-numeric value {frame[column].iloc[row]!r} in column {column!r}")
        numeric[column] = values.astype(float)
    logger.debug("Read %s: %d rows, %d columns", path, len(frame), len(numeric))
    return pd.DataFrame(numeric), dates


def read_ratios(path: str | Path) -> np.ndarray:
    """Per-period ratios from the first numeric column of a CSV."""
    frame, _ = read_panel_csv(path)
    values = frame.iloc[:, 0].to_numpy()
    if np.isnan(values).any() or np.any(values != np.round(values)) or np.any(values < 1):
        raise MalformedCsv(f"{path}: ratios must be positive integers")
    return values.astype(int)


def write_matrix_csv(
    path: str | Path, matrix: np.ndarray, columns: list[str], index: pd.Series | None = None, index_label: str = "date"
) -> None:
    frame = pd.DataFrame(np.atleast_2d(matrix), columns=columns)
    if index is not None:
        frame.insert(0, index_label, list(index))
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
