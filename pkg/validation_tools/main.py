from typing import List, Sequence
import logging

import pandas as pd

logger = logging.getLogger(__name__)


def detect_endswith(filepath) -> bool:
    """
    Detects the type of file based on its extension.
    Parameters:
        filepath (str | Path): The path to the file to be checked.
    Returns:
        bool: True if the file ends with '.csv', False otherwise.
    """
    tag_endswith = str(filepath).lower().endswith(".csv")
    if not tag_endswith:
        logger.warning("%s does not end in .csv", filepath)
    return tag_endswith


def detect_header(columns: Sequence[str]) -> bool:
    """
    Checks the dataset header ``label,f0,f1,...,f{d-1}``.
    Parameters:
        columns (Sequence[str]): Column names as read from the file.
    Returns:
        bool: True if the first column is 'label' followed by f0..f{d-1} in order
              with d >= 1, False otherwise.
    """
    columns = [str(c).strip() for c in columns]
    if len(columns) < 2 or columns[0] != "label":
        return False
    return columns[1:] == [f"f{i}" for i in range(len(columns) - 1)]


def detect_nans(df: pd.DataFrame) -> bool:
    """
    Detects if a DataFrame contains any NaN values.
    Parameters:
        df (pd.DataFrame): The DataFrame to check for NaN values.
    Returns:
        bool: True if there are no NaN values in the DataFrame, False otherwise.
    """
    return int(df.isnull().sum().sum()) == 0


def locate_nans(df: pd.DataFrame, offset: int = 2) -> List[int]:
    """
    File line numbers of the rows holding at least one NaN.

    ``offset`` converts the 0-based row position into a 1-based line number
    (2 for a single header line).
    """
    mask = df.isnull().any(axis=1).to_numpy()
    return [int(pos) + offset for pos in mask.nonzero()[0]]


def detect_duplicates(values: Sequence) -> bool:
    """Return ``True`` if ``values`` contains no duplicates."""
    return not pd.Series(list(values)).duplicated().any()

