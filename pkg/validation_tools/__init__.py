from .main import (
    detect_endswith,
    detect_header,
    detect_nans,
    locate_nans,
    detect_duplicates,
)

__all__ = [
    "detect_endswith",
    "detect_header",
    "detect_nans",
    "locate_nans",
    "detect_duplicates",
]
