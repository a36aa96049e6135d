"""Monte Carlo time-tag generation and the coincidence engine."""
from .coincidence import (
    CoincidenceHistogram,
    accidental_rate,
    centered_range,
    cross_correlate,
    window_counts,
)
from .source import SourceSpec, derive_seed, make_rng, outcome_probabilities, simulate
from .tags import (
    IDLER,
    SIGNAL,
    TagFormatError,
    TimeTag,
    TimeTagStream,
    read_tag_csv,
    read_ttag,
    write_tag_csv,
    write_ttag,
)

__all__ = [
    "CoincidenceHistogram",
    "IDLER",
    "SIGNAL",
    "SourceSpec",
    "TagFormatError",
    "TimeTag",
    "TimeTagStream",
    "accidental_rate",
    "centered_range",
    "cross_correlate",
    "derive_seed",
    "make_rng",
    "outcome_probabilities",
    "read_tag_csv",
    "read_ttag",
    "simulate",
    "window_counts",
    "write_tag_csv",
    "write_ttag",
]
