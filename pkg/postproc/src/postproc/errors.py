"""Error type shared by the readers and the plotters."""


class FormatError(ValueError):
    """An input file does not follow the documented CSV or VTK layout."""
