"""Exception hierarchy shared across the package.

The split mirrors how failures are reported to callers and to the CLI:
configuration problems (bad parameter values), data problems (unreadable or
malformed inputs), and algorithm failures (a run that cannot proceed, such as
seeding finding fewer components than requested).
"""


class MassClusterError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(MassClusterError):
    """A parameter value is invalid or inconsistent."""


class DataError(MassClusterError):
    """Input data is missing, malformed, or incompatible."""


class AlgorithmError(MassClusterError):
    """A clustering stage failed at runtime."""


class SeedingError(AlgorithmError):
    """Component seeding found fewer components than the requested k.

    Attributes
    ----------
    found : int
        Number of connected components in the thresholded sample graph.
    needed : int
        The requested cluster count k.
    tau : float
        The similarity threshold that produced the graph.
    """

    def __init__(self, found, needed, tau):
        self.found = found
        self.needed = needed
        self.tau = tau
        super().__init__(
            f"found {found} connected components at tau={tau:g} but k={needed} "
            f"were requested; raise tau to split the sample graph further"
        )


class GridSearchError(AlgorithmError):
    """Every cell of a parameter grid failed.

    Attributes
    ----------
    cells : list
        Per-cell records, each carrying the failure messages of its trials.
    """

    def __init__(self, cells):
        self.cells = cells
        super().__init__(
            f"all {len(cells)} grid cells failed; see the per-cell failure log"
        )
