"""Exception hierarchy shared across the package.

Everything the CLI should report as a data/model problem (exit code 2)
derives from :class:`S2SError`.
"""


class S2SError(Exception):
    """Base class for data, model and geometry errors."""


class ShapeSizeError(S2SError, ValueError):
    """Array dimensions do not agree (e.g. beta length vs. shape basis)."""


class MeshParseError(S2SError, ValueError):
    """A mesh or basis file could not be parsed."""


class UnsupportedFormatError(MeshParseError):
    """The file is well-formed but uses a feature we do not read (quads, ...)."""


class MeshTopologyError(S2SError, ValueError):
    """The mesh is not a closed, consistently oriented 2-manifold."""


class ConstructionError(S2SError, ValueError):
    """A procedural model could not be built from the given config."""


class SliceError(S2SError, ValueError):
    """A cross-section was empty or did not close into loops."""


class ImageFormatError(S2SError, ValueError):
    """A silhouette image file is malformed."""


class TrainingDivergedError(S2SError, FloatingPointError):
    """Training produced a non-finite loss."""


class SolverError(S2SError, ValueError):
    """A linear system could not be factorized."""


class DatasetError(S2SError, ValueError):
    """A dataset manifest is inconsistent or references missing files."""
