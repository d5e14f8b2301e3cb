"""Exception types raised across the package."""


class MeshError(ValueError):
    """Invalid mesh input or a malformed mesh."""


class ConstraintCycleError(MeshError):
    """Hanging-node constraints reference each other cyclically."""


class NotSPDError(ValueError):
    """An assembled operator failed the positive-definiteness check."""


class TransferError(ValueError):
    """Two spaces are not nested, or a transfer operator is inconsistent."""


class DecompositionError(ValueError):
    """A subspace decomposition does not span its level space."""


class DenseCapError(ValueError):
    """A dense oracle was requested above the configured dimension cap."""


class NonConvergence(RuntimeError):
    """The outer multigrid iteration hit ``max_cycles``.

    The partial :class:`~sscmg.multigrid.CycleReport` is kept on
    ``self.report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
