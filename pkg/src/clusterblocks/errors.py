"""Exception hierarchy shared across the package."""


class ClusterBlocksError(Exception):
    """Base class for all errors raised by this package."""

    category = "internal"


class ModelError(ClusterBlocksError):
    """Invalid model specification or threshold outside the model support."""

    category = "model"


class FunctionalContractError(ClusterBlocksError):
    """A cluster functional violated its registration contract."""

    category = "functional"


class ConfigError(ClusterBlocksError):
    """Invalid block or experiment configuration."""

    category = "config"


class PersistError(ClusterBlocksError):
    """Malformed file or I/O problem while persisting/loading results."""

    category = "io"
