"""Index-based dispatch for ride-sharing queues with reneging customers."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BimatchError,
    ConfigError,
    InvariantError,
    NumericError,
    UsageError,
)
from .indices import (  # noqa: E402
    IndexTable,
    boundary_sweep,
    build_index_table,
    whittle_index_numeric,
    whittle_index_self_shared,
)
from .network import (  # noqa: E402
    ArrivalProfile,
    EconParams,
    HexLayout,
    ServiceCatalog,
    build_services,
    generate_uniform_network,
    load_real_network,
)
from .simulator import replicate, simulate  # noqa: E402

__all__ = [
    "__version__",
    "BimatchError",
    "ConfigError",
    "InvariantError",
    "NumericError",
    "UsageError",
    "IndexTable",
    "boundary_sweep",
    "build_index_table",
    "whittle_index_numeric",
    "whittle_index_self_shared",
    "ArrivalProfile",
    "EconParams",
    "HexLayout",
    "ServiceCatalog",
    "build_services",
    "generate_uniform_network",
    "load_real_network",
    "replicate",
    "simulate",
]
