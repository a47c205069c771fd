"""Binary file formats for grids, adapters and checkpoints."""

from src.storage.files import (
    import_external,
    load_network,
    read_adapters,
    read_checkpoint,
    read_grid,
    write_adapters,
    write_checkpoint,
    write_grid,
)
from src.storage.models import ExternalLayout

__all__ = [
    "ExternalLayout",
    "import_external",
    "load_network",
    "read_adapters",
    "read_checkpoint",
    "read_grid",
    "write_adapters",
    "write_checkpoint",
    "write_grid",
]
