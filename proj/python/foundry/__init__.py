"""Template-based SAVE/LOAD of simulated GPU execution graphs.

The heavy lifting lives in the ``_foundry`` extension module; this package
re-exports its public surface.
"""

from ._foundry import (  # noqa: F401
    FoundryError,
    SaveOutcome,
    ServingHandle,
    WorkloadSpec,
    __version__,
    bench,
    diff_archives,
    inspect_graph_json,
    inspect_text,
    load,
    preset,
    preset_names,
    save,
    spec_text,
    workload_from_text,
)

__all__ = [
    "FoundryError",
    "SaveOutcome",
    "ServingHandle",
    "WorkloadSpec",
    "__version__",
    "bench",
    "diff_archives",
    "inspect_graph_json",
    "inspect_text",
    "load",
    "preset",
    "preset_names",
    "save",
    "spec_text",
    "workload_from_text",
]
