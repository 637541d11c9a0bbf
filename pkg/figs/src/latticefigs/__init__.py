"""Figure rendering for lattice random-walk simulation CSV outputs."""

__version__ = "0.1.0"

from .figures import (RENDERERS, SchemaError, diffusion_comparison,
                      energy_trace, flight_pdfs, sweep_curves,
                      velocity_traces)

__all__ = [
    "RENDERERS",
    "SchemaError",
    "diffusion_comparison",
    "energy_trace",
    "flight_pdfs",
    "sweep_curves",
    "velocity_traces",
    "__version__",
]
