"""Monte Carlo wavefunction simulator of atomic transport in a near-resonant
1D optical lattice: trajectory ensembles with spontaneous-emission jumps,
flight statistics, energy-space diffusion estimates and a drift-diffusion
first-passage model."""

__version__ = "0.1.0"

from .dynamics import (
    AtomState,
    AtomStateDerivative,
    LatticeParams,
    MemorySink,
    SpontaneousEvent,
    TrajectoryAborted,
    apply_jump,
    coherent_derivs,
    evolve,
    rk4_step,
    sample_recoil,
)
from .observables import (
    EnergyReading,
    analytic_friction,
    coherent_energy_rate,
    energy,
    energy_readings,
    jump_energy_change,
    pseudoenergy,
    to_si,
)

from .ensemble import (
    EnsembleConfig,
    EnsembleResult,
    InitialConditions,
    TrajectoryLog,
    derive_stream,
    load_logs,
    run_ensemble,
)
from .fokker_planck import (
    FpeGrid,
    FpeSolution,
    analytic_diffusion,
    analytic_drift,
    first_passage_pdf,
    flight_pdf_model,
    gaussian_check,
    inverse_gaussian_fpt,
    point_density,
    solve_fpe,
)
from .stats import (
    CaptureMomentum,
    DiffusionBin,
    FlightRecord,
    FlightSet,
    LogHistogram,
    SweepPoint,
    collect_flights,
    detect_capture_momentum,
    detuning_sweep,
    estimate_diffusion,
    extract_flights,
    fit_power_law_slope,
    log_binned_pdf,
)
