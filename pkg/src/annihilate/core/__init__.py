"""Graphical construction of the two-type annihilating system."""
from .system import (
    Annihilation,
    Configuration,
    EventLog,
    Jump,
    MassLedger,
    RawRun,
    SimParams,
    SimulationError,
    SystemSpec,
    annihilation_time,
    delete_particle,
    evolve,
    evolve_spec,
    format_nu,
    parse_nu,
    particle_arrays,
    read_jsonl,
    resample_particle,
    run_raw,
    sample_initial,
    truncate,
)
