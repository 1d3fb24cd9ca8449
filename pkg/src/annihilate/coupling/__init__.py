"""Coupled systems, tracers, bounding walks and entangled tracer pairs."""
from ..core import delete_particle, resample_particle
from .clocks import (BoundingWalks, DiscretePath, Stepper, TracerClock, TracerTriple,
                     bounding_paths, hit_set)
from .entangle import (EntangledPair, EntangledRun, EntangledWalk, EntanglementError, Quintuple,
                       StepTrace, entangle_continuous, entangle_discrete, entangle_trace)
from .initial import CoupledInit, CouplingError, couple_initial, default_m, max_m
from .tracers import (CoupledRun, IdentityViolation, Tracer, evolve_coupled_equal,
                      evolve_coupled_general, wandering_tracer)

__all__ = [
    "BoundingWalks", "CoupledInit", "CoupledRun", "CouplingError", "DiscretePath",
    "EntangledPair", "EntangledRun", "EntangledWalk", "EntanglementError", "IdentityViolation",
    "Quintuple", "StepTrace", "Stepper", "Tracer", "TracerClock", "TracerTriple",
    "bounding_paths", "couple_initial", "default_m", "delete_particle", "entangle_continuous",
    "entangle_discrete", "entangle_trace", "evolve_coupled_equal", "evolve_coupled_general",
    "hit_set", "max_m", "resample_particle", "wandering_tracer",
]
