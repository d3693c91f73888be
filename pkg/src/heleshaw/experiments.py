"""Built-in verification experiments and their quantitative targets.

Each experiment pins the initial shape, surface tension, time step and
horizon of one relaxation run, together with the modes whose decay rates
are compared against the dispersion relation and the tolerances the run
must meet.  Time steps are expressed as fractions of the slowest checked
mode's decay time.
"""
from __future__ import annotations

from dataclasses import dataclass

from .geometry import PolarShapeSpec
from .lsa import dispersion_rate

__all__ = ["Experiment", "EXPERIMENTS"]

SIGMA = 0.5


@dataclass(frozen=True)
class Experiment:
    name: str
    shape: PolarShapeSpec
    sigma: float
    dt: float
    t_end: float
    output_stride: int
    checked_modes: tuple  # labels like "c2"
    rate_rel_tol: float
    area_tol: float = 1e-6
    ucm_tol: float = 1e-6

    def predicted_rates(self):
        return {label: dispersion_rate(int(label[1:]), self.sigma)
                for label in self.checked_modes}


EXPERIMENTS = {
    # single decaying cosine mode m = 2: dt = 0.0005 tau_2, run 1.5 tau_2
    "m2": Experiment(
        name="m2",
        shape=PolarShapeSpec(1.0, ((2, 0.05, 0.0),)),
        sigma=SIGMA,
        dt=0.0005 / 3.0,
        t_end=1.5 / 3.0,
        output_stride=25,
        checked_modes=("c2",),
        rate_rel_tol=0.01,
    ),
    # single decaying cosine mode m = 3: dt = 0.0005 tau_3, run 1.5 tau_3
    "m3": Experiment(
        name="m3",
        shape=PolarShapeSpec(1.0, ((3, 0.05, 0.0),)),
        sigma=SIGMA,
        dt=0.0005 / 12.0,
        t_end=1.5 / 12.0,
        output_stride=25,
        checked_modes=("c3",),
        rate_rel_tol=0.01,
    ),
    # superposed small perturbations in modes 2..5; dt = 0.005 tau_5
    "mixed": Experiment(
        name="mixed",
        shape=PolarShapeSpec(
            1.0, ((2, 0.03, 0.0), (3, 0.0, -0.03), (4, 0.0, 0.03), (5, -0.03, 0.0))
        ),
        sigma=SIGMA,
        dt=0.005 / 120.0,
        t_end=6.0 / 120.0,
        output_stride=10,
        checked_modes=("c2", "s3", "s4", "c5"),
        rate_rel_tol=0.02,
    ),
    # unperturbed disk: conservation only
    "circle": Experiment(
        name="circle",
        shape=PolarShapeSpec(1.0),
        sigma=SIGMA,
        dt=1e-3,
        t_end=0.1,
        output_stride=5,
        checked_modes=(),
        rate_rel_tol=0.0,
    ),
}
