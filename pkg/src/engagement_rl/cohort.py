"""Synthetic patients drawn from a parametric population.

The default population is illustrative. It follows the qualitative shape of a
sedentary-behaviour trial fit (low-to-moderate persistence, burdensome
recommendations with "move" worse than "stand", engagement-building adherence,
sub-50% baseline adherence) but it is not a fitted posterior.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .model import ModelBounds, NoiseSpec, PatientParams, RewardSpec


@dataclass(frozen=True)
class PopulationSpec:
    a_logit_mean: float = -0.4
    a_logit_sd: float = 0.9
    b_mean: tuple = (-0.8, -1.4)
    b_sd: tuple = (0.45, 0.55)
    c_mean: tuple = (1.4, 1.0)
    c_sd: tuple = (0.4, 0.4)
    mu_mean: tuple = (-0.4, -0.8)
    mu_sd: tuple = (0.5, 0.5)

    def __post_init__(self):
        for name in ("b_mean", "b_sd", "c_mean", "c_sd", "mu_mean", "mu_sd"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        sizes = {len(self.b_mean), len(self.b_sd), len(self.c_mean), len(self.c_sd),
                 len(self.mu_mean), len(self.mu_sd)}
        if len(sizes) != 1:
            raise ValueError("per-treatment population vectors must share one length")
        if min(self.b_sd + self.c_sd + self.mu_sd + (self.a_logit_sd,)) < 0:
            raise ValueError("standard deviations must be nonnegative")

    @property
    def M0(self) -> int:
        return len(self.b_mean)


@dataclass
class SyntheticPatient:
    id: int
    params: PatientParams
    raw: dict = field(default_factory=dict)
    augmented: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"id": self.id, "params": self.params.to_dict(), "raw": self.raw,
                "augmented": self.augmented, "notes": list(self.notes)}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticPatient":
        return cls(d["id"], PatientParams.from_dict(d["params"]), d.get("raw", {}),
                   d.get("augmented", False), d.get("notes", []))


def sample_patient(pop: PopulationSpec, bounds: ModelBounds, rng: np.random.Generator,
                   noise: NoiseSpec = NoiseSpec(), patient_id: int = 0) -> SyntheticPatient:
    z = rng.normal(pop.a_logit_mean, pop.a_logit_sd)
    b = rng.normal(pop.b_mean, pop.b_sd)
    c = rng.normal(pop.c_mean, pop.c_sd)
    mu = rng.normal(pop.mu_mean, pop.mu_sd)
    a_raw = float(expit(z))
    raw = {"a_logit": float(z), "a": a_raw, "b": b.tolist(), "c": c.tolist(),
           "mu": mu.tolist()}
    params = PatientParams(
        min(max(a_raw, 0.0), bounds.a_bar),
        np.clip(b, -bounds.b_bar, bounds.b_bar),
        np.clip(c, -bounds.c_bar, bounds.c_bar),
        np.clip(mu, -bounds.mu_bar, bounds.mu_bar),
        noise,
    )
    return SyntheticPatient(patient_id, params, raw)


def sample_cohort(pop: PopulationSpec, bounds: ModelBounds, n: int, seed: int,
                  noise: NoiseSpec = NoiseSpec()) -> list[SyntheticPatient]:
    """Patient ``i`` depends only on (pop, seed, i)."""
    return [sample_patient(pop, bounds, np.random.default_rng([seed, i]), noise, i)
            for i in range(n)]


class AugmentationError(ValueError):
    pass


def augment_motivating_action(patient: SyntheticPatient, scale: float,
                              c_bar: float | None = None) -> SyntheticPatient:
    """Append a reward-free, cost-free action whose adherence effect is scale * (1 - a)."""
    if patient.augmented:
        raise AugmentationError(f"patient {patient.id} already has a motivating action")
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    p = patient.params
    c3 = scale * (1.0 - p.a)
    notes = list(patient.notes)
    if c_bar is not None and c3 > c_bar:
        notes.append(f"c_motivating {c3:.6g} clipped to {c_bar}")
        warnings.warn(notes[-1])
        c3 = c_bar
    params = PatientParams(p.a, np.append(p.b, 0.0), np.append(p.c, c3),
                           np.append(p.mu, 0.0), p.noise)
    return SyntheticPatient(patient.id, params, dict(patient.raw), True, notes)


def augmented_reward(rho: tuple, beta: float, beta0: float, gamma: float) -> RewardSpec:
    """Reward spec with the motivating action's reward fixed at zero."""
    return RewardSpec(tuple(rho) + (0.0,), beta, beta0, gamma)


def population_to_dict(pop: PopulationSpec) -> dict:
    return asdict(pop)


def save_cohort(path, patients: list[SyntheticPatient]) -> None:
    from ._io import atomic_write_text

    atomic_write_text(path, json.dumps([p.to_dict() for p in patients], indent=2))


def load_cohort(path) -> list[SyntheticPatient]:
    with open(path) as fh:
        return [SyntheticPatient.from_dict(d) for d in json.load(fh)]
