"""Cole-Cole media, scene registry, reference states and residual fields.

A medium at one voxel is the five-parameter vector
(eps_inf, delta_eps, tau, alpha, sigma) mapped to a complex permittivity

    eps(omega) = eps0 * [eps_inf + delta_eps / (1 + (j*omega*tau)^(1-alpha))
                         - j*sigma / (omega*eps0)]

under the e^{j omega t} time convention, so admissible parameters always give
a non-positive imaginary part (loss).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .geometry import Grid

VACUUM_PERMITTIVITY = 8.8541878188e-12  # F/m
VACUUM_PERMEABILITY = 1.25663706127e-6  # H/m

PARAM_NAMES = ("eps_inf", "delta_eps", "tau", "alpha", "sigma")

# componentwise clamp box used by project_physical
_BOX_LOW = np.array([1.0, 0.0, 1e-14, 0.0, 0.0])
_BOX_HIGH = np.array([np.inf, np.inf, np.inf, 0.99, np.inf])


@dataclass(frozen=True)
class ColeColeParams:
    """Five-parameter dispersive medium description at one point.

    eps_inf and delta_eps are dimensionless, tau in seconds, alpha in [0, 1),
    sigma in S/m. Instances are kept unvalidated so the same container can
    hold raw increments; use require_admissible() before constitutive calls.
    """

    eps_inf: float
    delta_eps: float
    tau: float
    alpha: float
    sigma: float

    @property
    def eps_static(self) -> float:
        return self.eps_inf + self.delta_eps

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.eps_inf, self.delta_eps, self.tau, self.alpha, self.sigma]
        )

    @classmethod
    def from_array(cls, values) -> "ColeColeParams":
        values = np.asarray(values, dtype=float)
        if values.shape != (5,):
            raise DomainError("parameter vector must have 5 entries")
        return cls(*(float(v) for v in values))

    def is_admissible(self) -> bool:
        return (
            np.isfinite(self.as_array()).all()
            and self.eps_inf > 0
            and self.delta_eps >= 0
            and self.tau > 0
            and 0 <= self.alpha < 1
            and self.sigma >= 0
        )

    def require_admissible(self) -> None:
        arr = self.as_array()
        if not np.isfinite(arr).all():
            bad = PARAM_NAMES[int(np.flatnonzero(~np.isfinite(arr))[0])]
            raise DomainError(f"non-finite medium parameter: {bad}")
        if not self.is_admissible():
            for name, ok in zip(
                PARAM_NAMES,
                (
                    self.eps_inf > 0,
                    self.delta_eps >= 0,
                    self.tau > 0,
                    0 <= self.alpha < 1,
                    self.sigma >= 0,
                ),
            ):
                if not ok:
                    raise DomainError(f"inadmissible medium parameter: {name}")


# Representative background media (dry lunar soil, dry basalt, pure water
# ice, water-bearing kaolinite sediment, fine-grained clay soil).
SCENES: dict[str, ColeColeParams] = {
    "S1": ColeColeParams(3.00, 0.05, 1.0e-6, 0.30, 1.0e-14),
    "S2": ColeColeParams(8.0, 992.0, 1.0e-6, 0.30, 1.0e-8),
    "S3": ColeColeParams(3.15, 87.85, 2.5e-5, 0.00, 1.0e-8),
    "S4": ColeColeParams(2.0, 33.6, 5.0e-12, 0.20, 8.0e-2),
    "S5": ColeColeParams(10.7, 19.56, 9.55e-12, 0.062, 0.0),
}

SCENE_DESCRIPTIONS: dict[str, str] = {
    "S1": "dry lunar soil (weak contrast, low loss)",
    "S2": "dry basalt (high static permittivity, strong dispersion)",
    "S3": "pure water ice (single Debye relaxation, alpha = 0)",
    "S4": "water-bearing kaolinite sediment (high conductivity)",
    "S5": "fine-grained clay soil (dispersive, near-zero conductivity)",
}


def scene_params(tag: str) -> ColeColeParams:
    try:
        return SCENES[tag]
    except KeyError:
        raise ConfigError(f"unknown scene tag: {tag!r}") from None


def list_scenes() -> tuple[str, ...]:
    return tuple(SCENES)


def _check_param_matrix(values: np.ndarray, context: str) -> None:
    """Raise DomainError naming the first offending parameter column."""
    if not np.isfinite(values).all():
        col = int(np.flatnonzero(~np.isfinite(values).all(axis=0))[0])
        raise DomainError(f"non-finite {PARAM_NAMES[col]} in {context}")
    checks = (
        values[:, 0] > 0,
        values[:, 1] >= 0,
        values[:, 2] > 0,
        (values[:, 3] >= 0) & (values[:, 3] < 1),
        values[:, 4] >= 0,
    )
    for name, ok in zip(PARAM_NAMES, checks):
        if not ok.all():
            raise DomainError(f"inadmissible {name} in {context}")


def cole_cole_array(values: np.ndarray, omega: float) -> np.ndarray:
    """Complex permittivity (F/m) for a (..., 5) parameter array at omega."""
    if not (np.isfinite(omega) and omega > 0):
        raise DomainError("omega must be positive and finite")
    values = np.asarray(values, dtype=float)
    flat = values.reshape(-1, 5)
    _check_param_matrix(flat, "constitutive evaluation")
    eps_inf, delta_eps, tau, alpha = flat[:, 0], flat[:, 1], flat[:, 2], flat[:, 3]
    sigma = flat[:, 4]
    jwt = (1j * omega * tau) ** (1.0 - alpha)
    eps = VACUUM_PERMITTIVITY * (
        eps_inf
        + delta_eps / (1.0 + jwt)
        - 1j * sigma / (omega * VACUUM_PERMITTIVITY)
    )
    if not np.isfinite(eps).all():
        raise DomainError("constitutive evaluation overflowed in tau/alpha")
    return eps.reshape(values.shape[:-1])


def cole_cole_eval(p: ColeColeParams, omega: float) -> complex:
    """Complex permittivity (F/m) of a single medium at angular frequency omega."""
    p.require_admissible()
    return complex(cole_cole_array(p.as_array(), float(omega)))


def project_physical_array(values: np.ndarray) -> np.ndarray:
    """Clamp a (..., 5) raw parameter array into the admissible box."""
    values = np.asarray(values, dtype=float)
    if not np.isfinite(values).all():
        raise DomainError("cannot project non-finite medium parameters")
    return np.clip(values, _BOX_LOW, _BOX_HIGH)


def project_physical(p: ColeColeParams) -> ColeColeParams:
    """Idempotent componentwise clamp of raw parameters into the physical box."""
    return ColeColeParams.from_array(project_physical_array(p.as_array()))


@dataclass(frozen=True)
class MediumField:
    """Per-voxel medium parameters over a grid.

    values has shape (P, 5). Increment fields (raw residuals) skip per-entry
    admissibility, everything else must be physically admissible.
    """

    grid: Grid
    values: np.ndarray
    increment: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.voxel_count, 5):
            raise DomainError("field shape must be (voxel_count, 5)")
        if not self.increment:
            _check_param_matrix(values, "medium field")
        elif not np.isfinite(values).all():
            raise DomainError("non-finite increment field")
        object.__setattr__(self, "values", values)

    @classmethod
    def homogeneous(cls, grid: Grid, p: ColeColeParams) -> "MediumField":
        return cls(grid, np.tile(p.as_array(), (grid.voxel_count, 1)))

    def permittivity(self, omega: float) -> np.ndarray:
        """(P,) complex permittivity of the field at omega."""
        if self.increment:
            raise DomainError("cannot evaluate permittivity of a raw increment")
        return cole_cole_array(self.values, omega)

    def parameter_norm(self) -> float:
        """Per-voxel 2-norm of the 5 parameters, averaged over voxels."""
        return float(np.linalg.norm(self.values, axis=1).mean())


@dataclass(frozen=True)
class MismatchBias:
    """Mild-mismatch construction: reference = clamp(scale*background + shift)."""

    scale: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        scale = np.asarray(self.scale, dtype=float)
        shift = np.asarray(self.shift, dtype=float)
        if scale.shape != (5,) or shift.shape != (5,):
            raise ConfigError("bias scale and shift must have 5 entries")
        if not (np.isfinite(scale).all() and np.isfinite(shift).all()):
            raise ConfigError("bias must be finite")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "shift", shift)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return project_physical_array(values * self.scale + self.shift)


# +5% on eps_inf and delta_eps, +0.02 on alpha, +20% on sigma: a fairly
# accurate but biased working state, well below the generic-reference error.
DEFAULT_MISMATCH_BIAS = MismatchBias(
    scale=np.array([1.05, 1.05, 1.0, 1.0, 1.2]),
    shift=np.array([0.0, 0.0, 0.0, 0.02, 0.0]),
)

# Dispersion-free coarse engineering choice, far from all five scenes.
GENERIC_REFERENCE = ColeColeParams(5.0, 0.0, 1.0e-9, 0.0, 1.0e-3)

REFERENCE_KINDS = ("R0", "R1", "R2")


@dataclass(frozen=True)
class ReferenceSpec:
    """Reference working state: matched (R0), mild mismatch (R1), generic (R2)."""

    kind: str
    bias: MismatchBias = DEFAULT_MISMATCH_BIAS
    generic: ColeColeParams = GENERIC_REFERENCE

    def __post_init__(self):
        if self.kind not in REFERENCE_KINDS:
            raise ConfigError(f"unknown reference kind: {self.kind!r}")
        if not np.isfinite(self.generic.as_array()).all():
            raise ConfigError("generic reference must be finite")


def build_reference_field(scene: str, spec: ReferenceSpec, grid: Grid) -> MediumField:
    """Homogeneous reference field for a scene under the given working state."""
    background = scene_params(scene)
    if spec.kind == "R0":
        return MediumField.homogeneous(grid, background)
    if spec.kind == "R1":
        biased = spec.bias.apply(background.as_array())
        return MediumField.homogeneous(grid, ColeColeParams.from_array(biased))
    return MediumField.homogeneous(grid, spec.generic)


def residual_mean_field(scene: str, spec: ReferenceSpec, grid: Grid) -> MediumField:
    """Deterministic background-minus-reference increment (zero for R0)."""
    background = MediumField.homogeneous(grid, scene_params(scene))
    reference = build_reference_field(scene, spec, grid)
    return MediumField(grid, background.values - reference.values, increment=True)


# Relative noise scales for (eps_inf, delta_eps, tau, alpha, sigma): the
# simplest independent per-voxel law consistent with sample-level spatial
# perturbation of the host background.
DEFAULT_REL_STD = np.array([0.02, 0.02, 0.0, 0.005, 0.02])


@dataclass(frozen=True)
class ResidualModel:
    """Stochastic residual law: deterministic mean plus clamped Gaussian noise.

    The per-parameter noise standard deviation is rel_std[k] times the
    reference field's own value, so zero-valued parameters stay unperturbed.
    """

    mean: MediumField
    reference: MediumField
    rel_std: np.ndarray = None  # type: ignore[assignment]
    correlation: str = "independent"

    def __post_init__(self):
        rel = DEFAULT_REL_STD if self.rel_std is None else np.asarray(self.rel_std, dtype=float)
        if rel.shape != (5,) or np.any(rel < 0) or not np.isfinite(rel).all():
            raise ConfigError("rel_std must be 5 nonnegative finite values")
        if self.correlation != "independent":
            raise ConfigError(f"unsupported correlation kind: {self.correlation!r}")
        if not self.mean.increment:
            raise DomainError("residual mean must be an increment field")
        if self.mean.grid is not self.reference.grid:
            raise DomainError("mean and reference must share a grid")
        object.__setattr__(self, "rel_std", rel)


def residual_model(
    scene: str, spec: ReferenceSpec, grid: Grid, rel_std=None
) -> ResidualModel:
    return ResidualModel(
        mean=residual_mean_field(scene, spec, grid),
        reference=build_reference_field(scene, spec, grid),
        rel_std=rel_std,
    )


def sample_residual(model: ResidualModel, rng: np.random.Generator) -> MediumField:
    """Draw one residual increment; identical streams give identical fields.

    The perturbed total (reference + increment) is clamped into the physical
    box, so the returned increment always composes to an admissible medium.
    """
    ref = model.reference.values
    scale = model.rel_std * np.abs(ref)
    noise = rng.standard_normal(ref.shape) * scale
    total = project_physical_array(ref + model.mean.values + noise)
    return MediumField(model.mean.grid, total - ref, increment=True)
