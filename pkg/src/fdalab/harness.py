"""Experiment orchestration: sweeps, deterministic seeding, table emission.

Every study walks a Cartesian product of configured axes, buffers its rows,
sorts them by key tuple and writes CSV (or JSON) with fixed column order and
17-significant-digit floats, so reruns with the same master seed produce
byte-identical output trees. Monte-Carlo streams are derived per sample from
a hash of (master seed, purpose, scene, reference, pattern, delta_f, index),
making results independent of sweep order and worker scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .downstream import (
    COVARIANCE_MODEL_KINDS,
    TEMPLATE_KINDS,
    anomaly_template,
    approximate_covariance,
    detection_eval,
    recon_quality,
    whitening_error,
)
from .errors import ConfigError
from .forward import (
    ChannelOperator,
    CodingPattern,
    ObservationResponse,
    PATTERN_TAGS,
    coding_path,
)
from .geometry import ArrayGeometry, Grid, build_array, build_grid
from .media import (
    ColeColeParams,
    DEFAULT_MISMATCH_BIAS,
    DEFAULT_REL_STD,
    GENERIC_REFERENCE,
    MismatchBias,
    REFERENCE_KINDS,
    ReferenceSpec,
    ResidualModel,
    list_scenes,
    residual_model,
    sample_residual,
)
from .recon import (
    TikhonovReceiver,
    build_H_an,
    cross_frequency_transfer,
    path_coherence,
    receiver_norm,
    resolution_error,
    rhs_covariance,
    rhs_perturbation,
)
from .stats import (
    HermitianCovariance,
    block_coupling_metrics,
    frequency_block_discrepancy,
    sample_mean_cov,
    spectral_summary,
)

THREADS_ENV_VAR = "FDA_LAB_THREADS"

KEY_COLUMNS = ("scene", "reference", "pattern", "delta_f", "lambda", "seed")

TABLE_COLUMNS = {
    "observe": KEY_COLUMNS
    + (
        "residual_norm",
        "mean_contrast_norm",
        "response_norm",
        "freq_block_discrepancy",
        "cov_trace",
        "chi_f",
        "eps_blk",
        "r_eff",
        "p_0_9",
        "leading_ratio",
    ),
    "recon_lambda": KEY_COLUMNS
    + (
        "receiver_norm",
        "resolution_error",
        "error_energy",
        "cov_trace",
        "r_eff",
        "p_0_9",
        "leading_ratio",
        "route_agreement_max",
    ),
    "recon_crossfreq": KEY_COLUMNS
    + (
        "chi_cf",
        "eps_diag_trace",
        "eps_diag_shape",
        "r_eff",
        "p_0_9",
        "leading_ratio",
    ),
    "recon_coding": KEY_COLUMNS
    + (
        "rho_path",
        "eta_cross",
        "chi_cf",
        "chi_f",
        "rb_r_eff",
        "rb_p_0_9",
        "rb_leading_ratio",
    ),
    "downstream_ideal": KEY_COLUMNS
    + (
        "template",
        "eps_loc",
        "max_spurious",
        "gamma_tp",
        "nmse",
        "false_alarms",
    ),
    "downstream_covmodel": KEY_COLUMNS
    + (
        "cov_model",
        "eps_white",
        "p_d_at_fa05",
        "z_margin",
    ),
}


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep axes, sampling sizes and geometry knobs for all studies."""

    scenes: tuple[str, ...] = list_scenes()
    references: tuple[str, ...] = REFERENCE_KINDS
    patterns: tuple[str, ...] = PATTERN_TAGS
    delta_f_list: tuple[float, ...] = (1.0e4, 1.0e5, 1.0e6)
    lambda_list: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)
    l_cov: int = 1000
    l_recon: int = 512
    master_seed: int = 0
    feedback_on: bool = True
    output_dir: str = "out"
    pinned_delta_f: float = 1.0e5
    pinned_lambda: float = 1e-1
    f_c: float = 1.0e8
    n_tx: int = 6
    m_rx: int = 8
    array_spacing: float = 0.1
    array_height: float = -0.1
    grid_nx: int = 12
    grid_nz: int = 12
    grid_x_extent: tuple[float, float] = (-1.5, 1.5)
    grid_z_extent: tuple[float, float] = (0.2, 2.0)
    anomaly_x_extent: tuple[float, float] = (-0.5, 0.5)
    anomaly_z_extent: tuple[float, float] = (0.6, 1.4)
    c4_permutation: tuple[int, ...] | None = None
    residual_rel_std: tuple[float, ...] = tuple(DEFAULT_REL_STD)
    anomaly_amplitude: complex = 1000.0 + 0.0j
    template_kinds: tuple[str, ...] = TEMPLATE_KINDS
    r1_bias_scale: tuple[float, ...] = tuple(DEFAULT_MISMATCH_BIAS.scale)
    r1_bias_shift: tuple[float, ...] = tuple(DEFAULT_MISMATCH_BIAS.shift)
    generic_reference: tuple[float, ...] = tuple(GENERIC_REFERENCE.as_array())

    def validate(self) -> None:
        for key in ("scenes", "references", "patterns", "delta_f_list", "lambda_list"):
            if not getattr(self, key):
                raise ConfigError(f"{key}: list must be nonempty")
        for tag in self.scenes:
            if tag not in list_scenes():
                raise ConfigError(f"scenes: unknown scene {tag!r}")
        for kind in self.references:
            if kind not in REFERENCE_KINDS:
                raise ConfigError(f"references: unknown reference {kind!r}")
        for tag in self.patterns:
            if tag not in PATTERN_TAGS:
                raise ConfigError(f"patterns: unknown pattern {tag!r}")
        for key in ("delta_f_list", "lambda_list"):
            values = getattr(self, key)
            if any(not np.isfinite(v) or v <= 0 for v in values):
                raise ConfigError(f"{key}: entries must be positive and finite")
        for key in ("l_cov", "l_recon"):
            if getattr(self, key) < 2:
                raise ConfigError(f"{key}: need at least two samples")
        if self.master_seed < 0:
            raise ConfigError("master_seed: must be nonnegative")
        for key in ("pinned_delta_f", "pinned_lambda", "f_c", "array_spacing"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key}: must be positive")
        if self.array_height >= 0:
            raise ConfigError("array_height: must be negative (air side)")
        if self.n_tx < 1 or self.m_rx < 1:
            raise ConfigError("n_tx/m_rx: need at least one element")
        if len(self.residual_rel_std) != 5 or any(v < 0 for v in self.residual_rel_std):
            raise ConfigError("residual_rel_std: need 5 nonnegative entries")
        for key in ("r1_bias_scale", "r1_bias_shift", "generic_reference"):
            if len(getattr(self, key)) != 5:
                raise ConfigError(f"{key}: need 5 entries")
        for kind in self.template_kinds:
            if kind not in TEMPLATE_KINDS:
                raise ConfigError(f"template_kinds: unknown kind {kind!r}")
        try:
            self.grid()
            self.array()
            self.reference_spec()
        except ConfigError:
            raise
        except Exception as exc:  # geometry raises ConfigError already
            raise ConfigError(str(exc)) from exc

    # built objects -------------------------------------------------------

    def grid(self) -> Grid:
        return build_grid(
            nx=self.grid_nx,
            nz=self.grid_nz,
            x_extent=tuple(self.grid_x_extent),
            z_extent=tuple(self.grid_z_extent),
            anomaly_x=tuple(self.anomaly_x_extent),
            anomaly_z=tuple(self.anomaly_z_extent),
        )

    def array(self) -> ArrayGeometry:
        return build_array(
            n_tx=self.n_tx,
            m_rx=self.m_rx,
            spacing=self.array_spacing,
            height=self.array_height,
        )

    def reference_spec(self, kind: str = "R0") -> ReferenceSpec:
        return ReferenceSpec(
            kind=kind,
            bias=MismatchBias(np.asarray(self.r1_bias_scale), np.asarray(self.r1_bias_shift)),
            generic=ColeColeParams.from_array(self.generic_reference),
        )

    def coding_pattern(self, tag: str) -> CodingPattern:
        perm = self.c4_permutation if tag == "C4" else None
        return CodingPattern(tag, permutation=perm)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "anomaly_amplitude":
                value = [value.real, value.imag]
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out


_TUPLE_KEYS = {
    "scenes",
    "references",
    "patterns",
    "delta_f_list",
    "lambda_list",
    "grid_x_extent",
    "grid_z_extent",
    "anomaly_x_extent",
    "anomaly_z_extent",
    "c4_permutation",
    "residual_rel_std",
    "template_kinds",
    "r1_bias_scale",
    "r1_bias_shift",
    "generic_reference",
}


def config_from_dict(data: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{key}: unknown configuration key")
        if key == "anomaly_amplitude":
            if isinstance(value, (list, tuple)):
                if len(value) != 2:
                    raise ConfigError("anomaly_amplitude: need [re, im]")
                value = complex(value[0], value[1])
            else:
                value = complex(value)
        elif key in _TUPLE_KEYS and value is not None:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{key}: expected a list")
            kwargs[key] = tuple(value)
            continue
        kwargs[key] = value
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path: str | Path | None = None, **overrides) -> ExperimentConfig:
    """Configuration from a JSON file (or defaults) plus explicit overrides."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# deterministic sampling


def derive_rng(master_seed: int, *parts) -> np.random.Generator:
    """Stream keyed by a hash of the context parts; sweep-order independent."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *words]))


@dataclass
class StudyCase:
    """One (scene, reference, pattern, delta_f) cell with cached operators."""

    cfg: ExperimentConfig
    scene: str
    reference: str
    pattern: str
    delta_f: float
    grid: Grid = field(init=False)
    array: ArrayGeometry = field(init=False)
    model: ResidualModel = field(init=False)
    operators: list[ChannelOperator] = field(init=False)

    def __post_init__(self):
        cfg = self.cfg
        self.grid = cfg.grid()
        self.array = cfg.array()
        spec = cfg.reference_spec(self.reference)
        self.model = residual_model(
            self.scene, spec, self.grid, rel_std=np.asarray(cfg.residual_rel_std)
        )
        channels = coding_path(
            cfg.coding_pattern(self.pattern),
            cfg.n_tx,
            cfg.f_c,
            self.delta_f,
            self.array.tx_center,
            self.array.tx_step,
        )
        self.operators = [
            ChannelOperator(self.grid, self.array, ch, self.model.reference)
            for ch in channels
        ]

    @property
    def n_channels(self) -> int:
        return len(self.operators)

    @property
    def m_rx(self) -> int:
        return self.array.m_rx

    def h_matrices(self) -> list[np.ndarray]:
        return [op.entries for op in self.operators]

    def h_an(self) -> np.ndarray:
        return build_H_an(self.h_matrices(), self.grid.anomaly_selection)

    def deterministic_response(self) -> ObservationResponse:
        responses = [
            op.respond(self.model.mean, feedback=self.cfg.feedback_on)
            for op in self.operators
        ]
        return ObservationResponse(np.vstack(responses))

    def deterministic_contrast_norms(self) -> np.ndarray:
        return np.array(
            [np.linalg.norm(op.contrast(self.model.mean)) for op in self.operators]
        )

    def sample_channel_responses(self, count: int, purpose: str) -> np.ndarray:
        """(count, N, M) residual responses drawn from per-sample streams."""
        out = np.empty((count, self.n_channels, self.m_rx), dtype=complex)
        for i in range(count):
            rng = derive_rng(
                self.cfg.master_seed,
                purpose,
                self.scene,
                self.reference,
                self.pattern,
                self.delta_f,
                i,
            )
            draw = sample_residual(self.model, rng)
            for k, op in enumerate(self.operators):
                out[i, k] = op.respond(draw, feedback=self.cfg.feedback_on)
        return out


def _pool_map(fn: Callable, items: Sequence) -> list:
    workers_env = os.environ.get(THREADS_ENV_VAR)
    workers = int(workers_env) if workers_env else min(4, os.cpu_count() or 1)
    workers = max(1, workers)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# studies


def _base_row(case: StudyCase, lam=None) -> dict:
    return {
        "scene": case.scene,
        "reference": case.reference,
        "pattern": case.pattern,
        "delta_f": case.delta_f,
        "lambda": lam,
        "seed": case.cfg.master_seed,
    }


def run_observation_study(cfg: ExperimentConfig) -> list[dict]:
    """Deterministic response plus sampled covariance structure per cell."""
    cfg.validate()
    combos = [
        (scene, reference, delta_f)
        for scene in cfg.scenes
        for reference in cfg.references
        for delta_f in cfg.delta_f_list
    ]

    def work(combo) -> dict:
        scene, reference, delta_f = combo
        case = StudyCase(cfg, scene, reference, cfg.patterns[0], delta_f)
        det = case.deterministic_response()
        row = _base_row(case)
        row["residual_norm"] = case.model.mean.parameter_norm()
        row["mean_contrast_norm"] = float(case.deterministic_contrast_norms().mean())
        response_norm = float(np.linalg.norm(det.stacked))
        row["response_norm"] = response_norm
        row["freq_block_discrepancy"] = (
            frequency_block_discrepancy(det) if response_norm > 0 else None
        )
        samples = case.sample_channel_responses(cfg.l_cov, "observe")
        _, cov = sample_mean_cov(
            samples.reshape(cfg.l_cov, -1), block_size=case.m_rx
        )
        chi_f, eps_blk = block_coupling_metrics(cov)
        summary = spectral_summary(cov)
        row.update(
            cov_trace=summary.trace,
            chi_f=chi_f,
            eps_blk=eps_blk,
            r_eff=summary.r_eff,
            p_0_9=summary.p_0_9,
            leading_ratio=summary.leading_ratio,
        )
        return row

    return sort_rows(_pool_map(work, combos))


def _rhs_samples(case: StudyCase, per_channel: np.ndarray) -> np.ndarray:
    """(L, P_an) accumulated adjoint projections for sampled responses."""
    sel = case.grid.anomaly_selection
    a = np.stack([h[:, sel] for h in case.h_matrices()])  # (N, M, P_an)
    return np.einsum("nmp,lnm->lp", a.conj(), per_channel)


def run_recon_study(cfg: ExperimentConfig) -> dict[str, list[dict]]:
    """Receiver sweep, cross-frequency transfer and coding-pattern tables."""
    cfg.validate()
    lambda_rows: list[dict] = []
    crossfreq_rows: list[dict] = []
    coding_rows: list[dict] = []

    sweep_combos = [(s, r) for s in cfg.scenes for r in cfg.references]

    def sweep_work(combo) -> tuple[list[dict], list[dict]]:
        scene, reference = combo
        case = StudyCase(cfg, scene, reference, cfg.patterns[0], cfg.pinned_delta_f)
        per = case.sample_channel_responses(cfg.l_recon, "recon")
        stacked = per.reshape(cfg.l_recon, -1)
        _, cov = sample_mean_cov(stacked, block_size=case.m_rx)
        h_an = case.h_an()
        b_all = _rhs_samples(case, per)
        lam_rows, cf_rows = [], []
        for lam in cfg.lambda_list:
            rcv = TikhonovReceiver(h_an, lam)
            g = rcv.matrix()
            recon_samples = stacked @ g.T
            route_samples = rcv.solve_normal(b_all.T).T
            direct_norms = np.linalg.norm(recon_samples, axis=1)
            route_gap = np.linalg.norm(recon_samples - route_samples, axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                agreement = np.where(direct_norms > 0, route_gap / direct_norms, 0.0)
            transfer = cross_frequency_transfer(rcv, cov)
            summary = spectral_summary(HermitianCovariance(transfer.r_e_full))
            row = _base_row(case, lam)
            row.update(
                receiver_norm=receiver_norm(rcv),
                resolution_error=resolution_error(rcv),
                error_energy=float((direct_norms**2).mean()),
                cov_trace=summary.trace,
                r_eff=summary.r_eff,
                p_0_9=summary.p_0_9,
                leading_ratio=summary.leading_ratio,
                route_agreement_max=float(agreement.max()),
            )
            lam_rows.append(row)
            cf_row = _base_row(case, lam)
            cf_row.update(
                chi_cf=transfer.chi_cf,
                eps_diag_trace=transfer.eps_diag_trace,
                eps_diag_shape=transfer.eps_diag_shape,
                r_eff=summary.r_eff,
                p_0_9=summary.p_0_9,
                leading_ratio=summary.leading_ratio,
            )
            cf_rows.append(cf_row)
        return lam_rows, cf_rows

    for lam_rows, cf_rows in _pool_map(sweep_work, sweep_combos):
        lambda_rows.extend(lam_rows)
        crossfreq_rows.extend(cf_rows)

    coding_combos = [
        (s, r, p) for s in cfg.scenes for r in cfg.references for p in cfg.patterns
    ]

    def coding_work(combo) -> dict:
        scene, reference, pattern = combo
        case = StudyCase(cfg, scene, reference, pattern, cfg.pinned_delta_f)
        per = case.sample_channel_responses(cfg.l_recon, "recon")
        stacked = per.reshape(cfg.l_recon, -1)
        _, cov = sample_mean_cov(stacked, block_size=case.m_rx)
        chi_f, _ = block_coupling_metrics(cov)
        det = case.deterministic_response()
        row = _base_row(case, cfg.pinned_lambda)
        det_rhs = rhs_perturbation(
            case.h_matrices(), case.grid.anomaly_selection, det
        )
        row["rho_path"] = (
            path_coherence(det_rhs) if np.abs(det_rhs.g).sum() > 0 else None
        )
        sel = case.grid.anomaly_selection
        g_samples = [
            rhs_perturbation(case.h_matrices(), sel, ObservationResponse(per[i]))
            for i in range(cfg.l_recon)
        ]
        rb = rhs_covariance(g_samples)
        rb_summary = spectral_summary(rb.r_b)
        rcv = TikhonovReceiver(case.h_an(), cfg.pinned_lambda)
        transfer = cross_frequency_transfer(rcv, cov)
        row.update(
            eta_cross=rb.eta_cross,
            chi_cf=transfer.chi_cf,
            chi_f=chi_f,
            rb_r_eff=rb_summary.r_eff,
            rb_p_0_9=rb_summary.p_0_9,
            rb_leading_ratio=rb_summary.leading_ratio,
        )
        return row

    coding_rows = _pool_map(coding_work, coding_combos)

    return {
        "recon_lambda": sort_rows(lambda_rows),
        "recon_crossfreq": sort_rows(crossfreq_rows),
        "recon_coding": sort_rows(coding_rows),
    }


def run_downstream_study(cfg: ExperimentConfig) -> dict[str, list[dict]]:
    """Ideal-anomaly consequence metrics and covariance-model evaluation."""
    cfg.validate()
    combos = [(s, r) for s in cfg.scenes for r in cfg.references]

    def work(combo) -> tuple[list[dict], list[dict]]:
        scene, reference = combo
        case = StudyCase(cfg, scene, reference, cfg.patterns[0], cfg.pinned_delta_f)
        rcv = TikhonovReceiver(case.h_an(), cfg.pinned_lambda)
        g = rcv.matrix()

        bg_per = case.sample_channel_responses(cfg.l_recon, "downstream-bg")
        bg_stacked = bg_per.reshape(cfg.l_recon, -1)
        # covariance models come from the very draws they will whiten; the
        # masks below are applied before the transfer into the anomaly domain
        _, model_cov = sample_mean_cov(bg_stacked, block_size=case.m_rx)
        bg_recon = bg_stacked @ g.T

        p_an = case.grid.anomaly_count
        ideal_rows = []
        point_recon = None
        for kind in cfg.template_kinds:
            template = anomaly_template(case.grid, kind, cfg.anomaly_amplitude)
            clean_recon = rcv.apply(case.h_an() @ template.vector(p_an))
            if kind == "point" or point_recon is None:
                point_recon = clean_recon
            per_sample = [
                recon_quality(
                    clean_recon + bg_recon[i],
                    clean_recon,
                    case.grid,
                    support=template.support,
                )
                for i in range(cfg.l_recon)
            ]
            row = _base_row(case, cfg.pinned_lambda)
            row.update(
                template=kind,
                eps_loc=float(np.mean([q.eps_loc for q in per_sample])),
                max_spurious=float(np.mean([q.max_spurious for q in per_sample])),
                gamma_tp=float(np.mean([q.gamma_tp for q in per_sample])),
                nmse=float(np.mean([q.nmse for q in per_sample])),
                false_alarms=float(np.mean([q.false_alarms for q in per_sample])),
            )
            ideal_rows.append(row)

        # detection backgrounds are the covariance-driven fluctuations only;
        # the deterministic pseudo-anomaly mean belongs to the first-order story
        bg_centered = bg_recon - bg_recon.mean(axis=0)
        cov_rows = []
        for kind in COVARIANCE_MODEL_KINDS:
            masked = approximate_covariance(model_cov, kind)
            model_recon = HermitianCovariance(g @ masked.entries @ g.conj().T)
            eps_white = whitening_error(model_recon, bg_centered)
            detection = detection_eval(
                model_recon, point_recon, bg_centered, bg_centered + point_recon
            )
            row = _base_row(case, cfg.pinned_lambda)
            row.update(
                cov_model=kind,
                eps_white=eps_white,
                p_d_at_fa05=detection.p_d_at_fa05,
                z_margin=detection.z_margin,
            )
            cov_rows.append(row)
        return ideal_rows, cov_rows

    ideal_rows: list[dict] = []
    cov_rows: list[dict] = []
    for ideal, cov in _pool_map(work, combos):
        ideal_rows.extend(ideal)
        cov_rows.extend(cov)
    return {
        "downstream_ideal": sort_rows(ideal_rows),
        "downstream_covmodel": sort_rows(cov_rows),
    }


# ---------------------------------------------------------------------------
# aggregation and emission


def _sort_key(row: dict):
    def rank(value):
        return (value is None, value if value is not None else "")

    extra = tuple(
        rank(row.get(col)) for col in ("template", "cov_model")
    )
    return tuple(rank(row.get(col)) for col in KEY_COLUMNS) + extra


def sort_rows(rows: list[dict]) -> list[dict]:
    return sorted(rows, key=_sort_key)


def median_rows(rows: list[dict], axes: Sequence[str], metrics: Sequence[str]) -> list[dict]:
    """Per-axis medians of the metric columns plus the pooled median."""
    out: list[dict] = []

    def medians(group: list[dict]) -> dict:
        result = {}
        for metric in metrics:
            values = [
                row[metric]
                for row in group
                if row.get(metric) is not None and np.isfinite(row[metric])
            ]
            result[metric] = float(np.median(values)) if values else None
        return result

    pooled = {"group_axis": "pooled", "group_value": "all"}
    pooled.update(medians(rows))
    out.append(pooled)
    for axis in axes:
        values = sorted({row[axis] for row in rows if row.get(axis) is not None})
        for value in values:
            group = [row for row in rows if row.get(axis) == value]
            entry = {"group_axis": axis, "group_value": value}
            entry.update(medians(group))
            out.append(entry)
    return out


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_rows_csv(path: Path, rows: list[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(row.get(col)) for col in columns])


def write_rows_json(path: Path, rows: list[dict], columns: Sequence[str]) -> None:
    def encode(value):
        if isinstance(value, float) and not np.isfinite(value):
            return repr(value)
        return value

    payload = [{col: encode(row.get(col)) for col in columns} for row in rows]
    path.write_text(
        json.dumps(payload, indent=1, sort_keys=False) + "\n", encoding="utf-8"
    )


MEDIAN_AXES = {
    "recon_lambda": ("lambda", "scene", "reference"),
    "recon_crossfreq": ("lambda", "scene", "reference"),
    "recon_coding": ("pattern", "scene", "reference"),
}


def write_study_tables(
    tables: dict[str, list[dict]], out_dir: str | Path, fmt: str = "csv"
) -> list[Path]:
    """Emit each table (and medians where defined); returns written paths."""
    if fmt not in ("csv", "json"):
        raise ConfigError(f"format: unknown output format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    writer = write_rows_csv if fmt == "csv" else write_rows_json
    written: list[Path] = []
    for name, rows in tables.items():
        columns = TABLE_COLUMNS[name]
        path = out / f"{name}.{fmt}"
        writer(path, rows, columns)
        written.append(path)
        axes = MEDIAN_AXES.get(name)
        if axes:
            metrics = [c for c in columns if c not in KEY_COLUMNS]
            med = median_rows(rows, axes, metrics)
            med_path = out / f"{name}_medians.{fmt}"
            writer(med_path, med, ("group_axis", "group_value", *metrics))
            written.append(med_path)
    return written


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_manifest(
    cfg: ExperimentConfig, out_dir: str | Path, tables: dict[str, int]
) -> Path:
    payload = {
        "code_version": __version__,
        "config_hash": config_hash(cfg),
        "master_seed": cfg.master_seed,
        "row_counts": dict(sorted(tables.items())),
        "config": cfg.to_dict(),
    }
    path = Path(out_dir) / "run_manifest.json"
    path.write_text(
        json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path
