"""Behavioral model of a 14-bit segmented current-steering DAC.

The converter splits into 63 thermometer-coded unary current cells (UCCs,
6 MSB bits) and an 8-bit binary LSB bank.  Every UCC carries redundancy in
three places, each calibrated by subset selection:

* amplitude — each UCC is built from n = 12 graded sub-currents of which
  k = 6 are enabled; selection against an on-chip reference current trims
  the cell's static weight;
* clock delay — one selectable-width buffer per cell, inverse-strength
  delay model shared with the mixer module;
* duty cycle — two such buffers per cell (complementary edges); one is
  tuned, the other stays at its balanced selection, and the duty error is
  their delay difference.

On top of the per-cell model sit the static-linearity analytics (endpoint-fit
INL/DNL), an exhaustive amplitude calibration, a randomized window-search
self-healing controller with backup cells and a top-level bias redraw, the
error-sensing demodulation model (in-phase / quadrature / double-frequency
square-wave readout), and Monte Carlo yield studies over all of it.

Currents are amperes, times are seconds throughout.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .hrmixer import TunableInverter, _inverse_width_step
from .mismatch import (
    Arithmetic,
    Combination,
    ConfigError,
    DegenerateConfigurationError,
    ElementSet,
    Explicit,
    MismatchModel,
    SizingScheme,
    Uniform,
    all_subset_sums,
    balanced_combination,
    combination_index_matrix,
    find_best,
    sample_element_set,
    scheme_center,
    subset_value,
)
from .runner import parallel_indexed, sample_substream
from .waveform import EdgeWaveform, product_average, square_wave

__all__ = [
    "DEFAULT_SUB_SCHEME",
    "DacConfig",
    "UccCell",
    "DacSample",
    "sample_dac",
    "ucc_currents",
    "dac_output",
    "transfer_curve",
    "LinearityReport",
    "linearity",
    "linearity_from_curve",
    "amplitude_residuals",
    "calibrate_amplitude_eses",
    "calibrate_amplitude_ses_comparison",
    "uniform_comparison_config",
    "delay_errors",
    "duty_errors",
    "calibrate_timing",
    "SelfHealConfig",
    "SelfHealSample",
    "sample_selfheal",
    "SelfHealResult",
    "self_heal_ses",
    "healed_linearity",
    "SensedCell",
    "SensingConfig",
    "SENSE_MODES",
    "sense_error",
    "YieldResult",
    "YIELD_FLOWS",
    "yield_study",
]

# Timing-network sizing shared by the delay and duty buffers.  The selectable
# widths carry a fixed fraction of each stage's variance budget; the rest is
# an extrinsic Gaussian term the selection must cancel, so tuning ranges are
# sized to cover the stage's *total* spread with margin.
_TIMING_REL_SIGMA = 0.01
_TIMING_INTRINSIC_FRACTION = 0.25
_COVERAGE_SIGMA = 6.0
_RANGE_MARGIN = 1.15
_BASE_DELAY = 50e-12

# Default graded sub-current nominals: mean 52 uA, common difference 0.76 uA.
DEFAULT_SUB_SCHEME = Explicit(tuple(52e-6 + (i - 5.5) * 0.76e-6 for i in range(12)))


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class DacConfig:
    """Geometry and mismatch budgets of the converter.

    ``ucc_sub_scheme`` sets the nominal sizes of the n sub-currents inside
    each UCC; any k of them must nominally sum to ``ucc_nominal`` (the
    scheme's center times k), because the decode assumes every enabled UCC
    weighs exactly 2**lsb_bits LSB units.

    The LSB bank is built from unit current sources (bit b = 2**b units)
    whose per-unit sigma is the UCC unit-equivalent sigma divided by
    ``lsb_sigma_factor``, modeling deliberately upsized LSB devices.
    """

    resolution: int = 14
    msb_bits: int = 6
    lsb_bits: int = 8
    ucc_nominal: float = 312e-6
    ucc_sub_scheme: SizingScheme = DEFAULT_SUB_SCHEME
    sub_sigma: float = 1.1e-6
    lsb_sigma_factor: float = 8.0
    delay_sigma: float = 1.3e-12
    duty_sigma: float = 1.8e-12
    n: int = 12
    k: int = 6

    def __post_init__(self) -> None:
        if self.msb_bits < 1 or self.lsb_bits < 1:
            raise ConfigError("msb_bits and lsb_bits must each be >= 1")
        if self.resolution != self.msb_bits + self.lsb_bits:
            raise ConfigError(
                f"resolution {self.resolution} != msb_bits {self.msb_bits}"
                f" + lsb_bits {self.lsb_bits}"
            )
        if self.ucc_nominal <= 0.0:
            raise ConfigError(f"ucc_nominal must be > 0, got {self.ucc_nominal}")
        if self.sub_sigma < 0.0 or self.delay_sigma < 0.0 or self.duty_sigma < 0.0:
            raise ConfigError("sigmas must be >= 0")
        if self.lsb_sigma_factor <= 0.0:
            raise ConfigError("lsb_sigma_factor must be > 0")
        if not 1 <= self.k <= self.n:
            raise ConfigError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        nominal_sum = self.k * scheme_center(self.ucc_sub_scheme)
        if abs(nominal_sum - self.ucc_nominal) > 1e-9 * self.ucc_nominal:
            raise ConfigError(
                f"k-subset nominal sum {nominal_sum:g} A does not match"
                f" ucc_nominal {self.ucc_nominal:g} A"
            )
        # Force the range checks early: either raises here or never.
        self.delay_step
        self.duty_step

    # Geometry ---------------------------------------------------------

    @property
    def n_ucc(self) -> int:
        return 2**self.msb_bits - 1

    @property
    def n_codes(self) -> int:
        return 2**self.resolution

    @property
    def lsb_levels(self) -> int:
        return 2**self.lsb_bits

    @property
    def lsb_unit_nominal(self) -> float:
        return self.ucc_nominal / self.lsb_levels

    # Mismatch budgets -------------------------------------------------

    @property
    def ucc_sigma(self) -> float:
        """Sigma of an uncalibrated k-subset UCC current."""
        return math.sqrt(self.k) * self.sub_sigma

    @property
    def lsb_unit_sigma(self) -> float:
        return (self.ucc_sigma / math.sqrt(self.lsb_levels)) / self.lsb_sigma_factor

    @property
    def sub_model(self) -> MismatchModel:
        return MismatchModel(self.sub_sigma, scheme_center(self.ucc_sub_scheme))

    # Timing-network sizing --------------------------------------------

    @property
    def delay_drive(self) -> float:
        intrinsic = math.sqrt(_TIMING_INTRINSIC_FRACTION) * self.delay_sigma
        return intrinsic * math.sqrt(self.k) / _TIMING_REL_SIGMA

    @property
    def delay_step(self) -> float:
        reach = _COVERAGE_SIGMA * _RANGE_MARGIN * self.delay_sigma
        return _inverse_width_step(self.delay_drive, reach)

    @property
    def delay_extrinsic_sigma(self) -> float:
        return math.sqrt(1.0 - _TIMING_INTRINSIC_FRACTION) * self.delay_sigma

    @property
    def duty_network_sigma(self) -> float:
        """Per-buffer delay sigma; the duty error is a two-buffer difference."""
        return self.duty_sigma / math.sqrt(2.0)

    @property
    def duty_drive(self) -> float:
        intrinsic = math.sqrt(_TIMING_INTRINSIC_FRACTION) * self.duty_network_sigma
        return intrinsic * math.sqrt(self.k) / _TIMING_REL_SIGMA

    @property
    def duty_step(self) -> float:
        # The tuned buffer must reach the *difference* of two buffer errors,
        # so its range covers the full duty budget, not just its own spread.
        reach = _COVERAGE_SIGMA * _RANGE_MARGIN * self.duty_sigma
        return _inverse_width_step(self.duty_drive, reach)

    @property
    def duty_extrinsic_sigma(self) -> float:
        return math.sqrt(1.0 - _TIMING_INTRINSIC_FRACTION) * self.duty_network_sigma


# ---------------------------------------------------------------------------
# Sampled converter state


@dataclass(frozen=True, eq=False)
class UccCell:
    """One unary current cell: amplitude elements plus its timing buffers."""

    amplitude: ElementSet
    selection: Combination
    delay: TunableInverter
    duty_tuned: TunableInverter
    duty_fixed: TunableInverter

    def current(self) -> float:
        return subset_value(self.amplitude, self.selection)

    def delay_error(self) -> float:
        return self.delay.delay_deviation()

    def duty_error(self) -> float:
        return self.duty_tuned.delay_deviation() - self.duty_fixed.delay_deviation()


@dataclass(frozen=True, eq=False)
class DacSample:
    """One Monte Carlo converter instance."""

    config: DacConfig
    cells: tuple[UccCell, ...]
    lsb_bit_currents: tuple[float, ...]
    reference_current: float

    def __post_init__(self) -> None:
        if len(self.cells) != self.config.n_ucc:
            raise ConfigError(
                f"expected {self.config.n_ucc} cells, got {len(self.cells)}"
            )
        if len(self.lsb_bit_currents) != self.config.lsb_bits:
            raise ConfigError(
                f"expected {self.config.lsb_bits} LSB bit currents,"
                f" got {len(self.lsb_bit_currents)}"
            )


def sample_dac(config: DacConfig, rng=None) -> DacSample:
    """Draw one converter instance.

    Draw order is part of the determinism contract: per cell — amplitude
    elements, delay widths, delay extrinsic, tuned-duty widths and extrinsic,
    fixed-duty widths and extrinsic; then LSB units bit by bit (bit b consumes
    2**b unit draws); then the reference's extra unit.  All selections start
    at the balanced combination.

    The reference current is the LSB bank plus one more unit, accumulated
    with ``math.fsum`` so a zero-variance draw reproduces ``ucc_nominal``
    exactly.
    """
    rng = np.random.default_rng(rng)
    cfg = config
    delay_scheme = Arithmetic(1.0, cfg.delay_step)
    duty_scheme = Arithmetic(1.0, cfg.duty_step)
    width_model = MismatchModel(_TIMING_REL_SIGMA, 1.0)
    balanced = balanced_combination(cfg.n, cfg.k)

    def draw_buffer(scheme, drive: float, extrinsic_sigma: float) -> TunableInverter:
        widths = sample_element_set(scheme, width_model, cfg.n, rng)
        extrinsic = float(rng.normal(0.0, extrinsic_sigma))
        return TunableInverter(widths, balanced, _BASE_DELAY, drive, extrinsic)

    cells = []
    for _ in range(cfg.n_ucc):
        amplitude = sample_element_set(cfg.ucc_sub_scheme, cfg.sub_model, cfg.n, rng)
        delay = draw_buffer(delay_scheme, cfg.delay_drive, cfg.delay_extrinsic_sigma)
        tuned = draw_buffer(duty_scheme, cfg.duty_drive, cfg.duty_extrinsic_sigma)
        fixed = draw_buffer(duty_scheme, cfg.duty_drive, cfg.duty_extrinsic_sigma)
        cells.append(UccCell(amplitude, balanced, delay, tuned, fixed))

    bits, reference = _draw_lsb_bank(
        cfg.lsb_bits, cfg.lsb_unit_nominal, cfg.lsb_unit_sigma, rng
    )
    return DacSample(cfg, tuple(cells), bits, reference)


def _draw_lsb_bank(
    lsb_bits: int, unit_nominal: float, unit_sigma: float, rng: np.random.Generator
) -> tuple[tuple[float, ...], float]:
    """Binary bit currents (bit b = 2**b unit draws) and the reference.

    Sums use ``math.fsum`` (correctly rounded), so zero-variance draws give
    bit currents of exactly 2**b units and a reference of exactly 2**lsb_bits
    units — the nominal UCC current to the last bit.
    """
    bits = []
    for b in range(lsb_bits):
        draws = rng.normal(unit_nominal, unit_sigma, size=2**b)
        bits.append(math.fsum(draws))
    extra_unit = float(rng.normal(unit_nominal, unit_sigma))
    reference = math.fsum(bits + [extra_unit])
    return tuple(bits), reference


def ucc_currents(sample: DacSample) -> np.ndarray:
    """Selected-subset current of every UCC, in cell order."""
    return np.array([cell.current() for cell in sample.cells])


# ---------------------------------------------------------------------------
# Static transfer curve and linearity


def dac_output(sample: DacSample, code: int) -> float:
    """Output current for one code: thermometer MSB decode + binary LSB part.

    Kept as a plain sequential sum — the readable reference semantics the
    vectorized ``transfer_curve`` must agree with.
    """
    if not isinstance(code, (int, np.integer)):
        raise ConfigError(f"code must be an integer, got {type(code).__name__}")
    if not 0 <= code < sample.config.n_codes:
        raise ConfigError(
            f"code must be in [0, {sample.config.n_codes - 1}], got {code}"
        )
    segments = int(code) >> sample.config.lsb_bits
    residue = int(code) & (sample.config.lsb_levels - 1)
    total = 0.0
    for cell in sample.cells[:segments]:
        total += cell.current()
    for b, bit_current in enumerate(sample.lsb_bit_currents):
        if residue >> b & 1:
            total += bit_current
    return total


def _curve_from_levels(
    segment_currents: np.ndarray, lsb_bit_currents: np.ndarray
) -> np.ndarray:
    """Full transfer curve given per-UCC currents and the LSB bank."""
    n_lsb_bits = lsb_bit_currents.size
    msb_cum = np.concatenate(([0.0], np.cumsum(segment_currents)))
    codes = np.arange(2**n_lsb_bits)
    lsb_vals = np.zeros(codes.size)
    for b in range(n_lsb_bits):
        lsb_vals[(codes >> b) & 1 == 1] += lsb_bit_currents[b]
    return (msb_cum[:, None] + lsb_vals[None, :]).ravel()


def transfer_curve(sample: DacSample) -> np.ndarray:
    """Output current at every code, shape (2**resolution,)."""
    return _curve_from_levels(
        ucc_currents(sample), np.asarray(sample.lsb_bit_currents)
    )


@dataclass(frozen=True, eq=False)
class LinearityReport:
    """Endpoint-fit static linearity in LSB units."""

    inl: np.ndarray
    dnl: np.ndarray
    inl_max: float
    dnl_max: float


def linearity_from_curve(curve: np.ndarray) -> LinearityReport:
    """Endpoint-fit INL/DNL of a transfer curve.

    The LSB unit is the endpoint slope (out[last] - out[0]) / (codes - 1),
    so inl[0] = inl[last] = 0 and the DNL deviations sum to zero by identity.
    dnl[0] is defined as 0 (no step below the first code).
    """
    curve = np.asarray(curve, dtype=float)
    if curve.ndim != 1 or curve.size < 2:
        raise ConfigError("transfer curve must be a 1-D array of >= 2 codes")
    span = curve[-1] - curve[0]
    if span <= 0.0:
        raise DegenerateConfigurationError(
            "transfer curve is non-increasing end to end; no LSB unit exists"
        )
    unit = span / (curve.size - 1)
    inl = (curve - curve[0]) / unit - np.arange(curve.size)
    dnl = np.zeros_like(curve)
    dnl[1:] = np.diff(curve) / unit - 1.0
    return LinearityReport(
        inl=inl,
        dnl=dnl,
        inl_max=float(np.max(np.abs(inl))),
        dnl_max=float(np.max(np.abs(dnl))),
    )


def linearity(sample: DacSample) -> LinearityReport:
    return linearity_from_curve(transfer_curve(sample))


# ---------------------------------------------------------------------------
# Amplitude calibration


def amplitude_residuals(sample: DacSample) -> np.ndarray:
    """Per-UCC current minus the sample's realized reference current."""
    return ucc_currents(sample) - sample.reference_current


def calibrate_amplitude_eses(sample: DacSample) -> DacSample:
    """Exhaustive per-UCC subset selection against the reference current.

    Every cell independently picks the k-subset whose sum lands closest to
    the realized reference, over all C(n, k) combinations.  Being a global
    minimum over a set containing the incumbent, the residual never grows.
    """
    cfg = sample.config
    cells = tuple(
        dataclasses.replace(
            cell,
            selection=find_best(cell.amplitude, cfg.k, sample.reference_current)[0],
        )
        for cell in sample.cells
    )
    return dataclasses.replace(sample, cells=cells)


def calibrate_amplitude_ses_comparison(sample: DacSample) -> DacSample:
    """Amplitude calibration for the uniform-sizing comparison runs.

    The selection flow is identical to the graded-sizing calibration; only
    the element nominals differ (all equal, same center sigma).  Kept as a
    named entry point so comparison studies read explicitly.
    """
    return calibrate_amplitude_eses(sample)


def uniform_comparison_config(config: DacConfig) -> DacConfig:
    """Same converter with equal-nominal sub-currents (comparison baseline).

    Elements are resized to the scheme center, so the mean and the
    center-referenced sigma match the graded configuration.
    """
    return dataclasses.replace(
        config, ucc_sub_scheme=Uniform(scheme_center(config.ucc_sub_scheme))
    )


# ---------------------------------------------------------------------------
# Timing calibration


def delay_errors(sample: DacSample) -> np.ndarray:
    """Clock-delay deviation of every UCC, seconds."""
    return np.array([cell.delay_error() for cell in sample.cells])


def duty_errors(sample: DacSample) -> np.ndarray:
    """Duty-cycle error (tuned minus fixed buffer delay) per UCC, seconds."""
    return np.array([cell.duty_error() for cell in sample.cells])


def _deviation_candidates(inverter: TunableInverter, k: int) -> np.ndarray:
    """delay_deviation() of every k-subset of the inverter's widths."""
    if inverter.drive_coefficient == 0.0:
        n_combos = combination_index_matrix(inverter.elements.n, k).shape[0]
        return np.full(n_combos, inverter.extrinsic_error)
    sums = all_subset_sums(inverter.elements.realized, k)
    tunable = inverter.drive_coefficient * (inverter.w_nominal_half / sums - 1.0)
    return tunable + inverter.extrinsic_error


def _best_selection(inverter: TunableInverter, k: int, target: float = 0.0):
    """Subset whose deviation lands closest to ``target``."""
    if inverter.drive_coefficient == 0.0:
        return inverter.selection
    deviations = _deviation_candidates(inverter, k)
    best = int(np.argmin(np.abs(deviations - target)))
    indices = combination_index_matrix(inverter.elements.n, k)[best]
    return Combination(tuple(int(i) for i in indices))


def calibrate_timing(sample: DacSample) -> DacSample:
    """Exhaustive timing calibration of every UCC.

    Delay: pick the buffer subset minimizing |delay deviation| (the tunable
    inverse-width term must cancel the extrinsic error).  Duty: the fixed
    buffer keeps its balanced selection; the tuned buffer's subset minimizes
    |tuned deviation - fixed deviation|.
    """
    cfg = sample.config
    cells = []
    for cell in sample.cells:
        delay = cell.delay.with_selection(_best_selection(cell.delay, cfg.k))
        tuned = cell.duty_tuned.with_selection(
            _best_selection(
                cell.duty_tuned, cfg.k, target=cell.duty_fixed.delay_deviation()
            )
        )
        cells.append(dataclasses.replace(cell, delay=delay, duty_tuned=tuned))
    return dataclasses.replace(sample, cells=tuple(cells))


# ---------------------------------------------------------------------------
# Self-healing controller


@dataclass(frozen=True)
class SelfHealConfig:
    """Window-search self-healing geometry (16-choose-8 cells).

    ``i_tiny`` is the acceptance-window width above the reference current;
    by default a tenth of the cell sigma.

    The top-level bias is its own arithmetic subset-selection stage: element
    nominals are graded 1 +/- bias_step around unity (with ``bias_rel_sigma``
    relative mismatch on top), and the selected subset's mean rescales every
    cell current.  Redrawing the bias combination therefore dithers the
    common mode over about +/- (n/4)*bias_step — that dither is what lets
    restarts recover samples whose acceptance window falls outside some
    cell's own selection range.  The default step makes one redraw shift
    cell sums by roughly the window width ``i_tiny``: enough to pull a
    stranded window into reach without spoiling cells that already heal.
    """

    n: int = 16
    k: int = 8
    sub_nominal: float = 19.53e-6
    ucc_sigma: float = 0.53e-6
    i_tiny: Optional[float] = None
    cell_trial_limit: int = 200
    toplevel_trial_limit: int = 20
    backup_ucc_count: int = 4
    bias_step: float = 0.0005
    bias_rel_sigma: float = 0.0005
    msb_bits: int = 6
    lsb_bits: int = 8
    lsb_sigma_factor: float = 8.0

    def __post_init__(self) -> None:
        if not 1 <= self.k <= self.n:
            raise ConfigError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        if self.sub_nominal <= 0.0:
            raise ConfigError(f"sub_nominal must be > 0, got {self.sub_nominal}")
        if self.ucc_sigma < 0.0 or self.bias_rel_sigma < 0.0:
            raise ConfigError("sigmas must be >= 0")
        if self.bias_step < 0.0 or self.bias_step * (self.n - 1) >= 2.0:
            raise ConfigError(
                f"bias_step must be >= 0 and keep all nominals positive,"
                f" got {self.bias_step}"
            )
        if self.i_tiny is None:
            object.__setattr__(self, "i_tiny", self.ucc_sigma / 10.0)
        if self.i_tiny <= 0.0:
            raise ConfigError(f"i_tiny must be > 0, got {self.i_tiny}")
        if self.cell_trial_limit < 1 or self.toplevel_trial_limit < 1:
            raise ConfigError("trial limits must be >= 1")
        if self.backup_ucc_count < 0:
            raise ConfigError("backup_ucc_count must be >= 0")
        if self.msb_bits < 1 or self.lsb_bits < 1:
            raise ConfigError("msb_bits and lsb_bits must each be >= 1")
        if self.lsb_sigma_factor <= 0.0:
            raise ConfigError("lsb_sigma_factor must be > 0")

    @property
    def sub_sigma(self) -> float:
        return self.ucc_sigma / math.sqrt(self.k)

    @property
    def n_ucc(self) -> int:
        return 2**self.msb_bits - 1

    @property
    def ucc_nominal(self) -> float:
        return self.k * self.sub_nominal

    @property
    def lsb_levels(self) -> int:
        return 2**self.lsb_bits

    @property
    def lsb_unit_nominal(self) -> float:
        return self.ucc_nominal / self.lsb_levels

    @property
    def lsb_unit_sigma(self) -> float:
        return (self.ucc_sigma / math.sqrt(self.lsb_levels)) / self.lsb_sigma_factor


@dataclass(frozen=True, eq=False)
class SelfHealSample:
    """Cells, pooled backups, bias elements, LSB bank, and the reference."""

    config: SelfHealConfig
    cells: tuple[ElementSet, ...]
    backups: tuple[ElementSet, ...]
    bias_elements: ElementSet
    lsb_bit_currents: tuple[float, ...]
    reference_current: float

    def __post_init__(self) -> None:
        if len(self.cells) != self.config.n_ucc:
            raise ConfigError(
                f"expected {self.config.n_ucc} cells, got {len(self.cells)}"
            )
        if len(self.backups) != self.config.backup_ucc_count:
            raise ConfigError(
                f"expected {self.config.backup_ucc_count} backups,"
                f" got {len(self.backups)}"
            )


def sample_selfheal(config: SelfHealConfig, rng=None) -> SelfHealSample:
    """Draw one self-healing converter instance.

    Draw order: the 63 cells, then the backup cells, then the bias elements,
    then the LSB units bit by bit plus the reference's extra unit.  The
    reference accumulates via ``math.fsum`` so a zero-variance draw lands
    exactly on the nominal cell current (the window's closed lower edge).
    """
    rng = np.random.default_rng(rng)
    cfg = config
    scheme = Uniform(cfg.sub_nominal)
    model = MismatchModel(cfg.sub_sigma, cfg.sub_nominal)
    cells = tuple(
        sample_element_set(scheme, model, cfg.n, rng) for _ in range(cfg.n_ucc)
    )
    backups = tuple(
        sample_element_set(scheme, model, cfg.n, rng)
        for _ in range(cfg.backup_ucc_count)
    )
    bias = sample_element_set(
        Arithmetic(1.0, cfg.bias_step), MismatchModel(cfg.bias_rel_sigma, 1.0), cfg.n, rng
    )
    bits, reference = _draw_lsb_bank(
        cfg.lsb_bits, cfg.lsb_unit_nominal, cfg.lsb_unit_sigma, rng
    )
    return SelfHealSample(cfg, cells, backups, bias, bits, reference)


@dataclass(frozen=True, eq=False)
class SelfHealResult:
    """Outcome of one controller run.

    ``sources[i]`` is the physical element set cell i ended up using: its own
    index, or n_ucc + b for pooled backup b.  ``cell_currents`` are the healed
    (bias-scaled) currents.  ``trace`` is a JSON-ready dict recording the full
    search: per-cell trial counts, backups used, and every top-level restart.
    """

    healed: bool
    bias_selection: Combination
    scale: float
    selections: Optional[tuple[Combination, ...]]
    sources: Optional[tuple[int, ...]]
    cell_currents: Optional[tuple[float, ...]]
    trace: dict


def self_heal_ses(sample: SelfHealSample, rng=0) -> SelfHealResult:
    """Randomized window-search self-healing over all cells.

    For each cell, draw up to ``cell_trial_limit`` random k-subsets and accept
    the first whose bias-scaled sum lands in the closed window
    [reference, reference + i_tiny].  A cell that misses auditions the pooled
    backup sets in order, each with a fresh draw budget; a backup is consumed
    only when it heals (the position commits to it) — an audition that also
    misses leaves the spare on the shelf for later cells.  When a cell fails
    its own search and every available spare, the controller redraws the
    top-level bias combination (rescaling every cell sum by
    selected-bias-mean / nominal) and restarts the whole pass with the
    original cells and a restored pool, up to ``toplevel_trial_limit``
    attempts; only then does it report failure.

    The first attempt uses the balanced bias combination; restarts draw
    random ones.  Passing an int seed records it in the trace, making the
    run replayable bit for bit.
    """
    cfg = sample.config
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    gen = np.random.default_rng(rng)
    indices = combination_index_matrix(cfg.n, cfg.k)
    n_combos = indices.shape[0]
    window_low = sample.reference_current
    window_high = window_low + cfg.i_tiny

    attempts_log: list[dict] = []
    bias = balanced_combination(cfg.n, cfg.k)
    scale = 1.0
    for attempt in range(cfg.toplevel_trial_limit):
        if attempt > 0:
            row = indices[int(gen.integers(0, n_combos))]
            bias = Combination(tuple(int(i) for i in row))
        scale = subset_value(sample.bias_elements, bias) / float(cfg.k)
        backup_pool = list(range(len(sample.backups)))
        selections: list[Combination] = []
        sources: list[int] = []
        currents: list[float] = []
        cell_logs: list[dict] = []
        completed = True
        for ci, own_elements in enumerate(sample.cells):
            backups_used: list[int] = []
            trials = 0
            found: Optional[Combination] = None
            current = math.nan
            source = ci
            candidates = [(ci, -1, own_elements)]
            candidates += [
                (len(sample.cells) + b, b, sample.backups[b]) for b in backup_pool
            ]
            for cand_source, b, elements in candidates:
                if b >= 0:
                    backups_used.append(b)
                draws = gen.integers(0, n_combos, size=cfg.cell_trial_limit)
                sums = elements.realized[indices[draws]].sum(axis=1) * scale
                in_window = (sums >= window_low) & (sums <= window_high)
                if in_window.any():
                    hit = int(np.argmax(in_window))
                    trials += hit + 1
                    found = Combination(tuple(int(i) for i in indices[draws[hit]]))
                    current = float(sums[hit])
                    source = cand_source
                    if b >= 0:
                        backup_pool.remove(b)
                    break
                trials += cfg.cell_trial_limit
            cell_logs.append(
                {
                    "cell": ci,
                    "trials": trials,
                    "backups_used": backups_used,
                    "healed": found is not None,
                }
            )
            if found is None:
                completed = False
                break
            selections.append(found)
            sources.append(source)
            currents.append(current)
        attempts_log.append(
            {
                "bias_selection": [int(i) for i in bias.indices],
                "scale": float(scale),
                "cells": cell_logs,
                "completed": completed,
            }
        )
        if completed:
            trace = {
                "seed": seed,
                "outcome": "healed",
                "toplevel_restarts": attempt,
                "attempts": attempts_log,
            }
            return SelfHealResult(
                healed=True,
                bias_selection=bias,
                scale=scale,
                selections=tuple(selections),
                sources=tuple(sources),
                cell_currents=tuple(currents),
                trace=trace,
            )
    trace = {
        "seed": seed,
        "outcome": "failed",
        "toplevel_restarts": cfg.toplevel_trial_limit - 1,
        "attempts": attempts_log,
    }
    return SelfHealResult(
        healed=False,
        bias_selection=bias,
        scale=scale,
        selections=None,
        sources=None,
        cell_currents=None,
        trace=trace,
    )


def healed_linearity(sample: SelfHealSample, result: SelfHealResult) -> LinearityReport:
    """Static linearity of the healed converter."""
    if not result.healed:
        raise ConfigError("self-heal run failed; there is no healed converter")
    return linearity_from_curve(
        _curve_from_levels(
            np.array(result.cell_currents), np.asarray(sample.lsb_bit_currents)
        )
    )


def _selfheal_pre_linearity(sample: SelfHealSample) -> LinearityReport:
    """Linearity before healing: balanced selections, balanced bias."""
    cfg = sample.config
    balanced = balanced_combination(cfg.n, cfg.k)
    scale = subset_value(sample.bias_elements, balanced) / float(cfg.k)
    currents = np.array(
        [subset_value(cell, balanced) * scale for cell in sample.cells]
    )
    return linearity_from_curve(
        _curve_from_levels(currents, np.asarray(sample.lsb_bit_currents))
    )


# ---------------------------------------------------------------------------
# Error sensing


SENSE_MODES = ("amplitude", "delay", "duty")


@dataclass(frozen=True)
class SensedCell:
    """Square-wave cell output: amplitude (A) plus timing errors (s).

    ``delay`` shifts both edges; ``duty`` widens the high phase symmetrically
    (rise earlier by duty/2, fall later by duty/2).  Nominal is a 50% square.
    """

    amplitude: float
    delay: float = 0.0
    duty: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.amplitude) or self.amplitude < 0.0:
            raise ConfigError(f"amplitude must be finite and >= 0, got {self.amplitude}")
        if not (math.isfinite(self.delay) and math.isfinite(self.duty)):
            raise ConfigError("delay and duty must be finite")


@dataclass(frozen=True)
class SensingConfig:
    """Demodulation settings: toggle frequency and output scale (V per A)."""

    f_meas: float = 400e6
    sensing_gain: float = 1.0

    def __post_init__(self) -> None:
        if self.f_meas <= 0.0:
            raise ConfigError(f"f_meas must be > 0, got {self.f_meas}")


def _cell_wave(cell: SensedCell, f: float) -> EdgeWaveform:
    rise = f * (cell.delay - cell.duty / 2.0)
    fall = 0.5 + f * (cell.delay + cell.duty / 2.0)
    if abs(f * cell.delay) + abs(f * cell.duty) / 2.0 >= 0.125:
        raise ConfigError(
            "timing errors must stay well below an eighth of the toggle period"
        )
    return square_wave(1.0 / f, rise, fall, low=0.0, high=cell.amplitude)


def _double_frequency_square(period: float, center_frac: float) -> EdgeWaveform:
    """+/-1 square at twice the toggle rate, +1 pulses centered on the edges."""
    edges = sorted(
        (
            (math.fmod(center_frac - 0.125, 1.0) % 1.0, 1.0),
            (math.fmod(center_frac + 0.125, 1.0) % 1.0, -1.0),
            (math.fmod(center_frac + 0.375, 1.0) % 1.0, 1.0),
            (math.fmod(center_frac + 0.625, 1.0) % 1.0, -1.0),
        )
    )
    times = np.array([t for t, _ in edges])
    levels = np.array([v for _, v in edges])
    return EdgeWaveform(period, times, levels)


def sense_error(
    cell_a: SensedCell,
    cell_ref: SensedCell,
    mode: str,
    cfg: SensingConfig = SensingConfig(),
) -> float:
    """DC readout of the chopped difference between two cell outputs.

    Both cells toggle at ``cfg.f_meas``; their difference is multiplied by
    the mode's square-wave modulation and averaged over one period:

    * ``amplitude`` — in-phase square,
    * ``delay`` — quadrature square (a quarter period later),
    * ``duty`` — square at twice the toggle rate, pulses centered on the
      pair's mean edge positions.

    All three modulations are aligned to the *pair-mean* edge timing, which
    makes the misalignment slivers of the two cells congruent: each mode
    reads its own error linearly while the other two cancel.
    """
    if mode not in SENSE_MODES:
        raise ConfigError(f"mode must be one of {SENSE_MODES}, got {mode!r}")
    f = cfg.f_meas
    wave_a = _cell_wave(cell_a, f)
    wave_ref = _cell_wave(cell_ref, f)
    mean_delay = 0.5 * (cell_a.delay + cell_ref.delay)
    mean_duty = 0.5 * (cell_a.duty + cell_ref.duty)
    in_phase = square_wave(
        1.0 / f,
        f * (mean_delay - mean_duty / 2.0),
        0.5 + f * (mean_delay + mean_duty / 2.0),
        low=-1.0,
        high=1.0,
    )
    if mode == "amplitude":
        modulation = in_phase
    elif mode == "delay":
        modulation = in_phase.shifted(0.25)
    else:
        modulation = _double_frequency_square(1.0 / f, f * mean_delay)
    return cfg.sensing_gain * (
        product_average(wave_a, modulation) - product_average(wave_ref, modulation)
    )


# ---------------------------------------------------------------------------
# Yield studies


YIELD_FLOWS = ("eses", "ses", "self-heal", "timing")

_FLOW_COLUMNS = {
    "eses": ("sample_id", "pre_inl_max", "post_inl_max", "pre_dnl_max", "post_dnl_max"),
    "ses": ("sample_id", "pre_inl_max", "post_inl_max", "pre_dnl_max", "post_dnl_max"),
    "self-heal": (
        "sample_id",
        "healed",
        "restarts",
        "pre_inl_max",
        "post_inl_max",
        "pre_dnl_max",
        "post_dnl_max",
    ),
    "timing": (
        "sample_id",
        "pre_delay_sigma",
        "post_delay_sigma",
        "pre_duty_sigma",
        "post_duty_sigma",
    ),
}


@dataclass(frozen=True, eq=False)
class YieldResult:
    """Monte Carlo yield study: per-sample rows plus distribution summaries.

    ``percentiles[column]`` holds the 50th/95th/99th percentile of that
    column over samples with a finite value; ``histograms[column]`` is the
    (counts, bin_edges) pair from ``np.histogram``.  ``summary`` carries
    flow-specific aggregates (heal success rate, pooled timing sigmas).
    """

    flow: str
    columns: tuple[str, ...]
    rows: tuple[dict, ...]
    percentiles: dict
    histograms: dict
    summary: dict


def _amplitude_row(config: DacConfig, master_seed: int, i: int) -> dict:
    rng = sample_substream(master_seed, i)
    sample = sample_dac(config, rng)
    pre = linearity(sample)
    post = linearity(calibrate_amplitude_eses(sample))
    return {
        "sample_id": i,
        "pre_inl_max": pre.inl_max,
        "post_inl_max": post.inl_max,
        "pre_dnl_max": pre.dnl_max,
        "post_dnl_max": post.dnl_max,
    }


def _timing_row(config: DacConfig, master_seed: int, i: int) -> dict:
    rng = sample_substream(master_seed, i)
    sample = sample_dac(config, rng)
    calibrated = calibrate_timing(sample)
    return {
        "sample_id": i,
        "pre_delay_sigma": float(np.std(delay_errors(sample))),
        "post_delay_sigma": float(np.std(delay_errors(calibrated))),
        "pre_duty_sigma": float(np.std(duty_errors(sample))),
        "post_duty_sigma": float(np.std(duty_errors(calibrated))),
    }


def _selfheal_row(config: SelfHealConfig, master_seed: int, i: int) -> dict:
    rng = sample_substream(master_seed, i)
    sample = sample_selfheal(config, rng)
    pre = _selfheal_pre_linearity(sample)
    result = self_heal_ses(sample, rng)
    if result.healed:
        post = healed_linearity(sample, result)
        post_inl, post_dnl = post.inl_max, post.dnl_max
    else:
        post_inl = post_dnl = math.nan
    return {
        "sample_id": i,
        "healed": 1.0 if result.healed else 0.0,
        "restarts": float(result.trace["toplevel_restarts"]),
        "pre_inl_max": pre.inl_max,
        "post_inl_max": post_inl,
        "pre_dnl_max": pre.dnl_max,
        "post_dnl_max": post_dnl,
    }


def yield_study(
    config: Union[DacConfig, SelfHealConfig],
    n_samples: int,
    flow: str,
    master_seed: int = 1,
    threads: int = 1,
    bins: int = 60,
) -> YieldResult:
    """Monte Carlo study over independent converter samples.

    Flows: ``eses`` (graded amplitude calibration), ``ses`` (the same flow on
    the uniform-sizing comparison converter derived from ``config``),
    ``self-heal`` (window-search controller; needs a SelfHealConfig), and
    ``timing`` (delay/duty calibration sigmas).  Sample i always runs on the
    generator spawned from (master_seed, i), so results are deterministic and
    independent of ``threads``.
    """
    if flow not in YIELD_FLOWS:
        raise ConfigError(f"flow must be one of {YIELD_FLOWS}, got {flow!r}")
    if n_samples < 100:
        raise ConfigError(f"yield studies need n_samples >= 100, got {n_samples}")
    if bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}")
    if flow == "self-heal":
        if not isinstance(config, SelfHealConfig):
            raise ConfigError("the self-heal flow needs a SelfHealConfig")
        row_fn = lambda i: _selfheal_row(config, master_seed, i)
    else:
        if not isinstance(config, DacConfig):
            raise ConfigError(f"the {flow} flow needs a DacConfig")
        if flow == "ses":
            run_config = uniform_comparison_config(config)
            row_fn = lambda i: _amplitude_row(run_config, master_seed, i)
        elif flow == "eses":
            row_fn = lambda i: _amplitude_row(config, master_seed, i)
        else:
            row_fn = lambda i: _timing_row(config, master_seed, i)

    rows = tuple(parallel_indexed(n_samples, row_fn, threads))
    columns = _FLOW_COLUMNS[flow]

    percentiles: dict = {}
    histograms: dict = {}
    for column in columns:
        if column == "sample_id":
            continue
        values = np.array([row[column] for row in rows], dtype=float)
        finite = values[np.isfinite(values)]
        if finite.size == 0:
            continue
        percentiles[column] = {
            "p50": float(np.percentile(finite, 50)),
            "p95": float(np.percentile(finite, 95)),
            "p99": float(np.percentile(finite, 99)),
        }
        counts, edges = np.histogram(finite, bins=bins)
        histograms[column] = (counts, edges)

    summary: dict = {}
    if flow == "self-heal":
        healed = np.array([row["healed"] for row in rows])
        summary["heal_success_rate"] = float(np.mean(healed))
    elif flow == "timing":
        for column in ("pre_delay_sigma", "post_delay_sigma", "pre_duty_sigma", "post_duty_sigma"):
            variances = np.array([row[column] ** 2 for row in rows])
            summary[column + "_pooled"] = float(math.sqrt(np.mean(variances)))
    return YieldResult(
        flow=flow,
        columns=columns,
        rows=rows,
        percentiles=percentiles,
        histograms=histograms,
        summary=summary,
    )
