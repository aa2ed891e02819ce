"""Eight-phase harmonic-rejection receiver with subset-selection tuning.

The receiver model: a divide-by-8 ring supplies eight 50%-duty LO phases 45
degrees apart.  Each mixing branch commutates through one differential phase
pair (p, p+4); three branches per path are recombined with weights
approximating 1:sqrt(2):1, which cancels the 3rd and 5th LO harmonics when
branch gains and phase spacing are exact.  Everything downstream analyzes the
*effective LO* — the weighted sum of the differential phase waveforms — via
the exact Fourier series of a piecewise-constant periodic signal, so every
spectral number is closed-form for a given sample state.

Mismatch enters three ways, each with a tunable subset-selection knob sized to
cover six sigma of the total variation:

* branch gain:   K-of-N tail current elements, gain = (I_sel/I_nom)^alpha
* pair delay:    one clock inverter per differential pair (common to its four
                 edges), delay = base + drive * W_nom/W_sel
* edge timing:   per-phase pull-up (rise) and pull-down (fall) buffer
                 networks with the same inverse-width delay law

Timing deviations are fixed in seconds; their harmonic impact scales with the
operating frequency, so calibration runs at the top frequency and sweeps down.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence, Union

import numpy as np

from .mismatch import (
    Arithmetic,
    Combination,
    ConfigError,
    DegenerateConfigurationError,
    ElementSet,
    MismatchModel,
    all_subset_sums,
    balanced_combination,
    combination_index_matrix,
    sample_element_set,
    subset_value,
)
from .waveform import EdgeWaveform, combine, edge_fourier, fourier_coeff, square_wave

__all__ = [
    "HrConfig",
    "TunableInverter",
    "LoPhaseSet",
    "HrBranch",
    "HrReceiverSample",
    "CalStep",
    "CalReport",
    "HrrPoint",
    "PATH_BRANCHES",
    "HRR_DB_CAP",
    "sample_receiver",
    "zero_variance_receiver",
    "ideal_receiver",
    "effective_lo",
    "hrr",
    "measure_harmonic_power",
    "calibrate_even_order",
    "calibrate_odd_order",
    "sweep_hrr",
]

N_PHASES = 8
#: branch indices (== differential pair indices) composing each output path
PATH_BRANCHES = {"I": (0, 1, 2), "Q": (1, 2, 3)}
#: |c_n| below this fraction of |c_1| is reported as perfect rejection
HRR_INF_REL = 1e-15
#: serialized stand-in for an infinite rejection ratio
HRR_DB_CAP = 300.0
#: cap on knob-cycle repeats within one calibration stage
_MAX_STAGE_PASSES = 8


# ---------------------------------------------------------------------------
# range sizing
# ---------------------------------------------------------------------------


def _power_law_step(alpha: float, reach: float) -> float:
    """Smallest arithmetic step d such that (K-subset sums of sizes a(1 +/- 3d))
    pushed through x -> x**alpha cover a relative gain deviation of +/-reach."""
    if reach == 0.0:
        return 0.0
    if reach >= 1.0:
        raise ConfigError(f"gain tuning cannot cover a relative reach of {reach}")
    up = ((1.0 + reach) ** (1.0 / alpha) - 1.0) / 3.0
    down = (1.0 - (1.0 - reach) ** (1.0 / alpha)) / 3.0
    return max(up, down)


def _inverse_width_step(drive: float, reach_seconds: float) -> float:
    """Smallest step d so delay = drive * W_nom/W_sel covers +/-reach_seconds.

    The compressive side (W_sel above nominal) is the binding one:
    drive * 3d/(1+3d) >= reach.
    """
    if reach_seconds == 0.0:
        return 0.0
    x = reach_seconds / drive
    if x >= 1.0:
        raise ConfigError(
            f"delay tuning range {drive:g}s cannot cover {reach_seconds:g}s"
        )
    return x / (3.0 * (1.0 - x))


@dataclasses.dataclass(frozen=True)
class HrConfig:
    """Receiver statistics and derived tuning-network sizing.

    Variance budgets follow the split between what the selection networks can
    reach (intrinsic fraction) and what they must correct (extrinsic rest):
    8% of gain variance is intrinsic to the tail elements, 25% of clock-delay
    variance to the pair clock inverters, and 45% of differential-phase
    variance to the per-phase rise/fall buffer networks (split equally between
    the two networks of a phase).

    ``f_low`` is the gain-measurement frequency.  Timing errors are fixed in
    seconds, so their phase contribution scales with frequency; the default
    sits at f0/50 where that contribution falls below the gain-selection
    resolution.  Gain and delay corrections then settle independently and the
    odd-order loop converges within two rounds.
    """

    f0: float = 750e6
    f_low: float = 15e6
    n_elements: int = 12
    k_selected: int = 6
    element_rel_sigma: float = 0.01
    gain_sigma: float = 0.01
    gain_intrinsic_fraction: float = 0.08
    gain_alpha: float = 0.5
    clock_delay_sigma: float = 3.7e-12
    clock_intrinsic_fraction: float = 0.25
    diff_phase_sigma: float = 2.0e-12
    diff_intrinsic_fraction: float = 0.45
    weights: tuple[float, float, float] = (12.0, 17.0, 12.0)
    base_delay: float = 50e-12
    coverage_sigma: float = 6.0
    range_margin: float = 1.15

    def __post_init__(self) -> None:
        if not (0 < self.k_selected < self.n_elements):
            raise ConfigError(
                f"need 0 < k < n, got n={self.n_elements} k={self.k_selected}"
            )
        if self.f_low >= self.f0:
            raise ConfigError(f"f_low {self.f_low:g} must be below f0 {self.f0:g}")
        for name in ("f0", "f_low", "gain_alpha", "coverage_sigma"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        for name in (
            "element_rel_sigma",
            "gain_sigma",
            "clock_delay_sigma",
            "diff_phase_sigma",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in (
            "gain_intrinsic_fraction",
            "clock_intrinsic_fraction",
            "diff_intrinsic_fraction",
        ):
            frac = getattr(self, name)
            if not 0.0 < frac <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {frac}")
        if self.range_margin < 1.0:
            raise ConfigError("range_margin must be >= 1")
        if len(self.weights) != 3 or any(w <= 0 for w in self.weights):
            raise ConfigError(f"weights must be three positive values: {self.weights}")
        self._check_coverage()

    # -- derived sizing ----------------------------------------------------

    @property
    def _reach_factor(self) -> float:
        return self.coverage_sigma * self.range_margin

    @property
    def tail_element_sigma(self) -> float:
        """Element sigma that puts gain_intrinsic_fraction of gain variance
        into the selected tail sum: sigma_gain ~= alpha * sigma_el * sqrt(k)/k."""
        return (
            math.sqrt(self.k_selected)
            * math.sqrt(self.gain_intrinsic_fraction)
            * self.gain_sigma
            / self.gain_alpha
        )

    @property
    def tail_extrinsic_sigma(self) -> float:
        return math.sqrt(1.0 - self.gain_intrinsic_fraction) * self.gain_sigma

    @property
    def tail_step(self) -> float:
        return _power_law_step(self.gain_alpha, self._reach_factor * self.gain_sigma)

    @property
    def clock_intrinsic_sigma(self) -> float:
        return math.sqrt(self.clock_intrinsic_fraction) * self.clock_delay_sigma

    @property
    def clock_extrinsic_sigma(self) -> float:
        return math.sqrt(1.0 - self.clock_intrinsic_fraction) * self.clock_delay_sigma

    @property
    def clock_drive(self) -> float:
        """Drive coefficient making the inverter's own width mismatch worth
        exactly the intrinsic clock-delay sigma."""
        if self.clock_delay_sigma == 0.0:
            return 0.0
        return (
            self.clock_intrinsic_sigma
            * math.sqrt(self.k_selected)
            / self.element_rel_sigma
        )

    @property
    def clock_step(self) -> float:
        if self.clock_delay_sigma == 0.0:
            return 0.0
        return _inverse_width_step(
            self.clock_drive, self._reach_factor * self.clock_delay_sigma
        )

    @property
    def buffer_network_sigma(self) -> float:
        """Intrinsic delay sigma of one rise or fall buffer network (the
        intrinsic differential-phase variance splits between the two)."""
        return math.sqrt(self.diff_intrinsic_fraction / 2.0) * self.diff_phase_sigma

    @property
    def buffer_extrinsic_sigma(self) -> float:
        return math.sqrt((1.0 - self.diff_intrinsic_fraction) / 2.0) * self.diff_phase_sigma

    @property
    def buffer_drive(self) -> float:
        if self.diff_phase_sigma == 0.0:
            return 0.0
        return (
            self.buffer_network_sigma
            * math.sqrt(self.k_selected)
            / self.element_rel_sigma
        )

    @property
    def buffer_step(self) -> float:
        if self.diff_phase_sigma == 0.0:
            return 0.0
        return _inverse_width_step(
            self.buffer_drive, self._reach_factor * self.diff_phase_sigma
        )

    def _check_coverage(self) -> None:
        """Tuning ranges must cover coverage_sigma of the total variation."""
        if self.element_rel_sigma == 0.0 and (
            self.gain_sigma or self.clock_delay_sigma or self.diff_phase_sigma
        ):
            raise ConfigError("element_rel_sigma must be > 0 when variances are set")
        for name, step, drive, total in (
            ("clock", self.clock_step, self.clock_drive, self.clock_delay_sigma),
            ("buffer", self.buffer_step, self.buffer_drive, self.diff_phase_sigma),
        ):
            if total == 0.0:
                continue
            down_reach = drive * 3.0 * step / (1.0 + 3.0 * step)
            if down_reach + 1e-18 < self.coverage_sigma * total:
                raise ConfigError(
                    f"{name} tuning range covers only {down_reach:g}s of the "
                    f"required {self.coverage_sigma * total:g}s"
                )
        if self.gain_sigma > 0.0:
            d = self.tail_step
            up = (1.0 + 3.0 * d) ** self.gain_alpha - 1.0
            down = 1.0 - (1.0 - 3.0 * d) ** self.gain_alpha
            need = self.coverage_sigma * self.gain_sigma
            if min(up, down) + 1e-15 < need:
                raise ConfigError(
                    f"gain tuning range covers only {min(up, down):g} of the "
                    f"required {need:g} relative deviation"
                )
        for name, step in (
            ("tail_step", self.tail_step),
            ("clock_step", self.clock_step),
            ("buffer_step", self.buffer_step),
        ):
            if step * (self.n_elements - 1) >= 2.0:
                raise ConfigError(f"{name} {step:g} drives element sizes non-positive")

    # -- element populations -------------------------------------------------

    def tail_scheme(self) -> Arithmetic:
        return Arithmetic(mean=1.0, step=self.tail_step)

    def tail_model(self) -> MismatchModel:
        return MismatchModel(sigma_ref=max(self.tail_element_sigma, 0.0), size_ref=1.0)

    def width_scheme(self, step: float) -> Arithmetic:
        return Arithmetic(mean=1.0, step=step)

    def width_model(self) -> MismatchModel:
        return MismatchModel(sigma_ref=self.element_rel_sigma, size_ref=1.0)


# ---------------------------------------------------------------------------
# sampled state
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True, eq=False)
class TunableInverter:
    """One selectable-width network: delay = base + drive * W_nominal_half/W_selected.

    ``extrinsic_error`` is the part of the stage's delay spread the selection
    cannot see (wiring, loading, everything outside the selected widths).
    """

    elements: ElementSet
    selection: Combination
    base_delay: float
    drive_coefficient: float
    extrinsic_error: float = 0.0

    def __post_init__(self) -> None:
        if self.delay() <= 0.0:
            raise ConfigError("inverter delay must stay strictly positive")

    @property
    def w_nominal_half(self) -> float:
        return float(self.elements.nominal.mean()) * self.selection.k

    def selected_width(self) -> float:
        return subset_value(self.elements, self.selection)

    def delay(self) -> float:
        if self.drive_coefficient == 0.0:
            return self.base_delay + self.extrinsic_error
        return (
            self.base_delay
            + self.drive_coefficient * (self.w_nominal_half / self.selected_width())
            + self.extrinsic_error
        )

    def delay_deviation(self) -> float:
        """Delay relative to the nominal design point (base + drive)."""
        return self.delay() - self.base_delay - self.drive_coefficient

    def with_selection(self, selection: Combination) -> "TunableInverter":
        return dataclasses.replace(self, selection=selection)


@dataclasses.dataclass(frozen=True, eq=False)
class LoPhaseSet:
    """Eight LO phases and the inverters that set their edge timing.

    Phase p's rise edge error = clock_networks[p % 4] deviation (common to the
    whole differential pair) + rise_networks[p] deviation; fall edges likewise
    through fall_networks[p].  All errors are seconds.
    """

    f_lo: float
    clock_networks: tuple[TunableInverter, ...]
    rise_networks: tuple[TunableInverter, ...]
    fall_networks: tuple[TunableInverter, ...]

    def __post_init__(self) -> None:
        if len(self.clock_networks) != N_PHASES // 2:
            raise ConfigError("need one clock inverter per differential pair")
        if len(self.rise_networks) != N_PHASES or len(self.fall_networks) != N_PHASES:
            raise ConfigError("need one rise and one fall network per phase")

    def rise_error(self, phase: int) -> float:
        return (
            self.clock_networks[phase % 4].delay_deviation()
            + self.rise_networks[phase].delay_deviation()
        )

    def fall_error(self, phase: int) -> float:
        return (
            self.clock_networks[phase % 4].delay_deviation()
            + self.fall_networks[phase].delay_deviation()
        )


@dataclasses.dataclass(frozen=True, eq=False)
class HrBranch:
    """One mixing branch: differential phase pair + selectable tail current."""

    lo_phase_index: int
    gm_elements: ElementSet
    gm_selection: Combination
    gm_extrinsic_error: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.lo_phase_index < N_PHASES // 2:
            raise ConfigError(f"lo_phase_index out of range: {self.lo_phase_index}")

    def gain(self, alpha: float) -> float:
        i_nominal_half = float(self.gm_elements.nominal.mean()) * self.gm_selection.k
        i_selected = subset_value(self.gm_elements, self.gm_selection)
        return (i_selected / i_nominal_half) ** alpha * (1.0 + self.gm_extrinsic_error)

    def with_selection(self, selection: Combination) -> "HrBranch":
        return dataclasses.replace(self, gm_selection=selection)


@dataclasses.dataclass(frozen=True, eq=False)
class HrReceiverSample:
    """One Monte Carlo receiver instance: four branches sharing an LO phase set."""

    config: HrConfig
    phases: LoPhaseSet
    branches: tuple[HrBranch, ...]

    def __post_init__(self) -> None:
        if len(self.branches) != 4:
            raise ConfigError("need exactly four branches (phase families 0..3)")


def sample_receiver(
    config: HrConfig, rng: Union[np.random.Generator, int, None]
) -> HrReceiverSample:
    """Draw one receiver.  Draw order is fixed: per-branch tail elements then
    extrinsic gain error, per-pair clock network then extrinsic delay, then per
    phase the rise network + extrinsic and fall network + extrinsic."""
    rng = np.random.default_rng(rng)
    n, k = config.n_elements, config.k_selected
    start = balanced_combination(n, k)

    branches = []
    for m in range(4):
        es = sample_element_set(config.tail_scheme(), config.tail_model(), n, rng)
        ext = float(rng.normal(0.0, config.tail_extrinsic_sigma))
        branches.append(
            HrBranch(
                lo_phase_index=m,
                gm_elements=es,
                gm_selection=start,
                gm_extrinsic_error=ext,
            )
        )

    def draw_inverter(step: float, drive: float, ext_sigma: float) -> TunableInverter:
        es = sample_element_set(config.width_scheme(step), config.width_model(), n, rng)
        ext = float(rng.normal(0.0, ext_sigma))
        return TunableInverter(
            elements=es,
            selection=start,
            base_delay=config.base_delay,
            drive_coefficient=drive,
            extrinsic_error=ext,
        )

    clocks = tuple(
        draw_inverter(config.clock_step, config.clock_drive, config.clock_extrinsic_sigma)
        for _ in range(4)
    )
    rises, falls = [], []
    for _ in range(N_PHASES):
        rises.append(
            draw_inverter(
                config.buffer_step, config.buffer_drive, config.buffer_extrinsic_sigma
            )
        )
        falls.append(
            draw_inverter(
                config.buffer_step, config.buffer_drive, config.buffer_extrinsic_sigma
            )
        )

    phases = LoPhaseSet(
        f_lo=config.f0,
        clock_networks=clocks,
        rise_networks=tuple(rises),
        fall_networks=tuple(falls),
    )
    return HrReceiverSample(config=config, phases=phases, branches=tuple(branches))


def zero_variance_receiver(config: Optional[HrConfig] = None) -> HrReceiverSample:
    """Receiver with every mismatch source switched off, weights kept.

    Branch gains are exactly the configured recombination weights and all
    edges land on their nominal grid, so the spectrum equals the closed-form
    prediction for those weights.
    """
    base = config if config is not None else HrConfig()
    cfg = dataclasses.replace(
        base,
        element_rel_sigma=0.0,
        gain_sigma=0.0,
        clock_delay_sigma=0.0,
        diff_phase_sigma=0.0,
    )
    return sample_receiver(cfg, rng=0)


def ideal_receiver(config: Optional[HrConfig] = None) -> HrReceiverSample:
    """Zero-variance receiver with exact 1:sqrt(2):1 recombination weights.

    Every harmonic-cancellation condition holds exactly, so HRR3 = HRR5 = inf;
    useful as the textbook reference point and as a calibration no-op check.
    """
    base = config if config is not None else HrConfig()
    return zero_variance_receiver(
        dataclasses.replace(base, weights=(1.0, math.sqrt(2.0), 1.0))
    )


# ---------------------------------------------------------------------------
# effective LO and spectra
# ---------------------------------------------------------------------------


def _check_edge_errors(sample: HrReceiverSample, f: float) -> None:
    worst = 0.0
    for p in range(N_PHASES):
        worst = max(
            worst,
            abs(sample.phases.rise_error(p)),
            abs(sample.phases.fall_error(p)),
        )
    if worst * f >= 1.0 / 16.0:
        raise ConfigError(
            f"edge timing error {worst:g}s exceeds 1/16 of the {1.0 / f:g}s period"
        )


def effective_lo(sample: HrReceiverSample, path: str, f: float) -> EdgeWaveform:
    """Weighted sum of the path's three differential LO waveforms at frequency f.

    Timing errors are fixed in seconds, so their fractional (phase) impact
    scales with f.  Branch amplitudes are gain * positional weight.
    """
    if path not in PATH_BRANCHES:
        raise ConfigError(f"path must be 'I' or 'Q', got {path!r}")
    if f <= 0:
        raise ConfigError(f"frequency must be > 0, got {f}")
    _check_edge_errors(sample, f)
    cfg = sample.config
    period = 1.0 / f
    waves: list[EdgeWaveform] = []
    amps: list[float] = []
    for pos, bi in enumerate(PATH_BRANCHES[path]):
        branch = sample.branches[bi]
        amp = branch.gain(cfg.gain_alpha) * cfg.weights[pos]
        for phase, sign in ((branch.lo_phase_index, 1.0), (branch.lo_phase_index + 4, -1.0)):
            rise = (phase / 8.0 + f * sample.phases.rise_error(phase)) % 1.0
            fall = (phase / 8.0 + 0.5 + f * sample.phases.fall_error(phase)) % 1.0
            waves.append(square_wave(period, rise, fall))
            amps.append(sign * amp)
    return combine(waves, amps)


def _first_and_nth(sample: HrReceiverSample, path: str, n: int, f: float) -> tuple[complex, complex]:
    if n < 2:
        raise ConfigError(f"harmonic index must be >= 2, got {n}")
    lo = effective_lo(sample, path, f)
    c1 = fourier_coeff(lo, 1)
    cn = fourier_coeff(lo, n)
    if abs(c1) == 0.0:
        raise DegenerateConfigurationError(
            "effective LO has no fundamental component (all branch gains zero?)"
        )
    return c1, cn


def hrr(sample: HrReceiverSample, path: str, n: int, f: float) -> float:
    """Harmonic rejection ratio 20*log10(|c1|/|cn|) in dB; inf below 1e-15."""
    c1, cn = _first_and_nth(sample, path, n, f)
    if abs(cn) < HRR_INF_REL * abs(c1):
        return math.inf
    return 20.0 * math.log10(abs(c1) / abs(cn))


def measure_harmonic_power(sample: HrReceiverSample, path: str, n: int, f: float) -> float:
    """Calibration objective |c_n/c_1|^2 — the emulated tone-power measurement."""
    c1, cn = _first_and_nth(sample, path, n, f)
    return (abs(cn) / abs(c1)) ** 2


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class CalStep:
    """One committed search step and the objective it was scored against."""

    stage: str  # "even" | "gain" | "phase"
    iteration: int
    target: str
    objective_before: float
    objective_after: float


@dataclasses.dataclass(frozen=True)
class CalReport:
    steps: tuple[CalStep, ...]
    selections: dict[str, tuple[int, ...]]

    def to_json_dict(self) -> dict:
        return {
            "selections": {k: list(v) for k, v in sorted(self.selections.items())},
            "trace": [dataclasses.asdict(s) for s in self.steps],
        }


def _selection_snapshot(sample: HrReceiverSample) -> dict[str, tuple[int, ...]]:
    out: dict[str, tuple[int, ...]] = {}
    for m, branch in enumerate(sample.branches):
        out[f"tail{m}"] = branch.gm_selection.indices
    for m, inv in enumerate(sample.phases.clock_networks):
        out[f"clock{m}"] = inv.selection.indices
    for p in range(N_PHASES):
        out[f"rise{p}"] = sample.phases.rise_networks[p].selection.indices
        out[f"fall{p}"] = sample.phases.fall_networks[p].selection.indices
    return out


def _branch_edges(sample: HrReceiverSample, bi: int, f: float) -> tuple[np.ndarray, np.ndarray]:
    """Edge times (period fractions) and level deltas of branch bi's
    differential waveform w_p - w_{p+4}, at unit amplitude."""
    p = sample.branches[bi].lo_phase_index
    ph = sample.phases
    times = np.array(
        [
            p / 8.0 + f * ph.rise_error(p),
            p / 8.0 + 0.5 + f * ph.fall_error(p),
            p / 8.0 + 0.5 + f * ph.rise_error(p + 4),
            p / 8.0 + f * ph.fall_error(p + 4),
        ]
    )
    deltas = np.array([1.0, -1.0, -1.0, 1.0])
    return times, deltas


_EDGE_OF_NETWORK = {("rise", 0): 0, ("fall", 0): 1, ("rise", 4): 2, ("fall", 4): 3}


def _candidate_selections(es: ElementSet, k: int) -> tuple[np.ndarray, np.ndarray]:
    """All C(n,k) candidate selected widths plus the index matrix, lexicographic."""
    sums = all_subset_sums(es.realized, k)
    return sums, combination_index_matrix(es.n, k)


def _inverter_candidates(inv: TunableInverter, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Delay deviation of every candidate selection of one inverter."""
    sums, index = _candidate_selections(inv.elements, k)
    if inv.drive_coefficient == 0.0:
        devs = np.full(sums.shape, inv.extrinsic_error)
    else:
        devs = inv.drive_coefficient * (inv.w_nominal_half / sums - 1.0) + inv.extrinsic_error
    return devs, index


def _replace_branch(sample: HrReceiverSample, bi: int, combo: Combination) -> HrReceiverSample:
    branches = list(sample.branches)
    branches[bi] = branches[bi].with_selection(combo)
    return dataclasses.replace(sample, branches=tuple(branches))


def _replace_network(
    sample: HrReceiverSample, kind: str, index: int, combo: Combination
) -> HrReceiverSample:
    ph = sample.phases
    if kind == "clock":
        nets = list(ph.clock_networks)
        nets[index] = nets[index].with_selection(combo)
        ph = dataclasses.replace(ph, clock_networks=tuple(nets))
    elif kind == "rise":
        nets = list(ph.rise_networks)
        nets[index] = nets[index].with_selection(combo)
        ph = dataclasses.replace(ph, rise_networks=tuple(nets))
    else:
        nets = list(ph.fall_networks)
        nets[index] = nets[index].with_selection(combo)
        ph = dataclasses.replace(ph, fall_networks=tuple(nets))
    return dataclasses.replace(sample, phases=ph)


def _branch_even_objective(sample: HrReceiverSample, bi: int, f: float) -> float:
    """|c2/c1|^2 of branch bi measured alone (the even-order cal objective)."""
    times, deltas = _branch_edges(sample, bi, f)
    c1 = edge_fourier(times, deltas, 1)
    c2 = edge_fourier(times, deltas, 2)
    if abs(c1) == 0.0:
        raise DegenerateConfigurationError("branch waveform has no fundamental")
    return float(abs(c2) ** 2 / abs(c1) ** 2)


def _search_buffer(
    sample: HrReceiverSample, m: int, offset: int, kind: str, f: float, iteration: int
) -> tuple[HrReceiverSample, CalStep]:
    cfg = sample.config
    p = sample.branches[m].lo_phase_index + offset
    before = _branch_even_objective(sample, m, f)
    nets = (
        sample.phases.rise_networks if kind == "rise" else sample.phases.fall_networks
    )
    inv = nets[p]
    devs, index = _inverter_candidates(inv, cfg.k_selected)
    times, deltas = _branch_edges(sample, m, f)
    edge = _EDGE_OF_NETWORK[(kind, offset)]
    cand_times = np.broadcast_to(times, (devs.size, 4)).copy()
    cand_times[:, edge] += f * (devs - inv.delay_deviation())
    c1 = edge_fourier(cand_times, deltas, 1)
    c2 = edge_fourier(cand_times, deltas, 2)
    obj = np.abs(c2) ** 2 / np.abs(c1) ** 2
    best = int(np.argmin(obj))
    combo = Combination(tuple(int(i) for i in index[best]))
    trial = _replace_network(sample, kind, p, combo)
    after = _branch_even_objective(trial, m, f)
    if after <= before:
        sample = trial
    else:  # analytic/pipeline rounding disagreement: keep current
        after = before
    return sample, CalStep("even", iteration, f"{kind}{p}", before, after)


def calibrate_even_order(
    sample: HrReceiverSample, rng: Union[np.random.Generator, int, None] = None
) -> tuple[HrReceiverSample, CalReport]:
    """Null each branch's own 2nd harmonic by tuning its four buffer networks.

    Branches are measured alone (the other three off).  For each of the four
    networks of the pair (rise/fall of phase p, then of phase p+4) the search
    is exhaustive over all C(n,k) selections; the cycle over the four networks
    repeats until a full pass commits no change.  A committed step never
    regresses the measured objective, so post-cal HRR2 >= pre-cal HRR2 per
    sample.  The same edge-alignment condition governs the 4th and 6th
    harmonics, so they improve alongside.  ``rng`` is accepted for interface
    symmetry; the exhaustive search uses no randomness.
    """
    del rng
    f = sample.config.f0
    steps = []
    for m in range(4):
        for pass_index in range(_MAX_STAGE_PASSES):
            changed = False
            for offset in (0, 4):
                for kind in ("rise", "fall"):
                    sample, step = _search_buffer(sample, m, offset, kind, f, pass_index)
                    steps.append(step)
                    if step.objective_after < step.objective_before:
                        changed = True
            if not changed:
                break
    return sample, CalReport(steps=tuple(steps), selections=_selection_snapshot(sample))


def _path_unit_coeffs(
    sample: HrReceiverSample, path: str, f: float, harmonics: Sequence[int]
) -> tuple[list[dict[int, complex]], list[float]]:
    """Per-branch unit-amplitude Fourier coefficients and current amplitudes."""
    cfg = sample.config
    units: list[dict[int, complex]] = []
    amps: list[float] = []
    for pos, bi in enumerate(PATH_BRANCHES[path]):
        times, deltas = _branch_edges(sample, bi, f)
        units.append({n: complex(edge_fourier(times, deltas, n)) for n in harmonics})
        amps.append(sample.branches[bi].gain(cfg.gain_alpha) * cfg.weights[pos])
    return units, amps


def _search_tail(
    sample: HrReceiverSample, path: str, bi: int, f: float, iteration: int
) -> tuple[HrReceiverSample, CalStep]:
    cfg = sample.config
    pos = PATH_BRANCHES[path].index(bi)
    units, amps = _path_unit_coeffs(sample, path, f, (1, 3))
    c1_rest = sum(a * u[1] for i, (a, u) in enumerate(zip(amps, units)) if i != pos)
    c3_rest = sum(a * u[3] for i, (a, u) in enumerate(zip(amps, units)) if i != pos)

    branch = sample.branches[bi]
    sums, index = _candidate_selections(branch.gm_elements, cfg.k_selected)
    i_nominal_half = float(branch.gm_elements.nominal.mean()) * cfg.k_selected
    gains = (sums / i_nominal_half) ** cfg.gain_alpha * (1.0 + branch.gm_extrinsic_error)
    amps_cand = gains * cfg.weights[pos]
    c1 = c1_rest + amps_cand * units[pos][1]
    c3 = c3_rest + amps_cand * units[pos][3]
    obj = np.abs(c3) ** 2 / np.abs(c1) ** 2
    best = int(np.argmin(obj))
    combo = Combination(tuple(int(i) for i in index[best]))

    before = measure_harmonic_power(sample, path, 3, f)
    trial = _replace_branch(sample, bi, combo)
    after = measure_harmonic_power(trial, path, 3, f)
    if after <= before:
        sample = trial
    else:
        after = before
    return sample, CalStep("gain", iteration, f"tail{bi}", before, after)


def _search_clock(
    sample: HrReceiverSample, path: str, m: int, f: float, iteration: int
) -> tuple[HrReceiverSample, CalStep]:
    cfg = sample.config
    pos = PATH_BRANCHES[path].index(m)
    units, amps = _path_unit_coeffs(sample, path, f, (1, 3))
    c1_rest = sum(a * u[1] for i, (a, u) in enumerate(zip(amps, units)) if i != pos)
    c3_rest = sum(a * u[3] for i, (a, u) in enumerate(zip(amps, units)) if i != pos)

    inv = sample.phases.clock_networks[m]
    devs, index = _inverter_candidates(inv, cfg.k_selected)
    shift = devs - inv.delay_deviation()  # applies to all four edges of the pair
    rot1 = np.exp(-2j * np.pi * 1 * f * shift)
    rot3 = np.exp(-2j * np.pi * 3 * f * shift)
    c1 = c1_rest + amps[pos] * units[pos][1] * rot1
    c3 = c3_rest + amps[pos] * units[pos][3] * rot3
    obj = np.abs(c3) ** 2 / np.abs(c1) ** 2
    best = int(np.argmin(obj))
    combo = Combination(tuple(int(i) for i in index[best]))

    before = measure_harmonic_power(sample, path, 3, f)
    trial = _replace_network(sample, "clock", m, combo)
    after = measure_harmonic_power(trial, path, 3, f)
    if after <= before:
        sample = trial
    else:
        after = before
    return sample, CalStep("phase", iteration, f"clock{m}", before, after)


def calibrate_odd_order(
    sample: HrReceiverSample, f_0: float, f_low: float, iterations: int = 2
) -> tuple[HrReceiverSample, CalReport]:
    """Gain-then-phase odd-harmonic calibration.

    Per iteration: (1) at f_low — where fixed timing errors have negligible
    phase impact — each path's tail currents are tuned against its own
    3rd-harmonic power (I path: branches 0,1,2; Q path: branch 3, reusing the
    shared 45/90-degree results); (2) at f_0 the pair clock inverters are
    tuned the same way (I path: clocks 0-2; Q path: clock 3).  Exhaustive
    searches, candidates scored in closed form, commits never regress the
    measured objective.  Each stage cycles over its knobs until a full pass
    commits no change, so one iteration leaves the stage at its search floor;
    with f_low well below f_0 the second iteration is already quiescent.
    """
    if f_low >= f_0:
        raise ConfigError(f"f_low {f_low:g} must be below f_0 {f_0:g}")
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}")
    steps = []
    for it in range(1, iterations + 1):
        for path, tails in (("I", (0, 1, 2)), ("Q", (3,))):
            for _ in range(_MAX_STAGE_PASSES):
                changed = False
                for bi in tails:
                    sample, step = _search_tail(sample, path, bi, f_low, it)
                    steps.append(step)
                    if step.objective_after < step.objective_before:
                        changed = True
                if not changed:
                    break
        for path, clocks in (("I", (0, 1, 2)), ("Q", (3,))):
            for _ in range(_MAX_STAGE_PASSES):
                changed = False
                for m in clocks:
                    sample, step = _search_clock(sample, path, m, f_0, it)
                    steps.append(step)
                    if step.objective_after < step.objective_before:
                        changed = True
                if not changed:
                    break
    return sample, CalReport(steps=tuple(steps), selections=_selection_snapshot(sample))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class HrrPoint:
    f_hz: float
    n: int
    hrr_db: float


def sweep_hrr(
    sample: HrReceiverSample,
    f_list: Sequence[float],
    n_list: Sequence[int],
    path: str = "I",
) -> list[HrrPoint]:
    """HRR table over frequency with the sample's fixed selections.

    Timing errors are fixed in seconds, so the fractional phase errors — and
    with them the residual harmonics — shrink as f drops below the calibration
    frequency.  Perfect rejection is reported as the HRR_DB_CAP stand-in so
    the table stays finite."""
    out = []
    for f in f_list:
        for n in n_list:
            value = min(hrr(sample, path, n, f), HRR_DB_CAP)
            out.append(HrrPoint(f_hz=float(f), n=int(n), hrr_db=value))
    return out
