"""Tests for the segmented-converter model.

Derived quantities are checked against independent oracles: a pure-Python
code-by-code re-summation for the transfer curve, a from-definition
endpoint fit for INL/DNL, closed-form demodulator readings derived from the
square-wave overlap geometry plus a dense midpoint-grid integrator that
rebuilds the waveforms from scratch, and re-derived sizing identities for
the timing networks.  Monte Carlo layers run on fixed substreams.
"""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np
import pytest

from subsetcal.csdac import (
    DEFAULT_SUB_SCHEME,
    DacConfig,
    DacSample,
    LinearityReport,
    SENSE_MODES,
    SelfHealConfig,
    SensedCell,
    SensingConfig,
    YIELD_FLOWS,
    amplitude_residuals,
    calibrate_amplitude_eses,
    calibrate_amplitude_ses_comparison,
    calibrate_timing,
    dac_output,
    delay_errors,
    duty_errors,
    healed_linearity,
    linearity,
    linearity_from_curve,
    sample_dac,
    sample_selfheal,
    self_heal_ses,
    sense_error,
    transfer_curve,
    ucc_currents,
    uniform_comparison_config,
    yield_study,
)
from subsetcal.mismatch import (
    Combination,
    ConfigError,
    DegenerateConfigurationError,
    ElementSet,
    Uniform,
    balanced_combination,
    scheme_center,
)
from subsetcal.runner import sample_substream

BALANCED_12_6 = balanced_combination(12, 6)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def oracle_output(sample, code):
    """Code-by-code re-summation from the raw element sets (fsum, no decode
    helpers shared with the implementation)."""
    segments, residue = divmod(code, 2 ** sample.config.lsb_bits)
    parts = []
    for cell in sample.cells[:segments]:
        parts.extend(float(cell.amplitude.realized[i]) for i in cell.selection.indices)
    for b, bit_current in enumerate(sample.lsb_bit_currents):
        if residue // 2**b % 2:
            parts.append(bit_current)
    return math.fsum(parts)


def oracle_linearity(curve):
    """Endpoint-fit INL/DNL straight from the definition, python loops."""
    unit = (curve[-1] - curve[0]) / (len(curve) - 1)
    inl = [(curve[i] - curve[0]) / unit - i for i in range(len(curve))]
    dnl = [0.0] + [(curve[i] - curve[i - 1]) / unit - 1.0 for i in range(1, len(curve))]
    return np.array(inl), np.array(dnl)


def square_high(t, rise, fall):
    """True where the cyclic square (high on [rise, fall) mod 1) is high."""
    return np.mod(t - rise, 1.0) < np.mod(fall - rise, 1.0)


def oracle_sense(cell_a, cell_ref, mode, cfg, n_grid=2**20):
    """Midpoint-grid demodulator rebuilt from scratch.

    Each cell is a 0/A square high on [f*(d - u/2), 0.5 + f*(d + u/2)) of the
    period; the modulation is the +/-1 in-phase square at the pair-mean
    timing, its quarter-period-delayed copy, or the double-rate square whose
    +1 pulses are centered on the pair-mean edges.
    """
    f = cfg.f_meas
    t = (np.arange(n_grid) + 0.5) / n_grid

    def cell_values(cell):
        rise = f * (cell.delay - cell.duty / 2.0)
        fall = 0.5 + f * (cell.delay + cell.duty / 2.0)
        return np.where(square_high(t, rise, fall), cell.amplitude, 0.0)

    mean_d = 0.5 * (cell_a.delay + cell_ref.delay)
    mean_u = 0.5 * (cell_a.duty + cell_ref.duty)
    rise = f * (mean_d - mean_u / 2.0)
    fall = 0.5 + f * (mean_d + mean_u / 2.0)
    if mode == "amplitude":
        mod = np.where(square_high(t, rise, fall), 1.0, -1.0)
    elif mode == "delay":
        mod = np.where(square_high(t - 0.25, rise, fall), 1.0, -1.0)
    else:
        in_pulse = np.mod(t - (f * mean_d - 0.125), 0.5) < 0.25
        mod = np.where(in_pulse, 1.0, -1.0)
    diff = cell_values(cell_a) - cell_values(cell_ref)
    return cfg.sensing_gain * float(np.mean(diff * mod))


def zero_variance_config():
    return DacConfig(sub_sigma=0.0, delay_sigma=0.0, duty_sigma=0.0)


# ---------------------------------------------------------------------------
# configuration and sizing
# ---------------------------------------------------------------------------


def test_default_sub_scheme_is_graded_around_52ua():
    sizes = np.asarray(DEFAULT_SUB_SCHEME.sizes)
    assert sizes.size == 12
    assert np.allclose(np.diff(sizes), 0.76e-6, rtol=1e-12)
    assert math.isclose(scheme_center(DEFAULT_SUB_SCHEME), 52e-6, rel_tol=1e-12)
    assert math.isclose(sizes.min(), 47.82e-6, rel_tol=1e-9)
    assert math.isclose(sizes.max(), 56.18e-6, rel_tol=1e-9)


def test_default_geometry():
    cfg = DacConfig()
    assert cfg.n_ucc == 63
    assert cfg.n_codes == 16384
    assert cfg.lsb_levels == 256
    assert math.isclose(cfg.lsb_unit_nominal, 312e-6 / 256, rel_tol=1e-12)
    assert math.isclose(6 * scheme_center(cfg.ucc_sub_scheme), cfg.ucc_nominal,
                        rel_tol=1e-9)


def test_ucc_sigma_model():
    cfg = DacConfig()
    assert math.isclose(cfg.ucc_sigma, math.sqrt(6) * 1.1e-6, rel_tol=1e-12)
    assert abs(cfg.ucc_sigma - 2.8e-6) <= 0.10 * 2.8e-6
    assert math.isclose(
        cfg.lsb_unit_sigma, cfg.ucc_sigma / 16.0 / 8.0, rel_tol=1e-12
    )


def test_config_validation():
    with pytest.raises(ConfigError):
        DacConfig(resolution=15)
    with pytest.raises(ConfigError):
        DacConfig(msb_bits=0, resolution=8)
    with pytest.raises(ConfigError):
        DacConfig(sub_sigma=-1e-6)
    with pytest.raises(ConfigError):
        DacConfig(lsb_sigma_factor=0.0)
    with pytest.raises(ConfigError):
        DacConfig(k=7)  # 7-subset nominal sum != ucc_nominal
    with pytest.raises(ConfigError):
        DacConfig(ucc_sub_scheme=Uniform(50e-6))


def test_timing_step_covers_budget_on_the_short_side():
    # The tunable term is drive * (W_nom/W_sel - 1); for graded widths of
    # common difference s the extreme 6-subsets give reaches
    #   +drive*3s/(1-3s)  and  -drive*3s/(1+3s),
    # so solving the smaller (negative) side for the coverage budget
    # 6 * 1.15 * sigma reproduces the configured step exactly.
    cfg = DacConfig()
    for step, drive, budget in (
        (cfg.delay_step, cfg.delay_drive, 6 * 1.15 * cfg.delay_sigma),
        (cfg.duty_step, cfg.duty_drive, 6 * 1.15 * cfg.duty_sigma),
    ):
        short_reach = drive * 3 * step / (1 + 3 * step)
        long_reach = drive * 3 * step / (1 - 3 * step)
        assert math.isclose(short_reach, budget, rel_tol=1e-12)
        assert long_reach > budget


def test_timing_variance_split():
    cfg = DacConfig()
    assert math.isclose(
        cfg.delay_drive, math.sqrt(0.25) * 1.3e-12 * math.sqrt(6) / 0.01,
        rel_tol=1e-12,
    )
    assert math.isclose(
        cfg.delay_extrinsic_sigma, math.sqrt(0.75) * 1.3e-12, rel_tol=1e-12
    )
    assert math.isclose(cfg.duty_network_sigma, 1.8e-12 / math.sqrt(2), rel_tol=1e-12)
    # intrinsic + extrinsic variance recombine to the stage budget
    intrinsic = cfg.delay_drive * 0.01 / math.sqrt(6)
    assert math.isclose(
        math.hypot(intrinsic, cfg.delay_extrinsic_sigma), 1.3e-12, rel_tol=1e-12
    )


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def test_sample_structure_and_initial_selections():
    sample = sample_dac(DacConfig(), sample_substream(5, 0))
    assert len(sample.cells) == 63
    assert len(sample.lsb_bit_currents) == 8
    assert sample.reference_current > 0
    for cell in sample.cells:
        assert cell.selection == BALANCED_12_6
        assert cell.duty_fixed.selection == BALANCED_12_6
        assert cell.current() > 0


def test_sample_replays_identically():
    a = sample_dac(DacConfig(), sample_substream(5, 1))
    b = sample_dac(DacConfig(), sample_substream(5, 1))
    assert np.array_equal(ucc_currents(a), ucc_currents(b))
    assert a.lsb_bit_currents == b.lsb_bit_currents
    assert a.reference_current == b.reference_current


def test_empirical_ucc_sigma_matches_model():
    cfg = DacConfig()
    currents = np.concatenate(
        [ucc_currents(sample_dac(cfg, sample_substream(21, i))) for i in range(160)]
    )
    sigma_hat = currents.std()
    se = cfg.ucc_sigma / math.sqrt(2 * currents.size)
    assert abs(sigma_hat - cfg.ucc_sigma) < 4 * se
    assert abs(currents.mean() - 312e-6) < 4 * cfg.ucc_sigma / math.sqrt(currents.size)


def test_lsb_bank_weights():
    cfg = DacConfig()
    sample = sample_dac(cfg, sample_substream(5, 2))
    for b, bit_current in enumerate(sample.lsb_bit_currents):
        nominal = 2**b * cfg.lsb_unit_nominal
        tolerance = 6 * math.sqrt(2**b) * cfg.lsb_unit_sigma
        assert abs(bit_current - nominal) < tolerance


def test_sample_rejects_wrong_shapes():
    sample = sample_dac(DacConfig(), sample_substream(5, 3))
    with pytest.raises(ConfigError):
        DacSample(sample.config, sample.cells[:-1], sample.lsb_bit_currents,
                  sample.reference_current)
    with pytest.raises(ConfigError):
        DacSample(sample.config, sample.cells, sample.lsb_bit_currents[:-1],
                  sample.reference_current)


# ---------------------------------------------------------------------------
# zero-variance converter
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def ideal_sample():
    return sample_dac(zero_variance_config(), sample_substream(1, 0))


def test_ideal_cells_and_reference(ideal_sample):
    assert np.allclose(ucc_currents(ideal_sample), 312e-6, rtol=1e-12)
    assert ideal_sample.reference_current == 312e-6  # fsum makes this exact


def test_ideal_outputs(ideal_sample):
    assert dac_output(ideal_sample, 0) == 0.0
    assert dac_output(ideal_sample, 256) == ideal_sample.cells[0].current()
    unit = 312e-6 / 256
    assert math.isclose(dac_output(ideal_sample, 255), 255 * unit, rel_tol=1e-12)
    assert math.isclose(dac_output(ideal_sample, 16383), 16383 * unit, rel_tol=1e-12)


def test_ideal_linearity_is_flat(ideal_sample):
    report = linearity(ideal_sample)
    assert report.inl_max < 1e-9
    assert report.dnl_max < 1e-9


def test_ideal_amplitude_calibration_is_a_fixed_point(ideal_sample):
    pre = amplitude_residuals(ideal_sample)
    post = amplitude_residuals(calibrate_amplitude_eses(ideal_sample))
    assert np.all(np.abs(post) <= np.abs(pre) + 1e-18)
    assert np.max(np.abs(post)) < 1e-15


def test_ideal_timing_is_exact_and_calibration_a_noop(ideal_sample):
    assert np.all(delay_errors(ideal_sample) == 0.0)
    assert np.all(duty_errors(ideal_sample) == 0.0)
    calibrated = calibrate_timing(ideal_sample)
    for before, after in zip(ideal_sample.cells, calibrated.cells):
        assert after.delay.selection == before.delay.selection
        assert after.duty_tuned.selection == before.duty_tuned.selection


# ---------------------------------------------------------------------------
# transfer curve and linearity
# ---------------------------------------------------------------------------

PROBE_CODES = (0, 1, 255, 256, 257, 4095, 4096, 8191, 8192, 16382, 16383)


def test_transfer_curve_matches_resummation_oracle():
    rng = np.random.default_rng(33)
    for i in range(3):
        sample = sample_dac(DacConfig(), sample_substream(33, i))
        curve = transfer_curve(sample)
        assert curve.shape == (16384,)
        codes = list(PROBE_CODES) + rng.integers(0, 16384, size=40).tolist()
        for code in codes:
            expected = oracle_output(sample, int(code))
            assert math.isclose(curve[code], expected, rel_tol=1e-12, abs_tol=1e-18)
            assert math.isclose(
                dac_output(sample, int(code)), expected, rel_tol=1e-12, abs_tol=1e-18
            )


def test_dac_output_validates_codes():
    sample = sample_dac(DacConfig(), sample_substream(5, 4))
    with pytest.raises(ConfigError):
        dac_output(sample, -1)
    with pytest.raises(ConfigError):
        dac_output(sample, 16384)
    with pytest.raises(ConfigError):
        dac_output(sample, 3.5)
    assert dac_output(sample, np.int64(5)) == dac_output(sample, 5)


def test_linearity_matches_definition_oracle():
    rng = np.random.default_rng(7)
    curve = np.cumsum(rng.uniform(0.5, 1.5, size=500))
    report = linearity_from_curve(curve)
    inl, dnl = oracle_linearity(curve)
    assert np.allclose(report.inl, inl, atol=1e-9)
    assert np.allclose(report.dnl, dnl, atol=1e-9)
    assert report.inl_max == pytest.approx(np.max(np.abs(inl)))
    assert report.dnl_max == pytest.approx(np.max(np.abs(dnl)))


def test_endpoint_identities_on_sampled_converters():
    for i in range(4):
        report = linearity(sample_dac(DacConfig(), sample_substream(11, i)))
        assert report.inl[0] == 0.0
        assert abs(report.inl[-1]) < 1e-9
        assert report.dnl[0] == 0.0
        assert abs(report.dnl.sum()) < 1e-9


def test_monotonicity_iff_dnl_above_minus_one():
    rng = np.random.default_rng(17)
    monotone = np.cumsum(rng.uniform(0.5, 1.5, size=300))
    assert np.all(linearity_from_curve(monotone).dnl > -1.0)

    dipped = monotone.copy()
    dipped[150] = dipped[151] + 0.3  # one decreasing step
    report = linearity_from_curve(dipped)
    assert report.dnl.min() < -1.0
    assert not np.all(np.diff(dipped) >= 0)

    for i in range(4):
        sample = sample_dac(DacConfig(), sample_substream(13, i))
        curve = transfer_curve(sample)
        report = linearity_from_curve(curve)
        assert np.all(np.diff(curve) > 0) == bool(np.all(report.dnl > -1.0))


def test_linearity_rejects_degenerate_curves():
    with pytest.raises(DegenerateConfigurationError):
        linearity_from_curve(np.ones(10))
    with pytest.raises(DegenerateConfigurationError):
        linearity_from_curve(np.array([1.0, 2.0, 0.5]))
    with pytest.raises(ConfigError):
        linearity_from_curve(np.array([1.0]))
    with pytest.raises(ConfigError):
        linearity_from_curve(np.ones((4, 4)))


def test_single_cell_error_lands_at_its_switch_in_code(ideal_sample):
    cfg = ideal_sample.config
    unit = cfg.lsb_unit_nominal
    error = 6.3 * unit
    target = 17
    cell = ideal_sample.cells[target]
    bumped = cell.amplitude.realized.copy()
    for i in cell.selection.indices:
        bumped[i] += error / cell.selection.k
    cells = list(ideal_sample.cells)
    cells[target] = dataclasses.replace(
        cell, amplitude=ElementSet(cell.amplitude.nominal, bumped)
    )
    sample = dataclasses.replace(ideal_sample, cells=tuple(cells))

    report = linearity(sample)
    switch_code = (target + 1) * 256
    assert int(np.argmax(np.abs(report.dnl))) == switch_code
    # endpoint fit inflates the unit by (16383 + 6.3) / 16383
    expected_dnl = 7.3 * 16383 / (16383 + 6.3) - 1.0
    assert report.dnl[switch_code] == pytest.approx(expected_dnl, rel=1e-9)

    inl, dnl = oracle_linearity(transfer_curve(sample))
    assert np.allclose(report.inl, inl, atol=1e-9)
    assert report.inl_max == pytest.approx(np.max(np.abs(inl)), rel=1e-9)


# ---------------------------------------------------------------------------
# amplitude calibration
# ---------------------------------------------------------------------------


def test_calibration_never_worsens_any_residual():
    for i in range(6):
        sample = sample_dac(DacConfig(), sample_substream(41, i))
        pre = np.abs(amplitude_residuals(sample))
        post = np.abs(amplitude_residuals(calibrate_amplitude_eses(sample)))
        assert np.all(post <= pre + 1e-18)


def test_calibration_improves_linearity():
    pre_maxima, post_maxima = [], []
    for i in range(20):
        sample = sample_dac(DacConfig(), sample_substream(43, i))
        pre_maxima.append(linearity(sample).inl_max)
        post_maxima.append(linearity(calibrate_amplitude_eses(sample)).inl_max)
    pre_maxima, post_maxima = np.array(pre_maxima), np.array(post_maxima)
    assert np.all(post_maxima < pre_maxima)
    assert np.median(post_maxima) < 0.6
    assert post_maxima.max() < 1.2


def test_calibration_touches_only_selections():
    sample = sample_dac(DacConfig(), sample_substream(41, 7))
    calibrated = calibrate_amplitude_eses(sample)
    assert calibrated.lsb_bit_currents == sample.lsb_bit_currents
    assert calibrated.reference_current == sample.reference_current
    assert np.array_equal(delay_errors(calibrated), delay_errors(sample))
    for before, after in zip(sample.cells, calibrated.cells):
        assert after.amplitude is before.amplitude
        assert after.selection.k == 6


def test_uniform_comparison_config_keeps_center():
    cfg = DacConfig()
    uniform = uniform_comparison_config(cfg)
    assert isinstance(uniform.ucc_sub_scheme, Uniform)
    assert math.isclose(uniform.ucc_sub_scheme.width, 52e-6, rel_tol=1e-12)
    assert uniform.ucc_nominal == cfg.ucc_nominal
    assert uniform.sub_sigma == cfg.sub_sigma


def test_graded_sizing_beats_uniform_sizing():
    cfg = DacConfig()
    uniform = uniform_comparison_config(cfg)
    graded_rms, uniform_rms = [], []
    for i in range(30):
        graded_post = calibrate_amplitude_eses(
            sample_dac(cfg, sample_substream(47, i))
        )
        uniform_post = calibrate_amplitude_ses_comparison(
            sample_dac(uniform, sample_substream(47, i))
        )
        graded_rms.append(np.sqrt(np.mean(amplitude_residuals(graded_post) ** 2)))
        uniform_rms.append(np.sqrt(np.mean(amplitude_residuals(uniform_post) ** 2)))
    assert np.mean(uniform_rms) > 2.0 * np.mean(graded_rms)


# ---------------------------------------------------------------------------
# timing calibration
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def timing_population():
    cfg = DacConfig()
    samples = [sample_dac(cfg, sample_substream(53, i)) for i in range(60)]
    calibrated = [calibrate_timing(s) for s in samples]
    return samples, calibrated


def test_uncalibrated_timing_sigmas_match_budgets(timing_population):
    samples, _ = timing_population
    delays = np.concatenate([delay_errors(s) for s in samples])
    duties = np.concatenate([duty_errors(s) for s in samples])
    assert abs(delays.std() - 1.3e-12) < 0.07e-12
    assert abs(duties.std() - 1.8e-12) < 0.10e-12
    assert abs(delays.mean()) < 0.1e-12
    assert abs(duties.mean()) < 0.1e-12


def test_calibrated_timing_residuals(timing_population):
    _, calibrated = timing_population
    delays = np.concatenate([delay_errors(s) for s in calibrated])
    duties = np.concatenate([duty_errors(s) for s in calibrated])
    assert np.sqrt(np.mean(delays**2)) < 0.02e-12
    assert np.sqrt(np.mean(duties**2)) < 0.025e-12


def test_timing_calibration_leaves_fixed_buffer_alone(timing_population):
    samples, calibrated = timing_population
    changed = 0
    for before, after in zip(samples[:10], calibrated[:10]):
        for cell_pre, cell_post in zip(before.cells, after.cells):
            assert cell_post.duty_fixed.selection == BALANCED_12_6
            assert cell_post.amplitude is cell_pre.amplitude
            changed += cell_post.delay.selection != cell_pre.delay.selection
    assert changed > 0


# ---------------------------------------------------------------------------
# self-healing
# ---------------------------------------------------------------------------


def test_selfheal_config_defaults_and_derived_values():
    cfg = SelfHealConfig()
    assert cfg.n == 16 and cfg.k == 8
    assert cfg.n_ucc == 63
    assert math.isclose(cfg.ucc_nominal, 156.24e-6, rel_tol=1e-12)
    assert math.isclose(cfg.sub_sigma, 0.53e-6 / math.sqrt(8), rel_tol=1e-12)
    assert math.isclose(cfg.i_tiny, 0.053e-6, rel_tol=1e-12)
    assert math.isclose(cfg.lsb_unit_nominal, 156.24e-6 / 256, rel_tol=1e-12)
    assert cfg.cell_trial_limit == 200
    assert cfg.toplevel_trial_limit == 20
    assert cfg.backup_ucc_count == 4


def test_selfheal_config_validation():
    with pytest.raises(ConfigError):
        SelfHealConfig(k=17)
    with pytest.raises(ConfigError):
        SelfHealConfig(i_tiny=0.0)
    with pytest.raises(ConfigError):
        SelfHealConfig(bias_step=-0.001)
    with pytest.raises(ConfigError):
        SelfHealConfig(bias_step=0.2)  # nominals would cross zero
    with pytest.raises(ConfigError):
        SelfHealConfig(cell_trial_limit=0)
    with pytest.raises(ConfigError):
        SelfHealConfig(toplevel_trial_limit=0)
    with pytest.raises(ConfigError):
        SelfHealConfig(backup_ucc_count=-1)


def test_selfheal_sample_structure():
    cfg = SelfHealConfig()
    sample = sample_selfheal(cfg, sample_substream(61, 0))
    assert len(sample.cells) == 63
    assert len(sample.backups) == 4
    assert sample.bias_elements.n == 16
    assert abs(sample.reference_current - 156.24e-6) < 6 * cfg.ucc_sigma


def test_zero_variance_heal_hits_every_first_draw():
    cfg = SelfHealConfig(
        ucc_sigma=0.0, bias_rel_sigma=0.0, bias_step=0.0, i_tiny=1e-9
    )
    sample = sample_selfheal(cfg, sample_substream(61, 1))
    result = self_heal_ses(sample, rng=5)
    assert result.healed
    assert result.trace["toplevel_restarts"] == 0
    assert result.scale == 1.0
    # the nominal sum sits exactly on the closed lower window edge
    assert all(current == sample.reference_current for current in result.cell_currents)
    for cell_log in result.trace["attempts"][0]["cells"]:
        assert cell_log["trials"] == 1
        assert cell_log["backups_used"] == []


def test_heal_result_satisfies_the_window_and_accounting():
    cfg = SelfHealConfig()
    for i in range(5):
        sample = sample_selfheal(cfg, sample_substream(67, i))
        result = self_heal_ses(sample, rng=100 + i)
        assert result.healed
        low = sample.reference_current
        high = low + cfg.i_tiny
        used_backups = [s - 63 for s in result.sources if s >= 63]
        assert len(used_backups) == len(set(used_backups))  # consumed once
        for ci in range(63):
            source = result.sources[ci]
            elements = (
                sample.cells[source] if source < 63 else sample.backups[source - 63]
            )
            selection = result.selections[ci]
            recomputed = (
                float(elements.realized[list(selection.indices)].sum()) * result.scale
            )
            assert math.isclose(
                recomputed, result.cell_currents[ci], rel_tol=1e-12
            )
            assert low <= result.cell_currents[ci] <= high


def test_heal_replays_bit_identically():
    sample = sample_selfheal(SelfHealConfig(), sample_substream(67, 9))
    a = self_heal_ses(sample, rng=4242)
    b = self_heal_ses(sample, rng=4242)
    assert a.trace == b.trace
    assert a.selections == b.selections
    assert a.cell_currents == b.cell_currents
    assert a.trace["seed"] == 4242
    other = self_heal_ses(sample, rng=4243)
    assert other.trace != a.trace


def test_heal_trace_is_json_ready():
    sample = sample_selfheal(SelfHealConfig(), sample_substream(67, 10))
    result = self_heal_ses(sample, rng=8)
    trace = json.loads(json.dumps(result.trace))
    assert trace["outcome"] == "healed"
    assert len(trace["attempts"]) == trace["toplevel_restarts"] + 1
    assert trace["attempts"][-1]["completed"] is True
    for cell_log in trace["attempts"][-1]["cells"]:
        assert set(cell_log) == {"cell", "trials", "backups_used", "healed"}


def test_heal_success_rate_and_linearity():
    cfg = SelfHealConfig()
    healed = 0
    inl_maxima = []
    for i in range(250):
        sample = sample_selfheal(cfg, sample_substream(71, i))
        result = self_heal_ses(sample, rng=500 + i)
        healed += result.healed
        if result.healed and len(inl_maxima) < 60:
            inl_maxima.append(healed_linearity(sample, result).inl_max)
    assert healed / 250 >= 0.97
    assert np.median(inl_maxima) <= 1.0


def test_starved_heal_fails_honestly():
    cfg = SelfHealConfig(cell_trial_limit=1, toplevel_trial_limit=2, i_tiny=1e-13)
    sample = sample_selfheal(cfg, sample_substream(61, 2))
    result = self_heal_ses(sample, rng=3)
    assert not result.healed
    assert result.selections is None
    assert result.sources is None
    assert result.cell_currents is None
    assert result.trace["outcome"] == "failed"
    assert len(result.trace["attempts"]) == 2
    assert not result.trace["attempts"][-1]["completed"]
    with pytest.raises(ConfigError):
        healed_linearity(sample, result)


# ---------------------------------------------------------------------------
# error sensing
# ---------------------------------------------------------------------------

F_MEAS = 400e6
PERIOD = 1.0 / F_MEAS


def test_sense_pure_amplitude_reads_the_difference_times_high_width():
    # equal timing on both cells leaves the modulation perfectly aligned, so
    # the reading is exactly gain * dA * (0.5 + f*duty) — the high-phase
    # width — which is gain * dA / 2 for nominal 50% squares
    a = SensedCell(1.05e-3)
    ref = SensedCell(0.95e-3)
    for gain in (1.0, 0.5, 3.0):
        cfg = SensingConfig(F_MEAS, gain)
        reading = sense_error(a, ref, "amplitude", cfg)
        assert reading == pytest.approx(gain * 0.10e-3 / 2, rel=1e-12)
    assert sense_error(ref, a, "amplitude", SensingConfig(F_MEAS)) == pytest.approx(
        -0.10e-3 / 2, rel=1e-12
    )

    common = dict(delay=0.3e-12, duty=-0.2e-12)
    skewed = sense_error(
        SensedCell(1.05e-3, **common), SensedCell(0.95e-3, **common),
        "amplitude", SensingConfig(F_MEAS),
    )
    high_width = 0.5 + F_MEAS * common["duty"]
    assert skewed == pytest.approx(0.10e-3 * high_width, rel=1e-12)


def test_sense_pure_delay_reads_two_f_a_dd():
    amplitude = 1e-3
    for delta in (PERIOD / 1000, -PERIOD / 2000, PERIOD / 300):
        a = SensedCell(amplitude, delay=0.8e-12 + delta / 2, duty=0.4e-12)
        ref = SensedCell(amplitude, delay=0.8e-12 - delta / 2, duty=0.4e-12)
        reading = sense_error(a, ref, "delay", SensingConfig(F_MEAS))
        assert reading == pytest.approx(2 * F_MEAS * amplitude * delta, rel=1e-12)


def test_sense_pure_duty_reads_f_a_du():
    amplitude = 1e-3
    for delta in (PERIOD / 1000, -PERIOD / 1500, PERIOD / 400):
        a = SensedCell(amplitude, delay=0.5e-12, duty=delta / 2)
        ref = SensedCell(amplitude, delay=0.5e-12, duty=-delta / 2)
        reading = sense_error(a, ref, "duty", SensingConfig(F_MEAS))
        assert reading == pytest.approx(F_MEAS * amplitude * delta, rel=1e-12)


def test_sense_identical_cells_read_exactly_zero():
    cell = SensedCell(1.2e-3, delay=0.6e-12, duty=-0.3e-12)
    twin = SensedCell(1.2e-3, delay=0.6e-12, duty=-0.3e-12)
    for mode in SENSE_MODES:
        assert sense_error(cell, twin, mode, SensingConfig(F_MEAS)) == 0.0


def test_sense_orthogonality():
    # each pure error must leak < 1% of its matching-mode reading into the
    # other two modes; the alignment argument makes the leak essentially zero
    amplitude = 1e-3
    cfg = SensingConfig(F_MEAS)
    pure = {
        "amplitude": (SensedCell(1.01e-3), SensedCell(0.99e-3)),
        "delay": (
            SensedCell(amplitude, delay=PERIOD / 2000),
            SensedCell(amplitude, delay=-PERIOD / 2000),
        ),
        "duty": (
            SensedCell(amplitude, duty=PERIOD / 2000),
            SensedCell(amplitude, duty=-PERIOD / 2000),
        ),
    }
    for source_mode, (a, ref) in pure.items():
        matching = abs(sense_error(a, ref, source_mode, cfg))
        assert matching > 0
        for other_mode in SENSE_MODES:
            if other_mode == source_mode:
                continue
            leak = abs(sense_error(a, ref, other_mode, cfg))
            assert leak <= 0.01 * matching
            assert leak < 1e-12 * matching + 1e-18


def test_sense_linearity_over_ten_point_sweeps():
    cfg = SensingConfig(F_MEAS)
    sweep = np.linspace(-PERIOD / 1000, PERIOD / 1000, 10)
    for mode in ("delay", "duty"):
        readings = []
        for delta in sweep:
            kwargs = {mode: float(delta)}
            a = SensedCell(1e-3, **kwargs)
            readings.append(sense_error(a, SensedCell(1e-3), mode, cfg))
        slope, intercept = np.polyfit(sweep, readings, 1)
        predicted = slope * sweep + intercept
        ss_res = np.sum((np.array(readings) - predicted) ** 2)
        ss_tot = np.sum((readings - np.mean(readings)) ** 2)
        assert 1.0 - ss_res / ss_tot > 0.999999


def test_sense_matches_grid_oracle_on_mixed_errors():
    rng = np.random.default_rng(73)
    cfg = SensingConfig(F_MEAS)
    for _ in range(4):
        a = SensedCell(
            float(rng.uniform(0.8e-3, 1.2e-3)),
            delay=float(rng.uniform(-1, 1) * PERIOD / 500),
            duty=float(rng.uniform(-1, 1) * PERIOD / 500),
        )
        ref = SensedCell(
            float(rng.uniform(0.8e-3, 1.2e-3)),
            delay=float(rng.uniform(-1, 1) * PERIOD / 500),
            duty=float(rng.uniform(-1, 1) * PERIOD / 500),
        )
        for mode in SENSE_MODES:
            exact = sense_error(a, ref, mode, cfg)
            approx = oracle_sense(a, ref, mode, cfg)
            assert exact == pytest.approx(approx, abs=3e-8)


def test_sense_validation():
    with pytest.raises(ConfigError):
        SensedCell(-1e-3)
    with pytest.raises(ConfigError):
        SensedCell(1e-3, delay=math.inf)
    with pytest.raises(ConfigError):
        SensingConfig(f_meas=0.0)
    with pytest.raises(ConfigError):
        sense_error(SensedCell(1e-3), SensedCell(1e-3), "phase")
    with pytest.raises(ConfigError):
        # timing error too close to the modulation pulse width
        sense_error(
            SensedCell(1e-3, delay=0.2 * PERIOD), SensedCell(1e-3), "delay",
            SensingConfig(F_MEAS),
        )


# ---------------------------------------------------------------------------
# yield studies
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def eses_yield():
    return yield_study(DacConfig(), 100, "eses", master_seed=11, threads=1)


def test_yield_rows_and_columns(eses_yield):
    assert eses_yield.flow == "eses"
    assert eses_yield.columns == (
        "sample_id", "pre_inl_max", "post_inl_max", "pre_dnl_max", "post_dnl_max",
    )
    assert len(eses_yield.rows) == 100
    assert [row["sample_id"] for row in eses_yield.rows] == list(range(100))
    for row in eses_yield.rows[:5]:
        assert set(row) == set(eses_yield.columns)
        assert row["post_inl_max"] < row["pre_inl_max"]


def test_yield_percentiles_and_histograms(eses_yield):
    for column in eses_yield.columns[1:]:
        pct = eses_yield.percentiles[column]
        assert set(pct) == {"p50", "p95", "p99"}
        assert pct["p50"] <= pct["p95"] <= pct["p99"]
        counts, edges = eses_yield.histograms[column]
        assert counts.sum() == 100
        assert len(edges) == len(counts) + 1


def test_yield_is_thread_invariant(eses_yield):
    threaded = yield_study(DacConfig(), 100, "eses", master_seed=11, threads=4)
    assert threaded.rows == eses_yield.rows
    assert threaded.percentiles == eses_yield.percentiles


def test_yield_validation():
    with pytest.raises(ConfigError):
        yield_study(DacConfig(), 99, "eses")
    with pytest.raises(ConfigError):
        yield_study(DacConfig(), 100, "amplitude")
    with pytest.raises(ConfigError):
        yield_study(DacConfig(), 100, "eses", bins=0)
    with pytest.raises(ConfigError):
        yield_study(DacConfig(), 100, "self-heal")
    with pytest.raises(ConfigError):
        yield_study(SelfHealConfig(), 100, "eses")


def test_yield_selfheal_flow():
    result = yield_study(SelfHealConfig(), 100, "self-heal", master_seed=19)
    assert result.summary["heal_success_rate"] >= 0.9
    for row in result.rows:
        assert row["healed"] in (0.0, 1.0)
        assert (row["healed"] == 0.0) == math.isnan(row["post_inl_max"])
        if row["healed"]:
            assert row["post_inl_max"] < row["pre_inl_max"]


def test_yield_timing_flow():
    result = yield_study(DacConfig(), 100, "timing", master_seed=23)
    summary = result.summary
    assert set(summary) == {
        "pre_delay_sigma_pooled", "post_delay_sigma_pooled",
        "pre_duty_sigma_pooled", "post_duty_sigma_pooled",
    }
    assert summary["post_delay_sigma_pooled"] < summary["pre_delay_sigma_pooled"] / 10
    assert summary["post_duty_sigma_pooled"] < summary["pre_duty_sigma_pooled"] / 10
    assert abs(summary["pre_delay_sigma_pooled"] - 1.3e-12) < 0.1e-12
    assert abs(summary["pre_duty_sigma_pooled"] - 1.8e-12) < 0.15e-12


def test_yield_zero_variance_converter_is_perfect():
    result = yield_study(zero_variance_config(), 100, "eses", master_seed=29)
    for column in ("pre_inl_max", "post_inl_max"):
        assert result.percentiles[column]["p99"] < 1e-9
