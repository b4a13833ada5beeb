"""Online adaptation tests: KS gate against scipy, lambda update closed forms."""

import math

import numpy as np
import pytest

from cpnav.acp import (
    AcpController,
    AcpState,
    GateConfig,
    acp_region_radius,
    acp_threshold,
    acp_update,
    exchangeability_gate,
    ks_distance,
    mean_miscoverage,
)

scipy_stats = pytest.importorskip("scipy.stats")


def test_ks_distance_matches_scipy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.normal(0, 1, size=int(rng.integers(5, 80)))
        b = rng.normal(0.3, 1.4, size=int(rng.integers(5, 80)))
        want = scipy_stats.ks_2samp(a, b, method="asymp").statistic
        assert abs(ks_distance(a, b) - want) < 1e-12


def test_ks_distance_identical_samples_is_zero():
    a = np.array([1.0, 2.0, 3.0])
    assert ks_distance(a, a) == 0.0


def test_gate_insufficient_before_warmup():
    cfg = GateConfig(warmup_W0=10, block_len_B=2, n_permutations_N=49, alpha_gate=0.05)
    res = exchangeability_gate(np.arange(50.0), np.arange(5.0), cfg)
    assert res.status == "insufficient"
    assert not res.rejected


def test_gate_p_value_floor_and_rejection_on_disjoint_samples():
    cfg = GateConfig(warmup_W0=10, block_len_B=2, n_permutations_N=99, alpha_gate=0.05,
                     rng_seed=7)
    cal = np.linspace(0.0, 1.0, 60)
    new = np.linspace(10.0, 11.0, 10)  # disjoint support: D = 1, no permutation ties it
    res = exchangeability_gate(cal, new, cfg)
    assert res.ks_distance_D == 1.0
    assert abs(res.p_value - 1.0 / (99 + 1)) < 1e-12
    assert res.rejected


def test_gate_accepts_exchangeable_data_mostly():
    rng = np.random.default_rng(123)
    cfg = GateConfig(warmup_W0=20, block_len_B=4, n_permutations_N=99, alpha_gate=0.05)
    rejections = 0
    trials = 60
    for i in range(trials):
        cal = np.abs(rng.normal(0, 1, size=100))
        new = np.abs(rng.normal(0, 1, size=20))
        cfg_i = GateConfig(warmup_W0=20, block_len_B=4, n_permutations_N=99,
                           alpha_gate=0.05, rng_seed=i)
        if exchangeability_gate(cal, new, cfg_i).rejected:
            rejections += 1
    # level 0.05 with 3-sigma slack on 60 trials
    assert rejections / trials <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / trials)


def test_gate_deterministic_given_seed():
    cfg = GateConfig(warmup_W0=10, block_len_B=2, n_permutations_N=99, rng_seed=5)
    rng = np.random.default_rng(1)
    cal = np.abs(rng.normal(0, 1, size=50))
    new = np.abs(rng.normal(0, 2, size=12))
    r1 = exchangeability_gate(cal, new, cfg)
    r2 = exchangeability_gate(cal, new, cfg)
    assert r1.p_value == r2.p_value


def test_gate_config_invariants():
    with pytest.raises(ValueError):
        GateConfig(warmup_W0=3, block_len_B=2, n_permutations_N=99)
    with pytest.raises(ValueError):
        GateConfig(warmup_W0=10, block_len_B=2, n_permutations_N=5)


def test_acp_threshold_closed_form():
    st = AcpState(lam=1.5, kappa=0.1)
    assert acp_threshold(st, 2.0) == 3.0


def test_acp_update_closed_forms():
    # miscoverage: lambda multiplies by exp(kappa (1 - alpha))
    st = AcpState(lam=1.0, kappa=0.1, alpha=0.1, lambda_min=0.1, lambda_max=10.0)
    st, e = acp_update(st, score_R_t=5.0, d_min=1.0)
    assert e == 1
    assert abs(st.lam - math.exp(0.1 * 0.9)) < 1e-12
    # coverage: lambda decays by exp(-kappa alpha)
    st2 = AcpState(lam=1.0, kappa=0.1, alpha=0.1, lambda_min=0.1, lambda_max=10.0)
    st2, e2 = acp_update(st2, score_R_t=0.1, d_min=1.0)
    assert e2 == 0
    assert abs(st2.lam - math.exp(-0.1 * 0.1)) < 1e-12


def test_acp_update_projection_clips():
    st = AcpState(lam=9.99, kappa=2.0, alpha=0.05, lambda_min=0.5, lambda_max=10.0)
    st, _ = acp_update(st, score_R_t=100.0, d_min=1.0)
    assert st.lam == 10.0
    st2 = AcpState(lam=0.51, kappa=2.0, alpha=0.9, lambda_min=0.5, lambda_max=10.0)
    st2, _ = acp_update(st2, score_R_t=0.0, d_min=1.0)
    assert st2.lam == 0.5


def test_acp_long_run_miscoverage_tracks_alpha():
    # stationary scores: the time-average miscoverage lands in an O(kappa) band
    rng = np.random.default_rng(8)
    alpha, kappa, T = 0.1, 0.05, 5000
    st = AcpState(lam=1.0, kappa=kappa, alpha=alpha, lambda_min=1e-3, lambda_max=1e3)
    for _ in range(T):
        r = abs(rng.normal(0, 1.0))
        st, _ = acp_update(st, r, d_min=1.0)
    m = mean_miscoverage(st)
    assert abs(m - alpha) <= 0.03


def test_region_radius_scales_with_lambda():
    st = AcpState(lam=2.5, kappa=0.1)
    assert acp_region_radius(st, 0.4) == 1.0


def test_controller_gates_then_adapts():
    rng = np.random.default_rng(3)
    cal = np.abs(rng.normal(0, 0.2, size=60))
    cfg = GateConfig(warmup_W0=6, block_len_B=3, n_permutations_N=99, alpha_gate=0.05,
                     rng_seed=1)
    ctrl = AcpController(
        cal_scores=cal,
        gate_cfg=cfg,
        acp_state=AcpState(lam=1.0, kappa=0.5, lambda_min=1.0, lambda_max=5.0, alpha=0.05),
    )
    # before warmup the controller leaves lambda alone
    for k in range(5):
        lam, e = ctrl.observe(abs(rng.normal(0, 2.0)), d_min=1.0)
        assert lam == 1.0 and e is None
    # a severe shift should trip the gate at warmup and start updates
    lam, e = ctrl.observe(abs(rng.normal(0, 2.0)) + 3.0, d_min=0.5)
    assert ctrl.gate_result is not None and ctrl.gate_result.rejected
    assert e is None  # the gating observation itself is not an update step
    lam, e = ctrl.observe(abs(rng.normal(0, 2.0)) + 3.0, d_min=0.5)
    assert e is not None
    assert ctrl.radius(1.0) == ctrl.acp_state.lam


def test_controller_disabled_never_inflates():
    rng = np.random.default_rng(4)
    cfg = GateConfig(warmup_W0=6, block_len_B=3, n_permutations_N=99, rng_seed=1)
    ctrl = AcpController(
        cal_scores=np.abs(rng.normal(0, 0.2, size=60)),
        gate_cfg=cfg,
        acp_state=AcpState(lam=1.0, kappa=0.5, lambda_min=1.0, lambda_max=5.0),
        enabled=False,
    )
    for _ in range(20):
        lam, e = ctrl.observe(abs(rng.normal(0, 3.0)) + 2.0, d_min=0.5)
        assert lam == 1.0
    assert ctrl.radius(0.7) == 0.7
