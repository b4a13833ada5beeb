"""Calibration-free adaptive conformal prediction.

Two pieces: a block-permutation two-sample KS gate that decides whether live
scores are still exchangeable with the calibration set, and a projected
multiplicative update on a scale lambda driven by miscoverage feedback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GateConfig:
    warmup_W0: int = 50
    block_len_B: int = 5
    n_permutations_N: int = 199
    alpha_gate: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if self.block_len_B < 1:
            raise ValueError("block_len_B must be >= 1")
        if self.warmup_W0 < 2 * self.block_len_B:
            raise ValueError("warmup_W0 must be >= 2 * block_len_B")
        if self.n_permutations_N < 19:
            raise ValueError("n_permutations_N must be >= 19")
        if not (0.0 < self.alpha_gate < 1.0):
            raise ValueError("alpha_gate must lie in (0, 1)")


@dataclass(frozen=True)
class GateResult:
    status: str  # insufficient | accept | reject
    ks_distance_D: float | None
    p_value: float | None
    rejected: bool


def ks_distance(sample_a, sample_b) -> float:
    """Exact two-sample KS statistic over the merged sorted support."""
    a = np.sort(np.asarray(sample_a, dtype=float))
    b = np.sort(np.asarray(sample_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    support = np.concatenate([a, b])
    fa = np.searchsorted(a, support, side="right") / a.size
    fb = np.searchsorted(b, support, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def exchangeability_gate(cal_scores, new_scores, cfg: GateConfig) -> GateResult:
    """Block-permutation p-value for the hypothesis that cal and new scores
    share a distribution; p = (1 + #{D* >= D}) / (N + 1)."""
    cal = np.asarray(cal_scores, dtype=float)
    new = np.asarray(new_scores, dtype=float)
    if new.size < cfg.warmup_W0:
        return GateResult("insufficient", None, None, rejected=False)

    d_obs = ks_distance(cal, new)
    pooled = np.concatenate([cal, new])
    n_cal = cal.size
    n_blocks = math.ceil(pooled.size / cfg.block_len_B)
    blocks = [
        pooled[i * cfg.block_len_B : (i + 1) * cfg.block_len_B] for i in range(n_blocks)
    ]
    rng = np.random.default_rng(cfg.rng_seed)
    n_ge = 0
    for _ in range(cfg.n_permutations_N):
        order = rng.permutation(n_blocks)
        z = np.concatenate([blocks[i] for i in order])
        d_perm = ks_distance(z[:n_cal], z[n_cal:])
        if d_perm >= d_obs - 1e-15:
            n_ge += 1
    p = (1 + n_ge) / (cfg.n_permutations_N + 1)
    rejected = p < cfg.alpha_gate
    return GateResult("reject" if rejected else "accept", d_obs, p, rejected)


@dataclass
class AcpState:
    """Online scale state; updates are strictly sequential (single owner)."""

    lam: float = 1.0
    kappa: float = 0.05
    lambda_min: float = 0.1
    lambda_max: float = 10.0
    alpha: float = 0.1
    history: list[tuple[int, int, float]] = field(default_factory=list)  # (t, e_t, lambda_after)

    def __post_init__(self):
        if not (0.0 < self.lambda_min <= self.lam <= self.lambda_max):
            raise ValueError("lambda must lie in [lambda_min, lambda_max], lambda_min > 0")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")


def acp_threshold(state: AcpState, d_min: float) -> float:
    """Acceptance threshold H(lambda) = lambda * d_min the live score is tested against."""
    if d_min < 0:
        raise ValueError("d_min must be >= 0")
    return state.lam * d_min


def acp_update(state: AcpState, score_R_t: float, d_min: float) -> tuple[AcpState, int]:
    """One feedback step: miscoverage indicator with the current lambda, then
    the projected multiplicative update. Mutates and returns the state."""
    e_t = 1 if score_R_t > acp_threshold(state, d_min) else 0
    lam_next = state.lam * math.exp(state.kappa * (e_t - state.alpha))
    state.lam = min(max(lam_next, state.lambda_min), state.lambda_max)
    state.history.append((len(state.history), e_t, state.lam))
    return state, e_t


def acp_region_radius(state: AcpState, base_quantile: float) -> float:
    """Planning radius bridge: the offline quantile inflated by the online scale."""
    if base_quantile < 0:
        raise ValueError("base_quantile must be >= 0")
    return state.lam * base_quantile


def mean_miscoverage(state: AcpState) -> float | None:
    if not state.history:
        return None
    return float(np.mean([e for _, e, _ in state.history]))


@dataclass
class AcpController:
    """Deployment wrapper: collect live scores, run the gate once warm-up is
    reached, and drive ACP updates only after a rejection.

    The gate is one-shot by default; retest_every > 0 re-arms it periodically
    while it keeps accepting.
    """

    cal_scores: np.ndarray
    gate_cfg: GateConfig
    acp_state: AcpState
    retest_every: int = 0
    enabled: bool = True

    new_scores: list[float] = field(default_factory=list)
    gate_result: GateResult | None = None
    acp_active: bool = False
    _since_test: int = 0

    def observe(self, score: float, d_min: float) -> tuple[float, int | None]:
        """Feed one (score, d_min) observation; returns (lambda, e_t or None)."""
        self.new_scores.append(float(score))
        if not self.enabled:
            return self.acp_state.lam, None
        if self.acp_active:
            _, e_t = acp_update(self.acp_state, score, d_min)
            return self.acp_state.lam, e_t
        self._since_test += 1
        warmed = len(self.new_scores) >= self.gate_cfg.warmup_W0
        should_test = self.gate_result is None or (
            self.retest_every > 0
            and not self.gate_result.rejected
            and self._since_test >= self.retest_every
        )
        if warmed and should_test:
            self.gate_result = exchangeability_gate(
                self.cal_scores, np.asarray(self.new_scores), self.gate_cfg
            )
            self._since_test = 0
            if self.gate_result.rejected:
                self.acp_active = True
        return self.acp_state.lam, None

    def radius(self, base_quantile: float) -> float:
        return acp_region_radius(self.acp_state, base_quantile) if self.acp_active else base_quantile
