import numpy as np
import pytest

from condbeta.panel_store import PanelError
from condbeta.realized_beta import (
    BetaKind,
    compute_beta_panel,
    realized_capm,
    realized_semibetas,
    reconstruct_from_semibetas,
)
from condbeta.synth import DgpConfig, generate


def test_flat_link_betas_near_one():
    syn = generate(DgpConfig(n_assets=200, n_months=24, beta_link=(), idio_vol=0.01, seed=5))
    assert np.all(syn.true_beta == 1.0)
    capm = compute_beta_panel(syn.returns, kinds=[BetaKind.Capm], horizons=(1,)).get("Capm", 1)
    assert abs(np.nanmean(capm) - 1.0) < 0.05


def test_noiseless_returns_identify_beta():
    syn = generate(DgpConfig(n_assets=15, n_months=12, idio_vol=0.0, seed=2))
    capm = compute_beta_panel(syn.returns, kinds=[BetaKind.Capm], horizons=(1,)).get("Capm", 1)
    assert np.max(np.abs(capm - syn.true_beta)) <= 1e-10
    # month by month through the scalar estimator as well
    rp = syn.returns
    mi = rp.month_index
    for t, m in enumerate(syn.months[:3]):
        sel = mi == m
        assert realized_capm(rp.returns[sel, 0], rp.market_returns[sel]) == pytest.approx(syn.true_beta[t, 0],
                                                                                          abs=1e-10)


def test_seed_determinism():
    cfg = DgpConfig(n_assets=10, n_months=14, seed=42, missing_rate=0.1, late_entry_fraction=0.3)
    a, b = generate(cfg), generate(cfg)
    assert np.array_equal(a.returns.returns, b.returns.returns, equal_nan=True)
    assert np.array_equal(a.chars.values, b.chars.values, equal_nan=True)
    assert np.array_equal(a.meta.price, b.meta.price, equal_nan=True)
    c = generate(DgpConfig(n_assets=10, n_months=14, seed=43))
    assert not np.array_equal(a.true_beta, c.true_beta)


def test_signal_marginals_standardised():
    syn = generate(DgpConfig(n_assets=1000, n_months=3, seed=9))
    x = syn.chars.values[:, :, :3]
    assert np.all(np.abs(x.mean(axis=1)) < 0.05)
    assert np.all(np.abs(x.std(axis=1) - 1.0) < 0.05)


def test_true_beta_link_and_clipping():
    cfg = DgpConfig(n_assets=50, n_months=20, beta_link=(2.0,), noise_chars=0, beta_bounds=(-1.0, 4.0),
                    persistence=0.5, seed=4)
    syn = generate(cfg)
    assert syn.true_beta.min() >= -1.0 and syn.true_beta.max() <= 4.0
    # beta of month t is driven by the characteristic published at t - 1
    x = syn.chars.values[:-1, :, 0]
    expect = np.clip(1.0 + 2.0 * x, -1.0, 4.0)
    assert np.allclose(syn.true_beta[1:], expect, atol=1e-12)


def test_semibeta_identity_on_generated_data():
    syn = generate(DgpConfig(n_assets=5, n_months=4, idio_vol=(0.005, 0.03), seed=1))
    rp = syn.returns
    sel = rp.month_index == syn.months[2]
    for j in range(5):
        r_i, r_m = rp.returns[sel, j], rp.market_returns[sel]
        assert reconstruct_from_semibetas(*realized_semibetas(r_i, r_m)) == pytest.approx(realized_capm(r_i, r_m),
                                                                                        abs=1e-12)


def test_idio_vol_range_per_asset():
    syn = generate(DgpConfig(n_assets=40, n_months=6, idio_vol=(0.01, 0.03), beta_link=(), seed=3))
    resid = syn.returns.returns - syn.returns.market_returns[:, None]
    vols = resid.std(axis=0)
    assert vols.min() > 0.008 and vols.max() < 0.033
    assert vols.max() - vols.min() > 0.01


def test_degenerate_config_rejected():
    with pytest.raises(PanelError):
        DgpConfig(n_assets=0)
    with pytest.raises(PanelError):
        DgpConfig(n_months=0)
    with pytest.raises(PanelError):
        DgpConfig(persistence=1.0)
