"""Small synthetic worlds shared by the pipeline-level tests."""

from condbeta.panel_store import preprocess_characteristics
from condbeta.pipeline import prepare_panel_data
from condbeta.realized_beta import compute_beta_panel
from condbeta.synth import DgpConfig, generate


def build_world(horizons=(1,), **overrides):
    kw = dict(n_assets=20, n_months=134, seed=3, idio_vol=0.01, noise_chars=2)
    kw.update(overrides)
    syn = generate(DgpConfig(**kw))
    betas = compute_beta_panel(syn.returns, horizons=horizons)
    data = prepare_panel_data(syn.returns, preprocess_characteristics(syn.chars), betas, horizons)
    return syn, betas, data
