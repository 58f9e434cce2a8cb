import pytest

from rtolab.config import PRESETS, ConfigError, RunConfig, load_config, parse_overrides, preset


def test_presets_build_problems():
    for name in PRESETS:
        cfg = preset(name)
        assert cfg.preset == name
        spec = cfg.problem_spec()
        assert max(spec.grid.shape) == cfg.resolution()


def test_desk_presets_are_small():
    assert preset("l-bracket-30").problem_spec().grid.shape == (30, 30)
    assert preset("heat-sink-32").problem_spec().grid.shape == (32, 32)
    assert preset("l-bracket-100").n_samples == 1000


def test_filter_radius_scales_with_resolution():
    assert preset("l-bracket-100").simp_config().filter_radius == pytest.approx(1.5)
    assert preset("l-bracket-30").simp_config().filter_radius == pytest.approx(1.5)
    assert RunConfig(n=200).simp_config().filter_radius == pytest.approx(3.0)


def test_file_roundtrip_with_preset(tmp_path):
    cfg = preset("heat-sink-32").updated({"lam": 2.0, "standardize": True})
    path = tmp_path / "run.cfg"
    cfg.save(path)
    assert load_config(path) == cfg
    (tmp_path / "small.cfg").write_text("preset = l-bracket-30\nn_samples = 12\n")
    small = load_config(tmp_path / "small.cfg")
    assert small.n == 30 and small.n_samples == 12


def test_overrides_and_coercion():
    cfg = load_config("l-bracket-30", parse_overrides(["lam=0", "extra_layers=true", "n=12"]))
    assert cfg.lam == 0.0 and isinstance(cfg.lam, float)
    assert cfg.extra_layers is True and cfg.n == 12
    assert cfg.robust_config().lam == 0.0


@pytest.mark.parametrize("bad", [{"nonsense": 1}, {"n": 2.5}, {"extra_layers": "maybe"}, {"n": None}])
def test_bad_values_rejected(bad):
    with pytest.raises(ConfigError):
        RunConfig().updated(bad)


def test_bad_sources_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config("no-such-preset")
    with pytest.raises(ConfigError):
        parse_overrides(["novalue"])
    (tmp_path / "dup.cfg").write_text("n = 1\nn = 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "dup.cfg")


def test_builders_carry_fields():
    cfg = RunConfig(eta=0.5, max_iters=7, n_restarts=2, vae_epochs=3, sur_lr=1e-3)
    dc = cfg.descent_config()
    assert (dc.eta, dc.max_iters, dc.n_restarts, dc.standardize) == (0.5, 7, 2, False)
    assert cfg.vae_train_config().epochs == 3
    assert cfg.surrogate_config().lr == 1e-3
    arch = cfg.vae_architecture((30, 30))
    assert arch.window == 3 and arch.latent_dim == 2
