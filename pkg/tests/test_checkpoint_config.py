import numpy as np
import pytest

from gcnext.autodiff import Tape
from gcnext.checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from gcnext.config import ConfigError, RunConfig, parse_config, parse_config_text
from gcnext.data import SyntheticConfig, gen_synthetic
from gcnext.model import build_model
from gcnext.training import train_loop
from gcnext.verify import toy_config


def test_empty_config_is_toy_preset():
    cfg = parse_config_text("")
    assert cfg == RunConfig()
    assert (cfg.joints, cfg.t_hist, cfg.t_fut, cfg.layers, cfg.batch_size, cfg.iterations) == (7, 10, 10, 8, 32, 5000)
    assert (cfg.lr_start, cfg.lr_drop_to, cfg.lr_drop_at) == (6e-4, 5e-6, 4400)


def test_config_examples(tmp_path):
    assert parse_config_text("layers = 48").layers == 48
    assert parse_config_text("options = st,sc,s,c").options == ("st", "sc", "s", "c")
    path = tmp_path / "run.cfg"
    path.write_text("# toy\nlayers = 2  # short\ntied = true\nclip_norm = 1.5\n")
    cfg = parse_config(path)
    assert cfg.layers == 2 and cfg.tied is True and cfg.clip_norm == 1.5


def test_config_round_trips_through_text():
    cfg = RunConfig(layers=3, options=("s", "t"), anneal=True, noise_std=2.5)
    assert parse_config_text(cfg.to_text()) == cfg


@pytest.mark.parametrize("text, line, key", [
    ("layers = 2\nwidth = 3", 2, "width"),
    ("layers = two", 1, "layers"),
    ("\n\noptions = st,zz", 3, "options"),
    ("batch_size = 0", None, "batch_size"),
    ("layers 3", 1, None),
])
def test_config_errors(text, line, key):
    with pytest.raises(ConfigError) as err:
        parse_config_text(text)
    if line is not None:
        assert err.value.line == line
    if key is not None:
        assert err.value.key == key
        assert key in str(err.value)


def _trained(tmp_path, refine=False):
    cfg = toy_config(iterations=3, eval_every=3, batch_size=4)
    syn = SyntheticConfig(joints=cfg.joints, t_hist=cfg.t_hist, t_fut=cfg.t_fut)
    model = build_model(cfg, np.random.default_rng(0), refine=refine)
    model, _ = train_loop(model, gen_synthetic(syn, 16), None, cfg)
    return model, gen_synthetic(syn, 8, start=99)


@pytest.mark.parametrize("refine", [False, True])
def test_checkpoint_round_trip_is_exact(tmp_path, refine):
    model, ds = _trained(tmp_path, refine)
    path = tmp_path / "m.ugck"
    save_checkpoint(model, path, model.optimizer)
    loaded, opt = load_checkpoint(path)
    assert loaded.mode == model.mode
    for name, p in model.named_parameters().items():
        assert np.array_equal(loaded.named_parameters()[name].value, p.value)
    assert opt.t == model.optimizer.t
    for name in model.optimizer.m:
        assert np.array_equal(opt.m[name], model.optimizer.m[name])
        assert np.array_equal(opt.v[name], model.optimizer.v[name])
    assert np.array_equal(loaded.predict(ds.history), model.predict(ds.history))
    save_checkpoint(loaded, tmp_path / "again.ugck", opt)
    assert (tmp_path / "again.ugck").read_bytes() == path.read_bytes()


def test_checkpoint_without_optimizer(tmp_path):
    model = build_model(toy_config(), np.random.default_rng(0))
    save_checkpoint(model, tmp_path / "m.ugck")
    loaded, opt = load_checkpoint(tmp_path / "m.ugck")
    assert opt is None
    x = np.random.default_rng(1).normal(size=(2,) + (4, 4, 3))
    assert np.array_equal(loaded.forward(Tape(), x, np.random.default_rng(0)).value,
                          model.forward(Tape(), x, np.random.default_rng(0)).value)


def test_checkpoint_corruption(tmp_path):
    model = build_model(toy_config(), np.random.default_rng(0))
    save_checkpoint(model, tmp_path / "m.ugck")
    raw = (tmp_path / "m.ugck").read_bytes()
    (tmp_path / "bad.ugck").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointFormatError) as err:
        load_checkpoint(tmp_path / "bad.ugck")
    assert err.value.offset == 0
    (tmp_path / "short.ugck").write_bytes(raw[:100])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "short.ugck")
