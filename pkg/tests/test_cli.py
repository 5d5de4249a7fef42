import numpy as np
import pytest

from gcnext.cli import main
from gcnext.unigc import build_mask
from gcnext.verify import suite_equivalence, suite_mask_algebra

TOY = """\
t_hist = 4
t_fut = 2
joints = 4
layers = 2
hidden = 8
n_train = 32
n_val = 8
batch_size = 8
iterations = 4
eval_every = 2
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "toy.cfg"
    path.write_text(TOY)
    return path


def mpjpe_line(out):
    return [l for l in out.splitlines() if l.startswith("mpjpe ") or l.startswith("average")]


def flipped_st_mask(spec, cap=256):
    mask = build_mask(spec, cap)
    if spec.kind == "st":
        eye = np.eye(spec.dims[2], dtype=bool).reshape(1, 1, -1, 1, 1, spec.dims[2])
        mask = np.ones_like(mask) & ~eye
    return mask


def test_verify_exits_zero(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert "[PASS] factored-vs-dense" in out
    assert sum("tied" in l for l in out.splitlines()) >= 14


def test_mask_mutation_is_caught():
    assert suite_mask_algebra().passed
    assert not suite_mask_algebra(mask_fn=flipped_st_mask).passed
    assert not suite_equivalence(seeds=1, mask_fn=flipped_st_mask).passed


def test_gen_data_train_eval(tmp_path, config, capsys):
    data = tmp_path / "val.mseq"
    assert main(["gen-data", "--config", str(config), "--split", "val", "--out", str(data)]) == 0
    assert main(["eval", "--data", str(data), "--baseline", "zero-velocity"]) == 0
    baseline = capsys.readouterr().out
    assert "zero-velocity" in baseline and len(mpjpe_line(baseline)) == 2

    ckpt = tmp_path / "m.ugck"
    assert main(["train", "--config", str(config), "--out", str(ckpt)]) == 0
    metrics = (tmp_path / "m.ugck.metrics.csv").read_text().splitlines()
    assert metrics[0] == "iteration,train_loss,val_mpjpe_f1,val_mpjpe_f2,val_mpjpe_avg"
    assert [r.split(",")[0] for r in metrics[1:]] == ["2", "4"]
    capsys.readouterr()
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(data)]) == 0
    out = capsys.readouterr().out
    assert "policy" in out and out.count("layer ") == 2


def test_train_is_deterministic(tmp_path, config):
    for name in ("a", "b"):
        assert main(["train", "--config", str(config), "--seed", "3", "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a.metrics.csv").read_bytes()
    assert a == (tmp_path / "b.metrics.csv").read_bytes()
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_refine_then_eval_matches_base(tmp_path, config, capsys):
    static_cfg = tmp_path / "static.cfg"
    static_cfg.write_text(TOY + "model = static\n")
    base = tmp_path / "base.ugck"
    assert main(["train", "--config", str(static_cfg), "--out", str(base)]) == 0
    refine_cfg = tmp_path / "refine.cfg"
    refine_cfg.write_text(TOY.replace("iterations = 4", "iterations = 0"))
    refined = tmp_path / "refined.ugck"
    assert main(["refine", "--config", str(refine_cfg), "--base", str(base), "--out", str(refined)]) == 0
    capsys.readouterr()
    data = tmp_path / "val.mseq"
    main(["gen-data", "--config", str(config), "--split", "val", "--out", str(data)])
    main(["eval", "--ckpt", str(base), "--data", str(data)])
    base_out = capsys.readouterr().out
    main(["eval", "--ckpt", str(refined), "--data", str(data)])
    assert mpjpe_line(capsys.readouterr().out) == mpjpe_line(base_out)


def test_bench_writes_report(tmp_path, config, capsys):
    out = tmp_path / "cost.csv"
    assert main(["bench", "--config", str(config), "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 2 + 2
    assert "inference FLOPs" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("layers = 2\nwidth = 3\n")
    assert main(["bench", "--config", str(bad), "--out", str(tmp_path / "x.csv")]) == 2
    err = capsys.readouterr().err
    assert "width" in err and "2" in err


def test_io_error_exit_code(tmp_path):
    assert main(["eval", "--ckpt", str(tmp_path / "missing.ugck")]) == 3
    assert main(["eval", "--data", str(tmp_path / "missing.mseq"), "--baseline", "zero-velocity"]) == 3
    (tmp_path / "junk.mseq").write_bytes(b"junk")
    assert main(["eval", "--data", str(tmp_path / "junk.mseq"), "--baseline", "zero-velocity"]) == 3
