import numpy as np
import pytest

from pcc import checkpoint
from pcc.config import Config, apply_text, desk_config, dump, set_key, tiny_config
from pcc.errors import CheckpointMismatch, ConfigError, FormatError
from pcc.model import CompletionModel


# ---------------------------------------------------------------- config

def test_dump_round_trip():
    cfg = desk_config("box")
    cfg.train.lr_drop_epochs = (3, 7)
    cfg.fusion.residual = True
    back = apply_text(Config(), dump(cfg))
    assert back == cfg


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="encoder.k9"):
        set_key(Config(), "encoder.k9", "3")
    with pytest.raises(ConfigError, match="nosuch"):
        apply_text(Config(), "nosuch.key = 1\n")


def test_bad_values():
    with pytest.raises(ConfigError):
        set_key(Config(), "encoder.k1", "many")
    with pytest.raises(ConfigError):
        set_key(Config(), "fusion.residual", "maybe")
    with pytest.raises(ConfigError):
        apply_text(Config(), "just text\n")


def test_comments_and_blank_lines():
    cfg = apply_text(Config(), "# header\n\nencoder.k1 = 8  # fewer neighbours\n")
    assert cfg.encoder.k1 == 8


@pytest.mark.parametrize("key,value", [
    ("encoder.width_local", "30"), ("encoder.n_global", "600"), ("train.tau", "0"),
    ("ablation", "w/o everything"), ("decoder.m_gen", "5000"), ("train.lr_drop_epochs", "5,3"),
])
def test_validate_rejects(key, value):
    cfg = Config()
    set_key(cfg, key, value)
    with pytest.raises(ConfigError):
        cfg.validate()


def test_presets_validate():
    for cfg in (Config(), desk_config(), tiny_config()):
        cfg.validate()


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = CompletionModel(tiny_config())
    state = model.state_dict()
    checkpoint.save(state, tmp_path / "m.hgck")
    back = checkpoint.load(tmp_path / "m.hgck")
    assert list(back) == list(state)
    for k in state:
        assert back[k].tobytes() == state[k].astype("<f4").tobytes()
    assert checkpoint.dumps(back) == (tmp_path / "m.hgck").read_bytes()


def test_checkpoint_names_unique_and_load_by_name():
    a = CompletionModel(tiny_config(), seed=1)
    b = CompletionModel(tiny_config(), seed=2)
    names = [n for n, _ in a.named_parameters()]
    assert len(names) == len(set(names))
    b.load_state_dict(a.state_dict())
    for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert np.array_equal(p.data, q.data)


def test_checkpoint_format_errors():
    buf = checkpoint.dumps({"w": np.ones((2, 3))})
    with pytest.raises(FormatError, match="magic"):
        checkpoint.loads(b"NOPE" + buf[4:])
    with pytest.raises(FormatError, match="byte"):
        checkpoint.loads(buf[:-2])
    with pytest.raises(FormatError, match="trailing"):
        checkpoint.loads(buf + b"\0")


def test_load_mismatch_reports_dims():
    cfg = tiny_config()
    model = CompletionModel(cfg)
    bigger = tiny_config()
    bigger.encoder.latent = 16
    state = CompletionModel(bigger).state_dict()
    with pytest.raises(CheckpointMismatch, match="expected"):
        model.load_state_dict(state)


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    with pytest.raises(TypeError):
        checkpoint.atomic_write(tmp_path / "x.bin", object())
    assert list(tmp_path.iterdir()) == []
