from fractions import Fraction

import pytest

from appreply.config import ConfigError, Experiment, parse_config_text, parse_split, parse_value


@pytest.mark.parametrize("raw,val", [("true", True), ("Off", False), ("none", None), ("12", 12),
                                     ("0.5", 0.5), ("literal", "literal")])
def test_parse_value(raw, val):
    assert parse_value(raw) == val


def test_parse_text_comments_and_unknown():
    assert parse_config_text("# c\nd = 32  # width\n\nlr=0.1\n") == {"d": 32, "lr": 0.1}
    with pytest.raises(ConfigError):
        parse_config_text("nonsense = 1\n")
    with pytest.raises(ConfigError):
        parse_config_text("d 32\n")


def test_split():
    assert parse_split("8:1:1") == (Fraction(4, 5), Fraction(1, 10), Fraction(1, 10))
    for bad in ("1:1", "0:0:0", "-1:1:1"):
        with pytest.raises(ConfigError):
            parse_split(bad)


def test_flags_override_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed = 3\nd = 16\nepochs = 2\nuse_rating = true\n")
    exp = Experiment.load(p, {"seed": 9, "use_rating": False, "beam": None})
    assert exp.seed == 9 and exp.beam == 5
    mc = exp.model_config(50)
    assert (mc.d, mc.use_rating, mc.seed, mc.vocab_size) == (16, False, 9, 50)
    assert exp.train_config().epochs == 2 and exp.train_config().seed == 9


def test_round_trip_text(tmp_path):
    exp = Experiment.load(None, {"d": 8, "use_category": False, "max_steps": 3})
    p = tmp_path / "x.cfg"
    p.write_text(exp.to_text())
    assert Experiment.load(p).values == exp.values


def test_invalid_values_raise_config_error():
    with pytest.raises(ConfigError):
        Experiment.load(None, {"fusion_mode": "bogus"}).model_config(10)
    with pytest.raises(ConfigError):
        Experiment.load(None, {"lr": -1.0}).train_config()
