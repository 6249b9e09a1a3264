import pytest
from hypothesis import given, settings, strategies as st

from merlin.config import ConfigError, RunConfig, parse

SAMPLE = """
[run]
seed = 4
mode = merlin_np

[stitch]
delta = 1e-6
n_new = 500

[train]
updates = 1000
hidden = 64,64

[eval]
goal_mode = fixed
goal = 0,0
"""


def test_parse_sample():
    cfg = parse(SAMPLE).validate()
    assert cfg.run.seed == 4 and cfg.run.mode == "merlin_np"
    assert cfg.stitch.delta == 1e-6 and cfg.train.hidden == (64, 64)
    assert cfg.eval.goal == (0.0, 0.0)
    tc = cfg.train_config()
    assert tc.updates == 1000 and tc.delta == 1e-6 and tc.n_stitched == 500
    assert tc.batch_size == 512 and tc.lr == 5e-4


def test_round_trip():
    cfg = parse(SAMPLE)
    assert parse(cfg.to_text()) == cfg
    assert parse(RunConfig().to_text()) == RunConfig()


def test_unknown_key_and_section():
    with pytest.raises(ConfigError, match="unknown key"):
        parse("[train]\nupdats = 5\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse("[trian]\nupdates = 5\n")


def test_bad_values():
    with pytest.raises(ConfigError):
        parse("[train]\nupdates = many\n")
    with pytest.raises(ConfigError):
        parse("[run]\nmode = dqn\n").validate()
    with pytest.raises(ConfigError):
        parse("[eval]\ngoal_mode = fixed\n").validate()
    with pytest.raises(ConfigError):
        parse("[data]\ngenerator = reverse_play\n").validate()
    with pytest.raises(ConfigError):
        parse("not an ini file")


def test_override_precedence():
    cfg = parse(SAMPLE).override("train", updates=7, lr=None)
    assert cfg.train.updates == 7 and cfg.train.lr == 5e-4
    with pytest.raises(ConfigError):
        cfg.override("train", nope=1)


def test_digest_tracks_content():
    a = parse(SAMPLE)
    assert a.digest() == parse(SAMPLE).digest()
    assert a.digest() != a.override("run", seed=5).digest()


@given(st.integers(0, 2**63), st.sampled_from(["merlin", "gcsl", "merlin_p", "merlin_np"]),
       st.floats(0, 1), st.floats(1e-12, 10), st.lists(st.integers(1, 512), min_size=1, max_size=4),
       st.one_of(st.none(), st.tuples(st.floats(-5, 5), st.floats(-5, 5))))
@settings(max_examples=100)
def test_round_trip_property(seed, mode, ratio, delta, hidden, goal):
    cfg = (RunConfig().override("run", seed=seed, mode=mode)
           .override("relabel", hindsight_ratio=ratio).override("stitch", delta=delta)
           .override("train", hidden=tuple(hidden)).override("eval", goal=goal))
    assert parse(cfg.to_text()) == cfg
