import pytest
from hypothesis import given
from hypothesis import strategies as st

from arn.config import RunConfig, apply_overrides, dump_config, load_config, parse_config
from arn.errors import ConfigError


def test_defaults_round_trip_through_text():
    cfg = RunConfig()
    assert parse_config(dump_config(cfg)) == cfg


def test_sections_and_dotted_keys():
    cfg = parse_config(
        """
        # comment
        [model.encoder]
        channels = 16
        spatial_pool = 2,2,2,1
        [optim]
        lr = 0.01   # trailing comment
        """
    )
    assert cfg.model.encoder.channels == 16
    assert cfg.model.encoder.spatial_pool == (2, 2, 2, 1)
    assert cfg.optim.lr == 0.01


def test_section_prefix_applies_to_following_keys():
    with pytest.raises(ConfigError, match="optim.protocol.way"):
        parse_config("[optim]\nprotocol.way = 3\n")


def test_top_level_dotted_keys_without_sections():
    cfg = parse_config("protocol.way = 3\nmodel.selfsup.kind = none\n")
    assert cfg.protocol.way == 3 and cfg.model.selfsup.kind == "none"


@pytest.mark.parametrize(
    "text",
    [
        "model.encoder.chanels = 4",
        "model.sigma = 0",
        "model.shift = 1.5",
        "model.selfsup.kind = mirror",
        "model.selfsup.gamma = -1",
        "protocol.way = 0",
        "optim.lr = 0",
        "model.attention.output = relu",
        "data.source = video",
        "just words",
    ],
)
def test_invalid_configs_raise(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_int_fields_accept_float_only_where_float():
    cfg = parse_config("optim.lr = 1")
    assert isinstance(cfg.optim.lr, float)


@given(st.integers(0, 2**64 - 1), st.floats(1e-6, 1.0), st.integers(1, 10))
def test_overrides_survive_dump_and_parse(seed, lr, way):
    cfg = apply_overrides(RunConfig(), {"optim.seed": seed, "optim.lr": lr, "protocol.way": way})
    assert parse_config(dump_config(cfg)) == cfg


def test_shipped_configs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    paths = sorted(root.glob("*.cfg"))
    assert paths
    for path in paths:
        load_config(path)
