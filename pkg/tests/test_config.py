import pytest

from rrnet.config import PRESETS, format_config, load_config, load_preset, parse_config, preset_text
from rrnet.errors import ConfigError


@pytest.mark.parametrize("name", PRESETS)
def test_presets_parse(name):
    spec = load_preset(name)
    r = int(name[-1])
    assert spec.repetitions == [r] * 5
    assert spec.input_channels == 6 and spec.connection_mode == "cdc"


def test_bare_preset_name_is_accepted():
    assert parse_config("rrnet-r4").repetitions == [4] * 5
    assert load_config("rrnet-r2.cfg").repetitions == [2] * 5


def test_empty_model_section_gives_defaults():
    spec = parse_config("[model]\n")
    assert spec.input_channels == 6 and len(spec.stage_configs) == 5
    assert spec.connection_mode == "cdc" and spec.activation == "elu"
    assert [s.rr for s in spec.stage_configs] == [16, 24, 32, 48, 64]
    assert [s.re for s in spec.stage_configs] == [32, 48, 64, 96, 128]
    assert spec.rcn_per_stage == [16, 24, 32, 48, 64]
    assert spec.decoder_widths == [96, 64, 48, 32, 16]


def test_r_zero_names_key_path():
    with pytest.raises(ConfigError) as err:
        parse_config("[model]\n[stage.3]\nr = 0\n")
    assert err.value.key == "stage.3.r" and err.value.line == 3
    assert "stage.3.r" in str(err.value)


@pytest.mark.parametrize("text,line,key", [
    ("[model]\nfoo = 1\n", 2, "model.foo"),
    ("[model]\nname = x\n[stage.1]\nwidth = 3\n", 4, "stage.1.width"),
    ("[decoder]\nwidths = 1, 2\n", None, "decoder.widths"),
    ("[model]\nseed = abc\n", 2, "model.seed"),
])
def test_semantic_errors(text, line, key):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.key == key
    if line is not None:
        assert err.value.line == line


@pytest.mark.parametrize("text,line", [
    ("[model\n", 1),
    ("[model]\njust words\n", 2),
    ("r = 1\n", 1),
    ("[stage.9]\n", 1),
    ("[model]\n[model]\n", 2),
])
def test_syntax_errors_report_line(text, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.line == line and f"line {line}" in str(err.value)


def test_comments_and_options():
    spec = parse_config("""
        # comment line
        [model]
        input = mono    # trailing comment
        activation = relu
        connection = skip
        seed = 0x10
        bias = false
        [stage.2]
        rr = 8
        dilation_base = 2
        downsample = maxpool
    """)
    assert spec.input_channels == 3 and spec.activation == "relu"
    assert spec.connection_mode == "skip" and spec.seed == 16 and spec.bias is False
    s2 = spec.stage_configs[1]
    assert (s2.rr, s2.re, s2.dilation_base, s2.downsample) == (8, 16, 2, "maxpool")


def test_stride_first_alias():
    spec = parse_config("[stage.1]\nstride_first = false\n[stage.2]\nstride_first = true\n")
    assert spec.stage_configs[0].downsample == "maxpool"
    assert spec.stage_configs[1].downsample == "stride"
    with pytest.raises(ConfigError):
        parse_config("[stage.1]\ndownsample = none\nstride_first = true\n")


def test_format_round_trip():
    for name in PRESETS:
        spec = load_preset(name)
        again = parse_config(format_config(spec))
        assert again == spec


def test_unknown_preset_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        preset_text("rrnet-r9")
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.cfg")
