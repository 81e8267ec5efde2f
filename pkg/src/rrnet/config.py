"""Network description (GraphSpec) and its line-oriented config format.

Example::

    [model]
    name = rrnet-r4
    input = stereo          # stereo (6 channels), mono (3) or an integer
    activation = elu
    connection = cdc        # cdc or skip
    seed = 0

    [stage.1]
    r = 4
    rr = 16
    re = 32

    [decoder]
    widths = 96, 64, 48, 32, 16   # deepest layer first
    rcn = 16, 24, 32, 48, 64      # per encoder stage 1..5

A bare preset name (``rrnet-r4``) is accepted in place of the text.
"""

from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import List, Optional

from .blocks import DOWNSAMPLE_MODES, RRBlockConfig
from .errors import ConfigError

N_STAGES = 5
DEFAULT_RR = (16, 24, 32, 48, 64)
DEFAULT_WIDTHS = (96, 64, 48, 32, 16)
PRESETS = ("rrnet-r1", "rrnet-r2", "rrnet-r3", "rrnet-r4")

INPUT_MODES = {"stereo": 6, "mono": 3}
CONNECTIONS = ("cdc", "skip")

MODEL_KEYS = {"name", "input", "activation", "connection", "seed", "bias"}
STAGE_KEYS = {"r", "rr", "re", "dilation_base", "dilation_step", "downsample", "stride_first"}
DECODER_KEYS = {"widths", "rcn"}


def _default_stages():
    return [RRBlockConfig(r=4, rr=rr, re=2 * rr) for rr in DEFAULT_RR]


@dataclass
class GraphSpec:
    name: str = "rrnet"
    input_channels: int = 6
    stage_configs: List[RRBlockConfig] = field(default_factory=_default_stages)
    decoder_widths: List[int] = field(default_factory=lambda: list(DEFAULT_WIDTHS))
    rcn_per_stage: Optional[List[int]] = None
    activation: str = "elu"
    connection_mode: str = "cdc"
    seed: int = 0
    bias: bool = True

    def __post_init__(self):
        if self.rcn_per_stage is None:
            self.rcn_per_stage = [s.rr for s in self.stage_configs]
        self.validate()

    def validate(self):
        if len(self.stage_configs) != N_STAGES:
            raise ConfigError(f"expected {N_STAGES} stages, got {len(self.stage_configs)}", key="stage")
        if len(self.decoder_widths) != N_STAGES:
            raise ConfigError(f"expected {N_STAGES} decoder widths", key="decoder.widths")
        if len(self.rcn_per_stage) != N_STAGES:
            raise ConfigError(f"expected {N_STAGES} rcn values", key="decoder.rcn")
        if any(w < 1 for w in self.decoder_widths):
            raise ConfigError("decoder widths must be >= 1", key="decoder.widths")
        if any(c < 1 for c in self.rcn_per_stage):
            raise ConfigError("rcn values must be >= 1", key="decoder.rcn")
        if self.input_channels < 1:
            raise ConfigError("input channels must be >= 1", key="model.input")
        if self.activation not in ("elu", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}", key="model.activation")
        if self.connection_mode not in CONNECTIONS:
            raise ConfigError(f"unknown connection {self.connection_mode!r}", key="model.connection")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer", key="model.seed")

    @property
    def repetitions(self):
        return [s.r for s in self.stage_configs]

    def with_connection(self, mode):
        return replace(self, connection_mode=mode)

    def with_r(self, r):
        stages = [replace(s, r=r) for s in self.stage_configs]
        return replace(self, stage_configs=stages, name=f"{self.name}@r{r}")


def _int(value, key, line):
    try:
        return int(value, 0)
    except ValueError:
        raise ConfigError(f"expected an integer, got {value!r}", line=line, key=key) from None


def _bool(value, key, line):
    v = value.lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}", line=line, key=key)


def _int_list(value, key, line):
    return [_int(v.strip(), key, line) for v in value.split(",") if v.strip()]


def _sections(text):
    """Yield (section, key, value, line_number); sections come back with key None."""
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"malformed section header {raw.strip()!r}", line=lineno)
            section = line[1:-1].strip()
            yield section, None, None, lineno
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        if section is None:
            raise ConfigError("key outside of any section", line=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=lineno)
        yield section, key, value, lineno


def parse_config(text):
    """Parse config text (or a bare preset name) into a validated GraphSpec."""
    stripped = text.strip()
    if stripped in PRESETS:
        return load_preset(stripped)

    model = {}
    stages = {}
    decoder = {}
    seen = set()
    for section, key, value, line in _sections(text):
        if key is None:
            if section in seen:
                raise ConfigError(f"duplicate section [{section}]", line=line)
            seen.add(section)
            if section == "model" or section == "decoder":
                continue
            if section.startswith("stage."):
                idx = section[len("stage."):]
                if not idx.isdigit() or not 1 <= int(idx) <= N_STAGES:
                    raise ConfigError(f"stage index must be 1..{N_STAGES}", line=line, key=section)
                stages[int(idx)] = {}
                continue
            raise ConfigError(f"unknown section [{section}]", line=line)
        path = f"{section}.{key}"
        if section == "model":
            if key not in MODEL_KEYS:
                raise ConfigError("unknown key", line=line, key=path)
            model[key] = (value, line)
        elif section == "decoder":
            if key not in DECODER_KEYS:
                raise ConfigError("unknown key", line=line, key=path)
            decoder[key] = (value, line)
        else:
            if key not in STAGE_KEYS:
                raise ConfigError("unknown key", line=line, key=path)
            stages[int(section.split(".")[1])][key] = (value, line)

    spec = {}
    if "name" in model:
        spec["name"] = model["name"][0]
    if "input" in model:
        value, line = model["input"]
        spec["input_channels"] = (INPUT_MODES[value.lower()] if value.lower() in INPUT_MODES
                                  else _int(value, "model.input", line))
    if "activation" in model:
        spec["activation"] = model["activation"][0].lower()
    if "connection" in model:
        spec["connection_mode"] = model["connection"][0].lower()
    if "seed" in model:
        value, line = model["seed"]
        spec["seed"] = _int(value, "model.seed", line)
    if "bias" in model:
        value, line = model["bias"]
        spec["bias"] = _bool(value, "model.bias", line)

    stage_configs = []
    for s, default in enumerate(_default_stages(), start=1):
        fields = {}
        for key, (value, line) in stages.get(s, {}).items():
            path = f"stage.{s}.{key}"
            if key == "downsample":
                if value not in DOWNSAMPLE_MODES:
                    raise ConfigError(f"downsample must be one of {DOWNSAMPLE_MODES}", line=line, key=path)
                fields[key] = value
            elif key == "stride_first":
                # true = strided depthwise, false = the max-pool alternative
                if "downsample" in stages[s]:
                    raise ConfigError("give either downsample or stride_first", line=line, key=path)
                fields["downsample"] = "stride" if _bool(value, path, line) else "maxpool"
            else:
                fields[key] = _int(value, path, line)
        merged = dict(r=default.r, rr=default.rr, re=default.re,
                      dilation_base=default.dilation_base, dilation_step=None,
                      downsample=default.downsample)
        if "rr" in fields and "re" not in fields:
            merged["re"] = 2 * fields["rr"]
        merged.update(fields)
        if merged["r"] < 1:
            line = stages[s]["r"][1]
            raise ConfigError(f"r must be >= 1, got {merged['r']}", line=line, key=f"stage.{s}.r")
        try:
            stage_configs.append(RRBlockConfig(**merged))
        except ValueError as exc:
            line = min((ln for _, ln in stages.get(s, {}).values()), default=None)
            raise ConfigError(str(exc), line=line, key=f"stage.{s}") from None
    spec["stage_configs"] = stage_configs

    if "widths" in decoder:
        value, line = decoder["widths"]
        spec["decoder_widths"] = _int_list(value, "decoder.widths", line)
    if "rcn" in decoder:
        value, line = decoder["rcn"]
        spec["rcn_per_stage"] = _int_list(value, "decoder.rcn", line)
    return GraphSpec(**spec)


def format_config(spec):
    """Render a GraphSpec back to config text; ``parse_config`` inverts it."""
    lines = ["[model]", f"name = {spec.name}", f"input = {spec.input_channels}",
             f"activation = {spec.activation}", f"connection = {spec.connection_mode}",
             f"seed = {spec.seed}", f"bias = {'true' if spec.bias else 'false'}", ""]
    for s, cfg in enumerate(spec.stage_configs, start=1):
        lines += [f"[stage.{s}]", f"r = {cfg.r}", f"rr = {cfg.rr}", f"re = {cfg.re}",
                  f"dilation_base = {cfg.dilation_base}"]
        if cfg.dilation_step is not None:
            lines.append(f"dilation_step = {cfg.dilation_step}")
        lines += [f"downsample = {cfg.downsample}", ""]
    lines += ["[decoder]", "widths = " + ", ".join(map(str, spec.decoder_widths)),
              "rcn = " + ", ".join(map(str, spec.rcn_per_stage)), ""]
    return "\n".join(lines)


def preset_text(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("rrnet.presets").joinpath(f"{name}.cfg").read_text(encoding="utf-8")


def load_preset(name):
    return parse_config(preset_text(name))


def load_config(path_or_preset):
    """Read a config file, or a shipped preset by name (with or without ``.cfg``)."""
    key = str(path_or_preset)
    stem = key[:-4] if key.endswith(".cfg") else key
    path = Path(key)
    if not path.exists() and stem in PRESETS:
        return load_preset(stem)
    return parse_config(path.read_text(encoding="utf-8"))
