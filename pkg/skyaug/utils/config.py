"""
Pipeline configuration: a flat `key = value` text file mapped onto `PipelineConfig`.

Every key has a default; the reference hyperparameters (batch 32, 1000 epochs,
learning rate 0.00025) are the defaults, everything else is an explicit knob.
"""
import dataclasses
import logging
from dataclasses import dataclass, fields

from skyaug.utils.errors import UsageError

FILTER_MODES = ["independent", "sequential"]
R2_MODES = ["pooled", "per_image"]
THRESHOLD_CRITERIA = ["youden", "corner"]


def str2bool(v):
    if isinstance(v, bool):
        return v
    if v.lower() in ('yes', 'true', 't', 'y', '1'):
        return True
    elif v.lower() in ('no', 'false', 'f', 'n', '0'):
        return False
    else:
        raise UsageError(f"Boolean value expected, got '{v}'")


@dataclass
class PipelineConfig:
    # dataset
    dataset: str = "synthetic"
    synthetic_count: int = 115
    synthetic_seed: int = 3
    side: int = 32
    split_seed: int = 7
    manifest: str = ""

    # gan
    batch_size: int = 32
    epochs: int = 1000
    latent_dim: int = 100
    learning_rate: float = 0.00025
    beta1: float = 0.9
    beta2: float = 0.999
    gan_seed: int = 0
    dedupe_augment: bool = False

    # pseudolabel
    candidate_count: int = 64
    candidate_seed: int = 1000
    cluster_max_iters: int = 100
    cluster_tol: float = 1e-6
    invert_cloud_rule: bool = False
    window_radius: int = 2
    max_passes: int = 100

    # pls / filtering / evaluation
    sweep_max: int = 20
    r2_mode: str = "pooled"
    filter_mode: str = "independent"
    threshold_criterion: str = "youden"

    # run
    outdir: str = "skyaug_out"
    num_workers: int = 1
    render_svg: bool = True

    def validate(self):
        if self.side < 8 or self.side % 4 != 0:
            raise UsageError(f"'side' must be a multiple of 4 and >= 8, got {self.side}")
        if self.batch_size < 1:
            raise UsageError("'batch_size' must be >= 1")
        if self.epochs < 1:
            raise UsageError("'epochs' must be >= 1")
        if self.sweep_max < 1:
            raise UsageError("'sweep_max' must be >= 1")
        if self.window_radius < 1:
            raise UsageError("'window_radius' must be >= 1")
        if self.max_passes < 1:
            raise UsageError("'max_passes' must be >= 1")
        if self.candidate_count < 0:
            raise UsageError("'candidate_count' must be >= 0")
        if self.r2_mode not in R2_MODES:
            raise UsageError(f"'r2_mode' must be one of {R2_MODES}")
        if self.filter_mode not in FILTER_MODES:
            raise UsageError(f"'filter_mode' must be one of {FILTER_MODES}")
        if self.threshold_criterion not in THRESHOLD_CRITERIA:
            raise UsageError(f"'threshold_criterion' must be one of {THRESHOLD_CRITERIA}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        """Render the config as `key = value` lines (the config reference)."""
        return "".join(f"{k} = {_format_value(v)}\n" for k, v in self.to_dict().items())

    def replace(self, **overrides):
        return dataclasses.replace(self, **overrides)


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(field, raw: str):
    try:
        if field.type in (bool, "bool"):
            return str2bool(raw)
        if field.type in (int, "int"):
            return int(raw)
        if field.type in (float, "float"):
            return float(raw)
    except ValueError:
        raise UsageError(f"Invalid value '{raw}' for key '{field.name}'")
    return raw


def parse_config_text(text: str, base: PipelineConfig = None) -> PipelineConfig:
    """
    Parse `key = value` lines onto a config.

    Args:
        text (str): Config file contents. '#' starts a comment.
        base (PipelineConfig, optional): Values not present in `text` are taken from here.

    Raises:
        UsageError: On unknown keys or lines without '='.
    """
    known = {f.name: f for f in fields(PipelineConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"Config line {lineno} is not of the form 'key = value': '{line}'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise UsageError(f"Unknown config key '{key}' (line {lineno})")
        values[key] = _coerce(known[key], raw)

    base = base if base is not None else PipelineConfig()
    return base.replace(**values).validate()


def load_config(path: str = "", **overrides) -> PipelineConfig:
    """
    Load a config file (if given) and apply non-None overrides on top.

    Args:
        path (str): Path to the `key = value` file, or '' for defaults only.
        **overrides: Field values (typically from command-line flags).
    """
    config = PipelineConfig()
    if path:
        from skyaug.utils.file import check_file_exists

        check_file_exists(path)
        logging.info(f"Reading configuration from {path}")
        with open(path, "r") as f:
            config = parse_config_text(f.read(), config)

    _overrides = {k: v for k, v in overrides.items() if v is not None}
    unknown = set(_overrides) - {f.name for f in fields(PipelineConfig)}
    if unknown:
        raise UsageError(f"Unknown configuration overrides: {sorted(unknown)}")
    return config.replace(**_overrides).validate()
