"""Experiment configuration files.

Grammar: INI sections ``[system] [data] [nn] [train] [measurement] [filter]
[run]`` with ``key = value`` lines; ``#`` and ``;`` start comments. Vectors
are comma-separated, matrix rows are separated by ``;`` inside the value.
Numbers may be written as multiples or fractions of ``pi`` (``-pi/2``,
``2*pi/3``). Unknown sections or keys are errors.
"""

import configparser
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from neural_filter.dynamics import SYSTEMS, IntegratorConfig, MeasurementModel, make_system
from neural_filter.errors import ConfigError, NeuralFilterError
from neural_filter.filter import FilterConfig
from neural_filter.mlp import LayerSpec, format_layers, parse_layers
from neural_filter.training import SampleBox, TrainConfig

PRESET_DIR = Path(__file__).with_name("presets")

_SYSTEM_PARAMS = {
    "pendulum": ("g", "length"),
    "van_der_pol": ("mu",),
    "lorenz": ("sigma", "rho", "beta"),
    "double_pendulum": ("m1", "m2", "l1", "l2", "g"),
}

_KEYS = {
    "system": {"name"} | {p for params in _SYSTEM_PARAMS.values() for p in params},
    "data": {
        "ts", "n_samples", "paper_n_samples", "box_lower", "box_upper",
        "rel_tol", "abs_tol", "max_steps", "seed",
    },
    "nn": {"layers", "use_bias", "seed"},
    "train": {
        "batch_size", "split_fraction", "learning_rate", "beta1", "beta2", "eps",
        "epochs", "validation_every", "normalize", "seed",
    },
    "measurement": {"c_matrix", "sigma_v"},
    "filter": {"q_scale", "q_diag", "p0_scale", "x0_hat"},
    "run": {"name", "x0", "horizon_steps", "noise_seed", "output_dir"},
}

_PI_RE = re.compile(r"^([+-]?)(?:(\d+(?:\.\d*)?)\s*\*\s*)?pi(?:\s*/\s*(\d+(?:\.\d*)?))?$")


def parse_number(text):
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    m = _PI_RE.match(text.replace(" ", ""))
    if not m:
        raise ConfigError(f"not a number: '{text}'")
    sign, mult, div = m.groups()
    value = np.pi * (float(mult) if mult else 1.0) / (float(div) if div else 1.0)
    return -value if sign == "-" else value


def parse_vector(text):
    return np.array([parse_number(t) for t in text.split(",") if t.strip()], dtype=np.float64)


def parse_matrix(text):
    rows = [r for r in text.split(";") if r.strip()]
    parsed = [parse_vector(r.replace(" ", ",")) if "," not in r else parse_vector(r) for r in rows]
    if len({len(r) for r in parsed}) != 1:
        raise ConfigError(f"ragged matrix: '{text}'")
    return np.array(parsed)


def _fmt(x):
    return repr(float(x))


def _fmt_vector(v):
    return ", ".join(_fmt(x) for x in v)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    name: str
    system_name: str
    system_params: Dict[str, float]
    ts: float
    n_samples: int
    box: SampleBox
    layers: Tuple[LayerSpec, ...]
    train: TrainConfig
    measurement: MeasurementModel
    q_matrix: np.ndarray
    p0: np.ndarray
    x0_true: np.ndarray
    horizon_steps: int
    x0_hat: Optional[np.ndarray] = None
    paper_n_samples: Optional[int] = None
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    use_bias: bool = True
    data_seed: int = 0
    init_seed: int = 0
    noise_seed: int = 0
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.system_name not in SYSTEMS:
            raise ConfigError(f"unknown system '{self.system_name}'")
        if self.horizon_steps < 1:
            raise ConfigError("horizon_steps must be >= 1")
        if not self.ts > 0:
            raise ConfigError("ts must be positive")
        if self.n_samples < 2:
            raise ConfigError("n_samples must be >= 2")
        dim = self.system().dim
        if self.box.dim != dim:
            raise ConfigError(f"sample box has {self.box.dim} dims, system has {dim}")
        if len(self.x0_true) != dim:
            raise ConfigError(f"x0 has {len(self.x0_true)} entries, system has {dim}")
        if self.layers[-1].width != dim:
            raise ConfigError(f"output layer width {self.layers[-1].width} != state dim {dim}")
        if self.measurement.state_dim != dim:
            raise ConfigError("measurement c_matrix column count does not match state dim")
        self.filter_config()  # validates Q, P0, x0_hat

    def system(self):
        try:
            return make_system(self.system_name, **self.system_params)
        except (TypeError, NeuralFilterError) as exc:
            raise ConfigError(f"[system]: {exc}") from exc

    @property
    def dim(self):
        return len(self.x0_true)

    def filter_config(self):
        try:
            return FilterConfig(self.q_matrix, self.measurement, self.p0, self.x0_hat)
        except NeuralFilterError as exc:
            raise ConfigError(f"[filter]: {exc}") from exc

    def at_paper_scale(self):
        if self.paper_n_samples is None:
            return self
        return replace(self, n_samples=self.paper_n_samples)

    def with_seed(self, seed):
        """Replace all four seeds by ``seed``, ``seed+1``, ``seed+2``, ``seed+3``."""
        return replace(
            self,
            data_seed=seed,
            init_seed=seed + 1,
            train=replace(self.train, seed=seed + 2),
            noise_seed=seed + 3,
        )

    def to_ini(self):
        t = self.train
        q = self.q_matrix
        lines = ["[system]", f"name = {self.system_name}"]
        lines += [f"{k} = {_fmt(v)}" for k, v in self.system_params.items()]
        lines += [
            "",
            "[data]",
            f"ts = {_fmt(self.ts)}",
            f"n_samples = {self.n_samples}",
        ]
        if self.paper_n_samples is not None:
            lines.append(f"paper_n_samples = {self.paper_n_samples}")
        lines += [
            f"box_lower = {_fmt_vector(self.box.lower)}",
            f"box_upper = {_fmt_vector(self.box.upper)}",
            f"rel_tol = {_fmt(self.integrator.rel_tol)}",
            f"abs_tol = {_fmt(self.integrator.abs_tol)}",
            f"max_steps = {self.integrator.max_steps}",
            f"seed = {self.data_seed}",
            "",
            "[nn]",
            f"layers = {format_layers(self.layers)}",
            f"use_bias = {str(self.use_bias).lower()}",
            f"seed = {self.init_seed}",
            "",
            "[train]",
            f"batch_size = {t.batch_size}",
            f"split_fraction = {_fmt(t.split_fraction)}",
            f"learning_rate = {_fmt(t.learning_rate)}",
            f"beta1 = {_fmt(t.adam_beta1)}",
            f"beta2 = {_fmt(t.adam_beta2)}",
            f"eps = {_fmt(t.adam_eps)}",
            f"epochs = {t.epochs}",
            f"validation_every = {t.validation_every}",
            f"normalize = {str(t.normalize).lower()}",
            f"seed = {t.seed}",
            "",
            "[measurement]",
            "c_matrix = " + "; ".join(_fmt_vector(row) for row in self.measurement.c_matrix),
            f"sigma_v = {_fmt(self.measurement.sigma_v)}",
            "",
            "[filter]",
        ]
        if np.array_equal(q, np.diag(np.diag(q))):
            lines.append(f"q_diag = {_fmt_vector(np.diag(q))}")
        else:
            raise ConfigError("only diagonal process covariances can be written to a config file")
        lines.append(f"p0_scale = {_fmt(self.p0[0, 0])}")
        if self.x0_hat is not None:
            lines.append(f"x0_hat = {_fmt_vector(self.x0_hat)}")
        lines += [
            "",
            "[run]",
            f"name = {self.name}",
            f"x0 = {_fmt_vector(self.x0_true)}",
            f"horizon_steps = {self.horizon_steps}",
            f"noise_seed = {self.noise_seed}",
        ]
        if self.output_dir is not None:
            lines.append(f"output_dir = {self.output_dir}")
        return "\n".join(lines) + "\n"


def _bool(text):
    value = text.strip().lower()
    if value in ("true", "yes", "1", "on"):
        return True
    if value in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"not a boolean: '{text}'")


def _int(text):
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"not an integer: '{text}'") from None
    if value != int(value):
        raise ConfigError(f"not an integer: '{text}'")
    return int(value)


def loads(text, source="<string>"):
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#",), comment_prefixes=("#", ";")
    )
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    for section in parser.sections():
        if section not in _KEYS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        unknown = set(parser[section]) - _KEYS[section]
        if unknown:
            raise ConfigError(f"{source}: unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")

    def get(section, key, conv=str, default=None, required=False):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                return conv(raw)
            except ConfigError as exc:
                raise ConfigError(f"{source}: [{section}] {key}: {exc}") from None
        if required:
            raise ConfigError(f"{source}: missing [{section}] {key}")
        return default

    try:
        system_name = get("system", "name", required=True).strip()
        if system_name not in _SYSTEM_PARAMS:
            raise ConfigError(f"{source}: unknown system '{system_name}'")
        allowed = _SYSTEM_PARAMS[system_name]
        params = {}
        for key in parser["system"]:
            if key == "name":
                continue
            if key not in allowed:
                raise ConfigError(f"{source}: parameter '{key}' does not belong to system '{system_name}'")
            params[key] = parse_number(parser["system"][key])

        integrator = IntegratorConfig(
            rel_tol=get("data", "rel_tol", parse_number, 1e-9),
            abs_tol=get("data", "abs_tol", parse_number, 1e-9),
            max_steps=get("data", "max_steps", _int, 1_000_000),
        )
        train = TrainConfig(
            batch_size=get("train", "batch_size", _int, 32),
            split_fraction=get("train", "split_fraction", parse_number, 0.8),
            learning_rate=get("train", "learning_rate", parse_number, 1e-3),
            adam_beta1=get("train", "beta1", parse_number, 0.9),
            adam_beta2=get("train", "beta2", parse_number, 0.999),
            adam_eps=get("train", "eps", parse_number, 1e-8),
            epochs=get("train", "epochs", _int, 200),
            validation_every=get("train", "validation_every", _int, 30),
            normalize=get("train", "normalize", _bool, False),
            seed=get("train", "seed", _int, 0),
        )
        c_matrix = get("measurement", "c_matrix", parse_matrix, required=True)
        measurement = MeasurementModel(c_matrix, get("measurement", "sigma_v", parse_number, 0.0))
        dim = c_matrix.shape[1]

        if parser.has_option("filter", "q_diag") and parser.has_option("filter", "q_scale"):
            raise ConfigError(f"{source}: give either q_diag or q_scale, not both")
        if parser.has_option("filter", "q_diag"):
            q_diag = get("filter", "q_diag", parse_vector)
            if len(q_diag) != dim:
                raise ConfigError(f"{source}: q_diag needs {dim} entries")
            q_matrix = np.diag(q_diag)
        else:
            q_matrix = get("filter", "q_scale", parse_number, 1e-4) * np.eye(dim)
        p0 = get("filter", "p0_scale", parse_number, 1e-4) * np.eye(dim)

        return ExperimentConfig(
            name=get("run", "name", str, Path(source).stem).strip(),
            system_name=system_name,
            system_params=params,
            ts=get("data", "ts", parse_number, required=True),
            n_samples=get("data", "n_samples", _int, required=True),
            paper_n_samples=get("data", "paper_n_samples", _int),
            box=SampleBox(
                get("data", "box_lower", parse_vector, required=True),
                get("data", "box_upper", parse_vector, required=True),
            ),
            integrator=integrator,
            layers=tuple(get("nn", "layers", parse_layers, required=True)),
            use_bias=get("nn", "use_bias", _bool, True),
            train=train,
            measurement=measurement,
            q_matrix=q_matrix,
            p0=p0,
            x0_hat=get("filter", "x0_hat", parse_vector),
            x0_true=get("run", "x0", parse_vector, required=True),
            horizon_steps=get("run", "horizon_steps", _int, required=True),
            data_seed=get("data", "seed", _int, 0),
            init_seed=get("nn", "seed", _int, 0),
            noise_seed=get("run", "noise_seed", _int, 0),
            output_dir=get("run", "output_dir", str),
        )
    except ConfigError:
        raise
    except NeuralFilterError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text, source=str(path))


def resolve(name_or_path):
    """A config file path, or the name of a shipped preset."""
    path = Path(name_or_path)
    if path.exists():
        return load(path)
    preset = PRESET_DIR / f"{name_or_path}.ini"
    if preset.exists():
        return load(preset)
    raise ConfigError(f"no config file or preset named '{name_or_path}'")


def list_presets() -> List[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.ini"))
