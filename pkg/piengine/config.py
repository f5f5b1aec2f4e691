"""
Configuration classes for the product-interaction engine

Contains the environment-backed engine defaults and the run configuration
read by the command-line interface.
"""

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

from dotenv import load_dotenv
from lightrag.utils import get_env_value

from .errors import ConfigError

load_dotenv(dotenv_path=".env", override=False)


@dataclass
class EngineConfig:
    """Engine-wide defaults with environment variable support"""

    # Reproducibility
    # ---
    seed: int = field(default=get_env_value("PI_ENGINE_SEED", 7, int))
    """Fallback seed used when the CLI is given no --seed."""

    # Memory Configuration
    # ---
    budget: int = field(default=get_env_value("PI_ENGINE_BUDGET", 100_000_000, int))
    """Maximum number of coefficients a product space may hold."""

    sparse_threshold: float = field(
        default=get_env_value("PI_ENGINE_SPARSE_THRESHOLD", 0.05, float)
    )
    """Elements with at most this fraction of nonzeros are stored as coordinate lists."""

    # Representation Configuration
    # ---
    so3_policy: str = field(default=get_env_value("PI_ENGINE_SO3_POLICY", "drop", str))
    """Truncation policy for SO(3) feature algebras in layers: 'drop' or 'strict'."""

    so2_policy: str = field(default=get_env_value("PI_ENGINE_SO2_POLICY", "drop", str))
    """Truncation policy for SO(2) feature algebras in layers: 'drop' or 'strict'."""

    # Suite Execution Configuration
    # ---
    jobs: int = field(default=get_env_value("PI_ENGINE_JOBS", 1, int))
    """Maximum number of verification cases run concurrently."""

    tol_scale: float = field(default=get_env_value("PI_ENGINE_TOL_SCALE", 1.0, float))
    """Multiplier applied to every verification tolerance."""

    show_progress: bool = field(
        default=get_env_value("PI_ENGINE_SHOW_PROGRESS", True, bool)
    )
    """Whether suite runners display progress bars."""

    log_level: str = field(default=get_env_value("PI_ENGINE_LOG_LEVEL", "INFO", str))
    """Logging level configured by the command-line interface."""

    def __post_init__(self):
        if self.budget <= 0:
            raise ConfigError("budget must be positive", key="budget")
        if not 0.0 <= self.sparse_threshold <= 1.0:
            raise ConfigError("sparse_threshold must lie in [0, 1]", key="sparse_threshold")
        for name in ("so3_policy", "so2_policy"):
            if getattr(self, name) not in ("drop", "strict"):
                raise ConfigError("policy must be 'drop' or 'strict'", key=name)
        if self.tol_scale <= 0:
            raise ConfigError("tol_scale must be positive", key="tol_scale")


_DEFAULT_ENGINE_CONFIG: Optional[EngineConfig] = None


def get_engine_config() -> EngineConfig:
    """Return the process-wide engine defaults (built lazily from the environment)"""
    global _DEFAULT_ENGINE_CONFIG
    if _DEFAULT_ENGINE_CONFIG is None:
        _DEFAULT_ENGINE_CONFIG = EngineConfig()
    return _DEFAULT_ENGINE_CONFIG


def _float_list(text: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _int_list(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default)
RUN_SCHEMA: Dict[str, Dict[str, Tuple[Callable[[str], Any], Any]]] = {
    "run": {
        "suite": (str, "all"),
        "seed": (int, None),
        "jobs": (int, None),
        "tol_scale": (float, None),
        "out": (str, ""),
        "cases": (int, 30),
        "show_progress": (_bool, None),
    },
    "conv": {
        "height": (int, 8),
        "width": (int, 8),
        "kernel_height": (int, 3),
        "kernel_width": (int, 3),
    },
    "attention": {"n": (int, 6), "d": (int, 4), "heads": (_int_list, (1, 2))},
    "ssm": {"d": (int, 3), "hidden": (int, 4), "steps": (int, 50), "dt": (float, 0.05)},
    "mamba": {"d": (int, 2), "hidden": (int, 3), "steps": (int, 40), "dt": (float, 0.05)},
    "tfn": {"points": (int, 5), "l_max": (int, 2), "radial_basis": (int, 3)},
    "se3": {"points": (int, 4), "l_max": (int, 1), "radius": (float, 10.0)},
    "harmonic": {"points": (int, 7), "n_max": (int, 2)},
    "tpa": {"n": (int, 5), "heads": (int, 2), "head_dim": (int, 2), "rank": (int, 1)},
    "equivariance": {"rotations": (int, 20), "translations": (int, 10)},
    "train": {
        "steps": (int, None),
        "lr": (float, None),
        "momentum": (float, None),
        "seeds": (int, 5),
    },
    "tolerances": {
        "algebra": (float, 1e-12),
        "tensor": (float, 1e-13),
        "conv": (float, 1e-12),
        "gating": (float, 1e-12),
        "attention": (float, 1e-10),
        "ssm": (float, 1e-9),
        "mamba": (float, 1e-9),
        "tpa": (float, 1e-10),
        "tfn": (float, 1e-10),
        "se3": (float, 1e-9),
        "representations": (float, 1e-8),
        "gradients": (float, 1e-5),
        "translation": (float, 1e-12),
        "so2": (float, 1e-8),
        "so3": (float, 1e-6),
        "negative_control": (float, 1e-3),
    },
}


@dataclass
class RunConfig:
    """Validated run configuration: one flat key/value table per section"""

    values: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    source: Optional[str] = None

    def __post_init__(self):
        merged: Dict[str, Dict[str, Any]] = {}
        for section, keys in RUN_SCHEMA.items():
            merged[section] = {key: default for key, (_, default) in keys.items()}
        for section, entries in self.values.items():
            if section not in RUN_SCHEMA:
                raise ConfigError(f"unknown section [{section}]", key=section)
            for key, value in entries.items():
                if key not in RUN_SCHEMA[section]:
                    raise ConfigError(f"unknown key in [{section}]", key=key)
                merged[section][key] = value
        self.values = merged
        self._validate()

    def _validate(self):
        for key, tol in self.values["tolerances"].items():
            if tol is None or tol <= 0:
                raise ConfigError("tolerances must be positive", key=key)
        scale = self.values["run"]["tol_scale"]
        if scale is not None and scale <= 0:
            raise ConfigError("tol_scale must be positive", key="tol_scale")
        jobs = self.values["run"]["jobs"]
        if jobs is not None and jobs < 1:
            raise ConfigError("jobs must be at least 1", key="jobs")

    def get(self, section: str, key: str) -> Any:
        try:
            return self.values[section][key]
        except KeyError:
            raise ConfigError(f"unknown configuration entry [{section}] {key}", key=key)

    def set(self, section: str, key: str, value: Any) -> None:
        """Override one entry (used for CLI flags); None leaves the entry alone"""
        if value is None:
            return
        if section not in RUN_SCHEMA or key not in RUN_SCHEMA[section]:
            raise ConfigError(f"unknown configuration entry [{section}]", key=key)
        self.values[section][key] = value
        self._validate()

    def scaled(self, tol: float) -> float:
        """Apply the run's tolerance scale to a fixed threshold"""
        scale = self.values["run"]["tol_scale"] or get_engine_config().tol_scale
        return float(tol) * float(scale)

    def tolerance(self, name: str) -> float:
        return self.scaled(self.values["tolerances"][name])

    @property
    def seed(self) -> int:
        seed = self.values["run"]["seed"]
        return int(seed if seed is not None else get_engine_config().seed)

    @property
    def jobs(self) -> int:
        jobs = self.values["run"]["jobs"]
        return int(jobs if jobs is not None else get_engine_config().jobs)

    @property
    def show_progress(self) -> bool:
        flag = self.values["run"]["show_progress"]
        return bool(get_engine_config().show_progress if flag is None else flag)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {
            section: {
                key: list(value) if isinstance(value, tuple) else value
                for key, value in entries.items()
            }
            for section, entries in self.values.items()
        }


_KEY_LINE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")
_SECTION_LINE = re.compile(r"^\s*\[([^\]]+)\]")


def _locate(lines, section: str, key: Optional[str]) -> Optional[int]:
    current = None
    for number, line in enumerate(lines, start=1):
        match = _SECTION_LINE.match(line)
        if match:
            current = match.group(1).strip()
            if key is None and current == section:
                return number
            continue
        if key is not None and current == section:
            match = _KEY_LINE.match(line)
            if match and match.group(1).strip().lower() == key:
                return number
    return None


def parse_run_config(text: str, source: Optional[str] = None) -> RunConfig:
    """
    Parse the flat ``key = value`` configuration grammar

    Args:
        text: Configuration file contents
        source: Optional file name used in diagnostics

    Returns:
        RunConfig: Validated configuration

    Raises:
        ConfigError: With the offending key and 1-based line number
    """
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";")
    )
    lines = text.splitlines()
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("entry before any [section] header", line=e.lineno)
    except configparser.DuplicateOptionError as e:
        raise ConfigError("duplicate key", key=e.option, line=e.lineno)
    except configparser.DuplicateSectionError as e:
        raise ConfigError("duplicate section", key=e.section, line=e.lineno)
    except configparser.ParsingError as e:
        line = e.errors[0][0] if e.errors else None
        raise ConfigError("malformed line", line=line)

    values: Dict[str, Dict[str, Any]] = {}
    for section in parser.sections():
        if section not in RUN_SCHEMA:
            raise ConfigError(
                f"unknown section [{section}]", key=section, line=_locate(lines, section, None)
            )
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in RUN_SCHEMA[section]:
                raise ConfigError(
                    f"unknown key in [{section}]", key=key, line=_locate(lines, section, key)
                )
            convert, _ = RUN_SCHEMA[section][key]
            try:
                values[section][key] = convert(raw.strip())
            except ValueError:
                raise ConfigError(
                    f"cannot parse value {raw.strip()!r}",
                    key=key,
                    line=_locate(lines, section, key),
                )
    try:
        return RunConfig(values=values, source=source)
    except ConfigError as e:
        if e.line is None and e.key is not None:
            for section in values:
                line = _locate(lines, section, e.key)
                if line is not None:
                    raise ConfigError(str(e).split("] ", 1)[-1], key=e.key, line=line)
        raise


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Load a configuration file, or the defaults when no path is given"""
    if path is None:
        return RunConfig()
    file_path = Path(path)
    if not file_path.exists():
        raise ConfigError(f"configuration file not found: {file_path}")
    return parse_run_config(file_path.read_text(encoding="utf-8"), source=str(file_path))
