"""
Layered run configuration.

Precedence, lowest to highest: field defaults, GBC_* environment variables
(a .env file in the working directory is loaded first), a KEY=VALUE config
file, explicit command-line flags. Keys are field names, case-insensitive.
"""

import logging
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from dotenv import dotenv_values, load_dotenv

from src.core import Hyperparameters
from src.errors import ConfigError
from src.logics.sampler import GibbsConfig
from src.simulation import SimulationConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "GBC_"

SWEEP_AXES = {
    "a_tau_mu0": (1.1, 2.0),
    "b_tau_mu0": (0.0005, 0.005),
    "a_tau_mu1": (1.5, 6.0),
    "b_tau_mu1": (50.0, 500.0),
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0

    # simulation
    n_subtypes: int = 3
    subjects_per_cluster_mean: float = 100.0
    n_modules: int = 20
    module_size_mean: float = 20.0
    n_confounders: int = 4
    modules_per_confounder: int = 20
    n_noise: int = 3000
    sigma0: float = 1.0
    sigma1: float = 3.0
    sigma2: float = 6.0
    sigma3: float = 1.0
    wishart_nu: float = 60.0
    wishart_phi_mix: float = 0.5

    # priors and sampler
    c: float = 1.0
    a_p: float = 1.0
    b_p: float = 1.0
    a_sigma: float = 0.001
    b_sigma: float = 0.001
    a_tau_mu0: float = 2.0
    b_tau_mu0: float = 0.005
    a_tau_mu1: float = 4.0
    b_tau_mu1: float = 450.0
    a_tau_u0: float = 0.001
    b_tau_u0: float = 0.001
    a_tau_u1: float = 0.001
    b_tau_u1: float = 0.001
    k: int = 3
    nt: int = 1000
    nb: int = 500
    thin: int = 1
    keep_draws: bool = False

    # guidance
    no_guidance: bool = False
    outcome_kind: str = "continuous"
    outcome_column: str = "outcome"
    time_column: str = "time"
    event_column: str = "event"
    guidance_statistic: str = "r2"
    filter_fraction: float = 0.0

    # decisions
    fdr: float = 0.001
    top_m: int = 0
    bic_penalty: str = "genes"
    k_min: int = 2
    k_max: int = 6

    # sweep and replicates
    sweep_axis: str = "a_tau_mu0"
    sweep_points: int = 10
    sweep_low: float = 0.0
    sweep_high: float = 0.0
    replicates: int = 10
    workers: int = 1

    # paths
    expression: str = ""
    clinical: str = ""
    guidance: str = ""
    truth: str = ""
    reference_labels: str = ""
    runs: str = ""
    output_dir: str = "output"

    @classmethod
    def field_names(cls):
        return tuple(f.name for f in fields(cls))

    @classmethod
    def _coerce(cls, name: str, value):
        field_type = {f.name: f.type for f in fields(cls)}[name]
        if not isinstance(value, str):
            return field_type(value)
        text = value.strip()
        try:
            if field_type is bool:
                lowered = text.lower()
                if lowered in ("1", "true", "yes", "on"):
                    return True
                if lowered in ("0", "false", "no", "off", ""):
                    return False
                raise ValueError(text)
            return field_type(text)
        except ValueError as exc:
            raise ConfigError(f"cannot parse '{value}' for config key '{name}'") from exc

    @classmethod
    def _normalize(cls, mapping: dict, source: str) -> dict:
        known = {name.lower(): name for name in cls.field_names()}
        resolved = {}
        for key, value in mapping.items():
            name = known.get(key.lower().replace("-", "_"))
            if name is None:
                raise ConfigError(f"unknown config key '{key}' in {source}")
            if value is None:
                continue
            resolved[name] = cls._coerce(name, value)
        return resolved

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls().with_file(path)

    def with_file(self, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return replace(self, **self._normalize(dotenv_values(path), str(path)))

    def with_environment(self, environ=None) -> "RunConfig":
        environ = os.environ if environ is None else environ
        found = {key[len(ENV_PREFIX):]: value for key, value in environ.items() if key.startswith(ENV_PREFIX)}
        return replace(self, **self._normalize(found, "environment"))

    def with_overrides(self, **overrides) -> "RunConfig":
        return replace(self, **self._normalize({k: v for k, v in overrides.items() if v is not None}, "overrides"))

    @classmethod
    def resolve(cls, config_path: Optional[str] = None, overrides: Optional[dict] = None,
                use_environment: bool = True) -> "RunConfig":
        config = cls()
        if use_environment:
            load_dotenv(Path.cwd() / ".env", override=False)
            config = config.with_environment()
        if config_path:
            config = config.with_file(config_path)
        return config.with_overrides(**(overrides or {}))

    def to_text(self) -> str:
        lines = []
        for name in sorted(self.field_names()):
            value = getattr(self, name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            elif isinstance(value, str):
                text = f"'{value}'"
            else:
                text = str(value)
            lines.append(f"{name}={text}")
        return "\n".join(lines) + "\n"

    def to_file(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    # typed views

    def hyperparameters(self) -> Hyperparameters:
        return Hyperparameters(
            c=self.c, a_p=self.a_p, b_p=self.b_p, a_sigma=self.a_sigma, b_sigma=self.b_sigma,
            a_tau_mu0=self.a_tau_mu0, b_tau_mu0=self.b_tau_mu0,
            a_tau_mu1=self.a_tau_mu1, b_tau_mu1=self.b_tau_mu1,
            a_tau_u0=self.a_tau_u0, b_tau_u0=self.b_tau_u0,
            a_tau_u1=self.a_tau_u1, b_tau_u1=self.b_tau_u1,
            K=self.k, N_T=self.nt, N_B=self.nb,
        )

    def gibbs_config(self, progress: bool = False) -> GibbsConfig:
        return GibbsConfig(
            hyper=self.hyperparameters(), seed=self.seed, guided=not self.no_guidance,
            thin=self.thin, keep_draws=self.keep_draws, progress=progress,
        )

    def simulation_config(self) -> SimulationConfig:
        return SimulationConfig(
            K=self.n_subtypes, subjects_per_cluster_mean=self.subjects_per_cluster_mean,
            M=self.n_modules, module_size_mean=self.module_size_mean,
            V=self.n_confounders, R=self.modules_per_confounder, n_noise=self.n_noise,
            sigma0=self.sigma0, sigma1=self.sigma1, sigma2=self.sigma2, sigma3=self.sigma3,
            wishart_nu=self.wishart_nu, wishart_phi_mix=self.wishart_phi_mix, seed=self.seed,
        )

    def selection_mode(self) -> dict:
        return {"top_m": self.top_m} if self.top_m > 0 else {"eta": self.fdr}

    def sweep_range(self):
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {sorted(SWEEP_AXES)}, got '{self.sweep_axis}'")
        low, high = SWEEP_AXES[self.sweep_axis]
        if self.sweep_low > 0 or self.sweep_high > 0:
            low, high = self.sweep_low, self.sweep_high
        if not 0 < low <= high:
            raise ConfigError(f"invalid sweep range ({low}, {high})")
        return low, high
