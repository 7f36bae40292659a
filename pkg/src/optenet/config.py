"""Run configuration: a JSON file with documented fields and defaults.

Minimal example::

    {"family": {"generator": "trap"}, "K": 200}

Fields
------
family        ``{"path": FILE}`` or ``{"generator": NAME, "S", "A", "O", "H",
              "candidates", "seed"}``
K             number of iterations (required, >= 1)
delta         failure probability for the default confidence level (0.05)
beta          confidence level override; ``null`` uses the guarantee's formula
seeds         list of run seeds ([0])
out           output directory ("results")
solver        "exact" or "stochastic"
kernel        triple kernel, "delta" or "rbf"; ``kernel_bandwidth`` for rbf
plan_budget   planning node budget (1e6)
check_decomposition   verify the regret decomposition each iteration (true)
solver_iterations, solver_batch, eta, n_dual   stochastic solver settings
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .zoo import GENERATORS


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    family: dict
    K: int
    delta: float = 0.05
    beta: float | None = None
    seeds: list = field(default_factory=lambda: [0])
    out: str = "results"
    solver: str = "exact"
    kernel: str = "delta"
    kernel_bandwidth: float = 1.0
    plan_budget: int = 10**6
    check_decomposition: bool = True
    solver_iterations: int = 5
    solver_batch: int = 32
    eta: float = 1e-2
    n_dual: int = 50

    def validate(self) -> "RunConfig":
        fam = self.family
        if not isinstance(fam, dict) or ("path" in fam) == ("generator" in fam):
            raise ConfigError("family: give exactly one of 'path' or 'generator'")
        if "generator" in fam and fam["generator"] not in GENERATORS:
            raise ConfigError(f"family.generator: unknown {fam['generator']!r}")
        if not isinstance(self.K, int) or isinstance(self.K, bool) or self.K < 1:
            raise ConfigError(f"K: must be a positive integer, got {self.K!r}")
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta: must lie in (0, 1), got {self.delta!r}")
        if self.beta is not None and not self.beta > 0:
            raise ConfigError(f"beta: must be positive, got {self.beta!r}")
        if not self.seeds or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise ConfigError("seeds: need a nonempty list of nonnegative integers")
        if self.solver not in ("exact", "stochastic"):
            raise ConfigError(f"solver: must be 'exact' or 'stochastic', got {self.solver!r}")
        if self.kernel not in ("delta", "rbf"):
            raise ConfigError(f"kernel: must be 'delta' or 'rbf', got {self.kernel!r}")
        if self.plan_budget < 1:
            raise ConfigError("plan_budget: must be positive")
        for name in ("solver_iterations", "solver_batch", "n_dual"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be positive")
        if self.eta < 0:
            raise ConfigError("eta: must be nonnegative")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def describe(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_FIELDS = {f.name for f in fields(RunConfig)}


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(sorted(unknown))}")
    for req in ("family", "K"):
        if req not in d:
            raise ConfigError(f"{req}: required field missing")
    try:
        cfg = RunConfig(**d)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    return cfg.validate()


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return config_from_dict(raw)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
