"""Experiment configuration: a declarative JSON tree.

Schema (top-level keys, all optional except seed and model):

    seed        master seed (int); every stage derives child streams from it
    outdir      output directory for `run`
    model       {"family": "product"|"delta"|"zero", "params": {...}}
    activation  "logistic4" | "clipid" | "const<c>"
    sde         {"sigma", "T", "m", "alpha", "init"}
    march       {"lattice", "q", "ensemble", "cf_mode", "quad_order", "runs"}
    ladder      {"n": [...], "weight_draws": int|[...], "noise_replicas": int}
    probes      {"lags": [...], "time_pairs": [[v, w], ...]}
    resolvent   {"tol", "max_order"}
    weights_n   half-size used by the single-artifact CLI commands

Unknown keys are rejected. `to_dict` emits the canonical tree; parsing it
back reproduces the config exactly (round-trip covered by tests).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import activation as act_mod
from .errors import ConfigError
from .lattice import TimeGrid
from .limit import MarchConfig
from .sde import SdeConfig
from .weights import CovarianceModel, model_by_family

_TOP_KEYS = {"seed", "outdir", "model", "activation", "sde", "march", "ladder",
             "probes", "resolvent", "weights_n"}


def _section(tree: dict, name: str, defaults: dict) -> dict:
    got = tree.get(name, {})
    if not isinstance(got, dict):
        raise ConfigError(f"section {name!r} must be an object")
    unknown = set(got) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    out = dict(defaults)
    out.update(got)
    return out


@dataclass
class RunConfig:
    seed: int
    model_family: str = "product"
    model_params: dict = field(default_factory=dict)
    activation: str = "logistic4"
    sde: dict = field(default_factory=dict)
    march: dict = field(default_factory=dict)
    ladder: dict = field(default_factory=dict)
    probes: dict = field(default_factory=dict)
    resolvent: dict = field(default_factory=dict)
    outdir: str = "out"
    weights_n: int | None = None

    @classmethod
    def from_dict(cls, tree: dict) -> "RunConfig":
        if "seed" not in tree:
            raise ConfigError("config needs a master 'seed'")
        unknown = set(tree) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        model = _section(tree, "model", {"family": "product", "params": {}})
        cfg = cls(
            seed=int(tree["seed"]),
            model_family=model["family"],
            model_params=dict(model["params"]),
            activation=tree.get("activation", "logistic4"),
            sde=_section(tree, "sde", {"sigma": 1.0, "T": 1.0, "m": 20, "alpha": 0.0, "init": 0.0}),
            march=_section(tree, "march", {"lattice": 33, "q": 8, "ensemble": 256,
                                           "cf_mode": "gaussian", "quad_order": 40, "runs": 2}),
            ladder=_section(tree, "ladder", {"n": [8, 16, 32], "weight_draws": 64, "noise_replicas": 16}),
            probes=_section(tree, "probes", {"lags": [0, 1, 2], "time_pairs": None}),
            resolvent=_section(tree, "resolvent", {"tol": 1e-8, "max_order": 200}),
            outdir=tree.get("outdir", "out"),
            weights_n=tree.get("weights_n"),
        )
        cfg._validate()
        return cfg

    def _validate(self):
        self.model()  # raises on unknown family / bad params
        self.f()
        self.grid()
        self.sde_config()
        self.march_config()
        if self.probes["time_pairs"] is None:
            m = int(self.sde["m"])
            self.probes["time_pairs"] = [[m, m], [m, 3 * m // 4], [m, m // 2], [3 * m // 4, 3 * m // 4]]
        m = int(self.sde["m"])
        for v, w in self.probes["time_pairs"]:
            if not (0 <= v <= m and 0 <= w <= m):
                raise ConfigError(f"probe time pair ({v},{w}) outside grid 0..{m}")
        if self.weights_n is None:
            self.weights_n = int(self.ladder["n"][0])
        draws = self.ladder["weight_draws"]
        if isinstance(draws, list) and len(draws) != len(self.ladder["n"]):
            raise ConfigError("weight_draws list must match the ladder length")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "outdir": self.outdir,
            "model": {"family": self.model_family, "params": self.model_params},
            "activation": self.activation,
            "sde": self.sde,
            "march": self.march,
            "ladder": self.ladder,
            "probes": self.probes,
            "resolvent": self.resolvent,
            "weights_n": self.weights_n,
        }

    # --- constructed objects -------------------------------------------------
    def model(self) -> CovarianceModel:
        return model_by_family(self.model_family, **self.model_params)

    def f(self):
        return act_mod.by_name(self.activation)

    def grid(self) -> TimeGrid:
        return TimeGrid(T=float(self.sde["T"]), m=int(self.sde["m"]))

    def sde_config(self) -> SdeConfig:
        return SdeConfig(sigma=float(self.sde["sigma"]), f=self.f(), grid=self.grid(),
                         alpha=float(self.sde["alpha"]), init=float(self.sde["init"]))

    def march_config(self, seed: int | None = None) -> MarchConfig:
        return MarchConfig(lattice=int(self.march["lattice"]), q=int(self.march["q"]),
                           grid=self.grid(), sigma=float(self.sde["sigma"]), f=self.f(),
                           ensemble=int(self.march["ensemble"]), cf_mode=self.march["cf_mode"],
                           seed=self.seed if seed is None else seed,
                           quad_order=int(self.march["quad_order"]))

    def probe_list(self) -> list[tuple]:
        return [(int(k), int(v), int(w)) for k in self.probes["lags"]
                for (v, w) in self.probes["time_pairs"]]

    def draws_for(self, idx: int) -> int:
        d = self.ladder["weight_draws"]
        return int(d[idx]) if isinstance(d, list) else int(d)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            tree = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return RunConfig.from_dict(tree)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=1) + "\n")


def config_hash(cfg: RunConfig) -> str:
    import hashlib

    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()
