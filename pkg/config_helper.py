"""
Config Helper - Run configuration files
Sectioned JSON run configs merged over config.py defaults; explicit CLI flags win
"""

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import config
from netcore import BoundarySpec
from network_generator import GeneratorConfig, PropertyConfig
from time_solver import LinearSolverConfig, TimeGrid


def _defaults():
    return {
        "network": {
            "path": None,
            "family": None,
            "dims": None,
            "dim": None,
            "box": None,
            "seed": None,
            "removal_prob": config.REMOVAL_PROB,
            "knn": config.KNN,
        },
        "properties": {
            "mode": "poiseuille_random",
            "d_min": config.DIAMETER_MIN,
            "d_max": config.DIAMETER_MAX,
            "throat_rule": "random_uniform",
            "viscosity": config.VISCOSITY,
            "contrast_boxes": [],
            "d_in": 10.0,
            "d_out": 1.0,
            "field_path": None,
            "field_mode": "both",
        },
        "boundary": {"dirichlet": dict(config.DIRICHLET)},
        "time": {"final_time": config.FINAL_TIME, "n_steps": config.N_STEPS, "tau": None, "save_every": None},
        "coarse": {
            "cells": config.COARSE_CELLS,
            "delta_factor": config.FLOW_LAYER_FACTOR,
            "weighted_averages": True,
        },
        "basis": {"count": config.BASIS_COUNT, "overrides": {}, "full_eigenbasis": False},
        "solver": {"method": config.SOLVER_METHOD, "rtol": config.SOLVER_RTOL, "max_iter": config.SOLVER_MAX_ITER},
        "output": {"directory": "runs"},
    }


SECTIONS = tuple(_defaults())


@dataclass
class RunConfig:
    """All settings of one pipeline run, grouped by section"""

    sections: dict = field(default_factory=_defaults)

    def __getitem__(self, section):
        return self.sections[section]

    def time_grid(self):
        t = self["time"]
        if t["tau"] is not None:
            return TimeGrid(float(t["tau"]), int(t["n_steps"]))
        return TimeGrid.from_final_time(float(t["final_time"]), int(t["n_steps"]))

    def solver_config(self):
        s = self["solver"]
        return LinearSolverConfig(s["method"], float(s["rtol"]), int(s["max_iter"]))

    def boundary_spec(self):
        return BoundarySpec({name: float(g) for name, g in self["boundary"]["dirichlet"].items()})

    def generator_config(self):
        n = self["network"]
        return GeneratorConfig(
            family=n["family"],
            dims=tuple(int(d) for d in n["dims"]),
            seed=int(n["seed"]),
            dim=n["dim"],
            box=None if n["box"] is None else tuple(float(b) for b in n["box"]),
            removal_prob=float(n["removal_prob"]),
            knn=int(n["knn"]),
        )

    def property_config(self):
        """None for unit coefficients (c = w = 1)"""
        p = self["properties"]
        if p["mode"] == "unit":
            return None
        return PropertyConfig(
            mode=p["mode"],
            d_min=float(p["d_min"]),
            d_max=float(p["d_max"]),
            throat_rule=p["throat_rule"],
            viscosity=float(p["viscosity"]),
            contrast_boxes=tuple(tuple(map(tuple, b)) for b in p["contrast_boxes"]),
            d_in=float(p["d_in"]),
            d_out=float(p["d_out"]),
            field_path=p["field_path"],
            field_mode=p["field_mode"],
            seed=int(self["network"]["seed"] or 0),
        )

    def basis_overrides(self):
        return {int(k): int(v) for k, v in self["basis"]["overrides"].items()}

    def validate(self, network_dim=None, generating=False):
        """Check cross-section consistency; raises ValueError naming the offending key"""
        network, time, basis = self["network"], self["time"], self["basis"]
        if generating:
            if network["seed"] is None:
                raise ValueError("network.seed is required for generation (pass --seed)")
            if network["family"] is None or network["dims"] is None:
                raise ValueError("network.family and network.dims are required for generation")
        if int(time["n_steps"]) < 1:
            raise ValueError(f"time.n_steps must be at least 1, got {time['n_steps']}")
        if time["tau"] is not None and float(time["tau"]) <= 0:
            raise ValueError(f"time.tau must be positive, got {time['tau']}")
        if time["tau"] is None and float(time["final_time"]) <= 0:
            raise ValueError(f"time.final_time must be positive, got {time['final_time']}")
        if int(basis["count"]) < 1:
            raise ValueError(f"basis.count must be at least 1, got {basis['count']}")
        if any(int(v) < 1 for v in basis["overrides"].values()):
            raise ValueError("basis.overrides values must be at least 1")
        cells = self["coarse"]["cells"]
        if network_dim is not None and isinstance(cells, (list, tuple)) and len(cells) != network_dim:
            raise ValueError(f"coarse.cells has {len(cells)} entries for a {network_dim}D network")
        self.solver_config()
        return self


def preset_settings(name):
    """Dotted settings of a named preset from config.PRESETS"""
    try:
        return config.PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset '{name}' (known: {', '.join(config.PRESETS)})") from None


def load_run_config(path=None, preset=None):
    """
    Defaults from config.py, then a named preset, then the sections of a JSON run-config file.

    The file may name its own preset under a top-level "preset" key; an explicit `preset`
    argument replaces it.
    """
    data = {}
    if path is not None:
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path} line {e.lineno}: {e.msg}") from e
        if not isinstance(data, dict):
            raise ValueError(f"{path}: expected an object of sections")
        data = dict(data)
        file_preset = data.pop("preset", None)
        preset = preset or file_preset

    cfg = RunConfig()
    if preset is not None:
        cfg = apply_overrides(cfg, copy.deepcopy(preset_settings(preset)))
    for section, values in data.items():
        if section not in cfg.sections:
            raise ValueError(f"{path}: unknown section '{section}' (known: {', '.join(SECTIONS)})")
        for key, value in values.items():
            if key not in cfg.sections[section]:
                raise ValueError(f"{path}: unknown key '{section}.{key}'")
            cfg.sections[section][key] = value
    return cfg


def apply_overrides(cfg, overrides):
    """Copy of cfg with {'section.key': value} applied; None values leave the setting untouched"""
    merged = RunConfig(copy.deepcopy(cfg.sections))
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        if key not in merged.sections.get(section, {}):
            raise ValueError(f"unknown setting '{dotted}'")
        merged.sections[section][key] = value
    return merged


if __name__ == "__main__":
    print(json.dumps(_defaults(), indent=2))
    print(f"Presets: {', '.join(config.PRESETS)}")
