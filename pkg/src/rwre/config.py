"""Model configuration files.

Models are described in TOML under a single ``[model]`` table::

    [model]
    parameterization = "two_state_chain"   # or iid_two_values,
                                           # dna_unzipping, free_entries
    support = [0.4, 0.8]                   # state values (presets: a1, a2)
    epsilon = 0.05                         # ellipticity margin
    a0 = 0.4                               # optional conditioning state,
                                           # default: smallest

    [model.bounds]                         # parameter box; scalars broadcast
    lower = [0.05, 0.05]
    upper = [0.95, 0.95]

    [model.constants]                      # dna_unzipping: beta, g1
    beta = 1.0
    g1 = 2.0

    [model.mask]                           # free_entries only, optional
    rows = [[1, 1], [1, 1]]

``free_entries`` parameterizes a custom finite kernel by its structurally
nonzero entries (row-major over the mask) with rows renormalized at
evaluation time.  Parse and schema errors always name the file and the
offending key.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import env

__all__ = ["ConfigError", "ModelConfig", "load_model", "parse_model", "load_toml"]

_PARAMETERIZATIONS = ("iid_two_values", "two_state_chain", "dna_unzipping", "free_entries")


class ConfigError(ValueError):
    """A configuration file failed to parse or validate."""


@dataclass(frozen=True)
class ModelConfig:
    """A parameter space plus the conditioning-state convention."""

    space: env.ParamSpace
    a0_index: int
    epsilon: float


def load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file")
    except tomllib.TOMLDecodeError as exc:
        # tomllib reports the line and column in its message.
        raise ConfigError(f"{path}: {exc}") from exc


def _need(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"{where}: missing required key '{key}'")
    return table[key]


def _floats(value, where: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number or list of numbers")
    return np.atleast_1d(arr)


def _bounds(table: dict, dim: int, where: str):
    bounds = table.get("bounds")
    if bounds is None:
        return None
    lower = _floats(_need(bounds, "lower", f"{where}.bounds"), f"{where}.bounds.lower")
    upper = _floats(_need(bounds, "upper", f"{where}.bounds"), f"{where}.bounds.upper")
    if lower.size == 1:
        lower = np.full(dim, lower[0])
    if upper.size == 1:
        upper = np.full(dim, upper[0])
    if lower.size != dim or upper.size != dim:
        raise ConfigError(f"{where}.bounds: expected {dim} entries per side")
    return lower, upper


def parse_model(table: dict, source: str = "<config>") -> ModelConfig:
    """Build the parameter space described by a ``[model]`` table."""
    where = f"{source}: model"
    if not isinstance(table, dict):
        raise ConfigError(f"{where}: expected a table")
    kind = _need(table, "parameterization", where)
    if kind not in _PARAMETERIZATIONS:
        raise ConfigError(
            f"{where}.parameterization: '{kind}' is not one of {', '.join(_PARAMETERIZATIONS)}"
        )
    epsilon = float(table.get("epsilon", env.DEFAULT_EPSILON))

    try:
        if kind == "iid_two_values":
            support = _floats(_need(table, "support", where), f"{where}.support")
            if support.size != 2:
                raise ConfigError(f"{where}.support: expected exactly two state values")
            bounds = _bounds(table, 1, where) or (np.array([0.05]), np.array([0.95]))
            space = env.preset_iid_two_values(
                support[0], support[1], (float(bounds[0][0]), float(bounds[1][0])), epsilon
            )
        elif kind == "two_state_chain":
            support = _floats(_need(table, "support", where), f"{where}.support")
            if support.size != 2:
                raise ConfigError(f"{where}.support: expected exactly two state values")
            bounds = _bounds(table, 2, where) or (np.full(2, 0.05), np.full(2, 0.95))
            space = env.preset_two_state_chain(support[0], support[1], bounds, epsilon)
        elif kind == "dna_unzipping":
            constants = table.get("constants", {})
            beta = float(_need(constants, "beta", f"{where}.constants"))
            g1 = float(_need(constants, "g1", f"{where}.constants"))
            raw = table.get("bounds", {})
            lo = float(np.atleast_1d(raw.get("lower", 0.05))[0])
            hi = float(np.atleast_1d(raw.get("upper", 0.95))[0])
            space = env.preset_dna_unzipping(beta, g1, (lo, hi), epsilon)
        else:
            support_values = _floats(_need(table, "support", where), f"{where}.support")
            support = env.Support(values=support_values, epsilon=epsilon)
            mask_table = table.get("mask")
            if mask_table is None:
                mask = np.ones((support.size, support.size), dtype=bool)
            else:
                mask = np.asarray(_need(mask_table, "rows", f"{where}.mask"), dtype=bool)
            dim = int(mask.sum())
            bounds = _bounds(table, dim, where) or (np.full(dim, 0.05), np.full(dim, 0.95))
            lo, hi = float(bounds[0][0]), float(bounds[1][0])
            if np.any(bounds[0] != lo) or np.any(bounds[1] != hi):
                raise ConfigError(
                    f"{where}.bounds: free-entry bounds must be uniform across entries"
                )
            space = env.free_entries_space(support, mask, (lo, hi))
    except ConfigError:
        raise
    except (ValueError, env.ModelInvalidError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc

    a0_index = 0
    if "a0" in table:
        try:
            a0_index = space.support.index_of(float(table["a0"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.a0: {exc}") from exc
    return ModelConfig(space=space, a0_index=a0_index, epsilon=epsilon)


def load_model(path: str) -> ModelConfig:
    """Load a model configuration from a TOML file."""
    data = load_toml(path)
    if "model" not in data:
        raise ConfigError(f"{path}: missing [model] table")
    return parse_model(data["model"], source=path)
