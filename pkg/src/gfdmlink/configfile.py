"""Flat key=value campaign configuration files with command-line overrides.

Example::

    # system
    K = 16
    M = 4
    U = 2
    K_D = 14
    L = 3
    L_cp = 4
    N_r = 4
    N_s = 200
    # campaign
    assignment = contiguous-block
    snr_db_list = 10, 20, 30
    trials = 50
    master_seed = 7
    crlb = true

Explicit assignments use one key per (user, subsymbol): ``set_1_1 = 2, 3, 4``.
"""

from __future__ import annotations

import re

from .errors import ConfigurationError
from .harness import CampaignConfig, default_system
from .waveform import SystemConfig

_INT_KEYS = {"K", "M", "U", "K_D", "L", "L_cp", "N_r", "N_s", "P_pil",
             "trials", "master_seed", "workers"}
_FLOAT_KEYS = {"rolloff", "delta", "cfo_max", "eps_min", "eps_max",
               "theta_min_deg", "theta_max_deg", "outage_threshold", "rms_delay"}
_BOOL_KEYS = {"crlb", "timing_in_csv"}
_STR_KEYS = {"prototype", "assignment"}
_FLOAT_LIST_KEYS = {"snr_db_list"}
_STR_LIST_KEYS = {"modes"}
_SET_KEY = re.compile(r"^set_(\d+)_(\d+)$")

_SYSTEM_KEYS = {"K", "M", "U", "K_D", "L", "L_cp", "N_r", "N_s",
                "rolloff", "P_pil", "delta", "prototype"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if key in _STR_KEYS:
            return raw
        if key in _FLOAT_LIST_KEYS:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if key in _STR_LIST_KEYS:
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        if _SET_KEY.match(key):
            return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key!r}: {exc}") from exc
    raise ConfigurationError(f"unknown configuration key {key!r}")


def parse_config_text(text: str) -> dict:
    """Parse 'key = value' lines; '#' starts a comment; unknown keys are an error."""
    flat: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key in flat:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        flat[key] = _parse_value(key, raw)
    return flat


def load_config_file(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def apply_overrides(flat: dict, overrides) -> dict:
    """Apply repeated 'key=value' CLI overrides on top of the parsed file."""
    merged = dict(flat)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        merged[key.strip()] = _parse_value(key.strip(), raw)
    return merged


def _collect_explicit_sets(flat: dict, U: int, M: int):
    found = {}
    for key, value in flat.items():
        match = _SET_KEY.match(key)
        if match:
            found[(int(match.group(1)), int(match.group(2)))] = value
    if not found:
        return None
    sets = []
    for u in range(1, U + 1):
        rows = []
        for m in range(1, M + 1):
            if (u, m) not in found:
                raise ConfigurationError(f"explicit assignment misses set_{u}_{m}")
            rows.append(tuple(found[(u, m)]))
        sets.append(tuple(rows))
    extra = set(found) - {(u, m) for u in range(1, U + 1) for m in range(1, M + 1)}
    if extra:
        raise ConfigurationError(f"explicit assignment has out-of-range keys: {sorted(extra)}")
    return tuple(sets)


def build_campaign_config(flat: dict) -> CampaignConfig:
    """Assemble a CampaignConfig from a flat mapping, defaulting unset keys."""
    defaults = default_system()
    system_kwargs = {}
    for key in _SYSTEM_KEYS:
        system_kwargs[key] = flat.get(key, getattr(defaults, key))
    system = SystemConfig(**system_kwargs)
    explicit = _collect_explicit_sets(flat, system.U, system.M)
    assignment = flat.get("assignment", "explicit" if explicit else "contiguous-block")
    if explicit is not None and assignment != "explicit":
        raise ConfigurationError(
            f"set_<u>_<m> keys conflict with assignment = {assignment!r}"
        )
    kwargs = dict(
        system=system,
        snr_db_list=tuple(flat.get("snr_db_list", (10.0, 20.0, 30.0))),
        trials=flat.get("trials", 50),
        master_seed=flat.get("master_seed", 1),
        assignment=assignment,
        explicit_sets=explicit,
        cfo_max=flat.get("cfo_max", 0.5),
        eps_range=(flat.get("eps_min", 0.8), flat.get("eps_max", 1.2)),
        theta_range_deg=(flat.get("theta_min_deg", -15.0), flat.get("theta_max_deg", 15.0)),
        outage_threshold=flat.get("outage_threshold", 0.01),
        modes=tuple(flat.get("modes", ("jcciqe", "genie"))),
        crlb=flat.get("crlb", False),
        rms_delay=flat.get("rms_delay", 1.5),
        timing_in_csv=flat.get("timing_in_csv", False),
        workers=flat.get("workers", 1),
    )
    return CampaignConfig(**kwargs)
