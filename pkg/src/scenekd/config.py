"""TOML run configuration and device-generalization presets.

A config file may carry ``[model]``, ``[train]``, ``[augment]``,
``[distill]``, ``[data]`` and ``[matrix]`` tables; each maps 1:1 onto the
corresponding dataclass fields. Augmentation strengths usually come from a
named preset rather than raw numbers:

    preset    teachers              students
    dirfms    a=0.3 pf=0.8 pd=0.4   a=0.3 pf=0.4 pd=0.6
    fms       same, p_dir = 0       same, p_dir = 0
    dir       same, p_fms = 0       same, p_fms = 0
    noaug     both probabilities 0  both probabilities 0
"""

from __future__ import annotations

import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DG_PRESETS = ("dirfms", "fms", "dir", "noaug")
_ROLE_BASE = {
    "teacher": (0.3, 0.8, 0.4),
    "student": (0.3, 0.4, 0.6),
}


def dg_params(preset, role):
    """Resolve a preset name to (alpha_fms, p_fms, p_dir) for a role."""
    if preset not in DG_PRESETS:
        raise ValueError(f"unknown preset {preset!r} (choose from {DG_PRESETS})")
    if role not in _ROLE_BASE:
        raise ValueError(f"unknown role {role!r} (use 'teacher' or 'student')")
    alpha, p_fms, p_dir = _ROLE_BASE[role]
    if preset in ("dir", "noaug"):
        p_fms = 0.0
    if preset in ("fms", "noaug"):
        p_dir = 0.0
    return alpha, p_fms, p_dir


def load_config(path):
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def apply_table(obj, table, context):
    """Overwrite dataclass fields from a TOML table; unknown keys error."""
    for key, value in table.items():
        if not hasattr(obj, key):
            raise ValueError(f"unknown key {key!r} in [{context}]")
        setattr(obj, key, value)
    return obj
