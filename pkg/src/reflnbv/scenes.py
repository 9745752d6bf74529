"""Built-in object generators, material presets and ready-made experiment scenes."""

from __future__ import annotations

import copy

from . import mesh as meshlib
from .reflectance import DIN_CONNECTOR_METAL, MATTE, TUBE_FITTING, PhongMaterial

GENERATORS = {
    "plate": meshlib.plate,
    "sphere": meshlib.icosphere,
    "bent-plate": meshlib.bent_plate,
    "box": meshlib.box,
}

MATERIAL_PRESETS: dict[str, PhongMaterial] = {
    "tube-fitting": TUBE_FITTING,
    "din-connector": DIN_CONNECTOR_METAL,
    "matte": MATTE,
}

_BASE = {
    "materials": {"object": "tube-fitting"},
    "rig": {"width": 128, "height": 96, "fx": 200.0, "baseline": 60.0,
            "projector_intensity": 1.0, "ambient": 0.0},
    "reference": {"eye": [0.0, 0.0, 400.0], "target": [0.0, 0.0, 0.0], "up": [0.0, 1.0, 0.0]},
    "response": {"gamma": 2.2},
    "candidates": {"sphere": {"center": [0.0, 0.0, 0.0], "radius": 400.0, "count": 32,
                              "hemisphere": True}},
    "sensing": {"sigma": 100.0, "z_min_valid": 5.0, "z_max_valid": 255.0, "exposure_time": 16.0,
                "dropout": "stochastic", "threshold": 0.5, "depth_noise_std": 0.1},
    "hypotheses": {"K": 5, "rot_std_deg": 3.0, "trans_std_mm": 3.0, "sharpness": 0.5},
    "policy": "nbv",
    "stop": {"gain_threshold": 0.0, "max_views": 3},
    "seeds": [0],
    "output": "results",
}

_OBJECTS = {
    "plate": {"mesh": "plate", "params": {"width": 100.0, "height": 100.0, "divisions": 8},
              "pose": {"rotation_deg": [35.0, 0.0, 0.0], "translation": [0.0, 0.0, 0.0]}},
    "sphere": {"mesh": "sphere", "params": {"radius": 40.0, "subdivisions": 3},
               "pose": {"rotation_deg": [0.0, 0.0, 0.0], "translation": [0.0, 0.0, 0.0]}},
    "bent-plate": {"mesh": "bent-plate",
                   "params": {"width": 100.0, "length": 60.0, "dihedral_deg": 120.0, "divisions": 6},
                   "pose": {"rotation_deg": [20.0, 0.0, 0.0], "translation": [0.0, 0.0, 0.0]}},
}

PRESETS = tuple(_OBJECTS)


def preset_config(name: str) -> dict:
    """Raw configuration mapping of a built-in scene (tilted plate, sphere, bent plate)."""
    if name not in _OBJECTS:
        raise ValueError(f"unknown scene preset {name!r}; choose from {', '.join(PRESETS)}")
    cfg = copy.deepcopy(_BASE)
    obj = copy.deepcopy(_OBJECTS[name])
    obj["material"] = "object"
    cfg["scene"] = {"objects": [obj], "target": 0}
    return cfg
