"""The bundled three-tank reference plant."""
from __future__ import annotations

from functools import lru_cache
from importlib import resources

import yaml

from .plant import PlantModel, model_from_dict

# goals whose causes can be expressed with this plant's actuators
GOAL_NAMES = ("LIT101-High", "LIT301-High", "LIT401-High", "LIT301-Low", "LIT401-Low",
              "FIT101-High", "FIT201-Low", "FIT301-Low", "FIT401-Low", "DPIT301-Low")


def data_path(name: str):
    return resources.files("causalfuzz") / "data" / name


@lru_cache(maxsize=None)
def _load() -> dict:
    return yaml.safe_load(data_path("miniswat.yaml").read_text())


def load_miniswat() -> PlantModel:
    """A fresh, validated copy of the reference plant."""
    return model_from_dict(_load())
