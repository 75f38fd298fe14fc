"""Checkpoint save/load for :class:`NetState`.

The run configuration travels inside the checkpoint as a ``meta.config``
tensor holding the UTF-8 bytes of its TOML text, one byte per element.
"""

import numpy as np

from ..autodiff import load_tensors, save_tensors
from ..errors import StructuralError
from .config import parse_config
from .model import load_state

CONFIG_KEY = "meta.config"


def save_checkpoint(path, state, config_text=None, include_optimizer=True):
    tensors = dict(state.arrays())
    if include_optimizer:
        tensors.update(state.opt)
    if config_text is not None:
        tensors[CONFIG_KEY] = np.frombuffer(config_text.encode("utf-8"), dtype=np.uint8).astype(np.float64)
    save_tensors(path, tensors)


def load_checkpoint(path, cfg=None):
    """Rebuild a state; without ``cfg`` the embedded configuration is used."""
    tensors = load_tensors(path)
    if cfg is None:
        if CONFIG_KEY not in tensors:
            raise StructuralError(f"{path}: checkpoint carries no configuration; pass one explicitly")
        cfg = parse_config(config_text(tensors)).net
    return load_state(cfg, tensors)


def config_text(tensors):
    raw = np.asarray(tensors[CONFIG_KEY])
    return raw.astype(np.uint8).tobytes().decode("utf-8")
