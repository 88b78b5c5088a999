"""Binary model checkpoints.

Layout: the magic line ``REVSTEER-CKPT 1\n``, an unsigned little-endian 64-bit
header length, a UTF-8 JSON header, then the flat parameter vector as
little-endian float64.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import InvalidArgumentError
from ..sde_sim import TimeGrid
from .models import FeatureModel, MlpModel, ScoreModel

MAGIC = b"REVSTEER-CKPT 1\n"


def save_checkpoint(model: ScoreModel, path) -> None:
    header = dict(model.header())
    header["n_params"] = int(model.n_params)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.asarray(model.params, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise InvalidArgumentError(f"{path} is not a model checkpoint")
        (size,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(size).decode("utf-8"))
        params = np.frombuffer(fh.read(), dtype="<f8").astype(float)
    if params.size != header["n_params"]:
        raise InvalidArgumentError(f"{path}: expected {header['n_params']} parameters, found {params.size}")
    return header, params


def model_from_checkpoint(header: dict, params: np.ndarray) -> ScoreModel:
    kind = header.get("kind")
    if kind == "mlp":
        return MlpModel(header["n"], header["m"], header["T"], width=header["width"], blocks=header["blocks"],
                        seed=header["seed"], shift=header["shift"], scale=header["scale"], params=params)
    if kind == "feature":
        return FeatureModel(header["n"], header["m"], TimeGrid(header["T"], header["dt"]), params=params)
    raise InvalidArgumentError(f"checkpoint kind {kind!r} cannot be rebuilt from parameters alone")


def load_checkpoint(path) -> ScoreModel:
    return model_from_checkpoint(*read_checkpoint(path))
