"""MLP classifier with a classification head and a contrastive projector head."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from fairdd import autodiff as ad

PARAMS_FORMAT = "fairdd-params"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (32,)
    num_classes: int = 2
    projector_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.projector_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"all network dimensions must be >= 1: {self}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    def layer_shapes(self) -> list[tuple[str, int, int]]:
        """(name, fan_in, fan_out) for every linear layer, in parameter order."""
        shapes = []
        dims = [self.input_dim, *self.hidden_dims]
        for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
            shapes.append((f"encoder.{i}", fi, fo))
        feat = dims[-1]
        shapes.append(("classifier", feat, self.num_classes))
        shapes.append(("projector.0", feat, self.projector_dim))
        shapes.append(("projector.1", self.projector_dim, self.projector_dim))
        return shapes

    def parameter_count(self) -> int:
        return sum(fi * fo + fo for _, fi, fo in self.layer_shapes())


class Outputs(NamedTuple):
    logits: ad.Node
    probs: ad.Node
    embeddings: ad.Node


class Network:
    """Parameters live in ``self.params`` as ``{"<layer>.W": Node, "<layer>.b": Node}``."""

    def __init__(self, config: NetworkConfig, params: dict[str, ad.Node] | None = None):
        self.config = config
        if params is None:
            params = _init_params(config)
        self.params = params

    @classmethod
    def init(cls, config: NetworkConfig) -> "Network":
        return cls(config)

    def parameters(self) -> list[ad.Node]:
        return list(self.params.values())

    def named_parameters(self) -> list[tuple[str, ad.Node]]:
        return list(self.params.items())

    def _linear(self, name: str, x: ad.Node) -> ad.Node:
        return ad.add(ad.matmul(x, self.params[f"{name}.W"]), self.params[f"{name}.b"])

    def encode(self, x: ad.Node) -> ad.Node:
        h = x
        for i in range(len(self.config.hidden_dims)):
            h = ad.relu(self._linear(f"encoder.{i}", h))
        return h

    def forward(self, features) -> Outputs:
        x = ad.as_node(features)
        if x.value.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ad.ShapeError(
                f"expected features of shape (n, {self.config.input_dim}), got {x.shape}"
            )
        h = self.encode(x)
        logits = self._linear("classifier", h)
        p = ad.relu(self._linear("projector.0", h))
        z = ad.l2_normalize(self._linear("projector.1", p))
        return Outputs(logits, ad.softmax(logits), z)

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return self.forward(features).probs.value

    # teacher snapshots ---------------------------------------------------

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        if set(snap) != set(self.params):
            raise ValueError("snapshot layers do not match this network")
        for k, v in snap.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"snapshot shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].value = v.copy()

    def copy_into(self, other: "Network") -> None:
        if other.config.layer_shapes() != self.config.layer_shapes():
            raise ValueError("cannot copy between networks with different configs")
        other.restore(self.snapshot())

    def clone(self) -> "Network":
        return Network(self.config, {k: ad.parameter(v.value) for k, v in self.params.items()})

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k, v in self.params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v.value).tobytes())
        return h.hexdigest()

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["hidden_dims"] = list(cfg["hidden_dims"])
        return {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "config": cfg,
            "layers": [
                {"name": k, "shape": list(v.shape), "values": v.value.ravel().tolist()}
                for k, v in self.params.items()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        if data.get("format") != PARAMS_FORMAT or data.get("version") != PARAMS_VERSION:
            raise ValueError(
                f"unsupported parameter file (format={data.get('format')}, version={data.get('version')})"
            )
        net = cls(NetworkConfig(**data["config"]))
        net.restore(
            {
                layer["name"]: np.asarray(layer["values"], dtype=np.float64).reshape(layer["shape"])
                for layer in data["layers"]
            }
        )
        return net

    def save(self, path: str | Path) -> None:
        path = Path(path)
        if path.suffix == ".npz":
            cfg = json.dumps(self.to_dict()["config"])
            np.savez(path, __format__=PARAMS_FORMAT, __version__=PARAMS_VERSION,
                     __config__=cfg, **self.snapshot())
        else:
            path.write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Network":
        path = Path(path)
        if path.suffix == ".npz":
            with np.load(path) as f:
                if str(f["__format__"]) != PARAMS_FORMAT or int(f["__version__"]) != PARAMS_VERSION:
                    raise ValueError(f"unsupported parameter file {path}")
                net = cls(NetworkConfig(**json.loads(str(f["__config__"]))))
                net.restore({k: f[k] for k in f.files if not k.startswith("__")})
            return net
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _init_params(config: NetworkConfig) -> dict[str, ad.Node]:
    # Glorot-uniform; biases use the same per-layer range
    rng = np.random.default_rng(config.seed)
    params: dict[str, ad.Node] = {}
    for name, fi, fo in config.layer_shapes():
        s = np.sqrt(6.0 / (fi + fo))
        params[f"{name}.W"] = ad.parameter(rng.uniform(-s, s, size=(fi, fo)))
        params[f"{name}.b"] = ad.parameter(rng.uniform(-s, s, size=(1, fo)))
    return params
