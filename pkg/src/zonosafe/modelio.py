"""Model bundle and its versioned JSON serialization (zonosafe-model-v1).

The bundle is everything the controller and analytics need: encoder/decoder
networks, teacher head, latent dynamics, fitted barrier heads with their
error bounds, the conjugacy gap, and a metadata block recording fit quality
and the probe targets for reproducibility.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .certificates import HEAD_NAMES, BarrierHead
from .latentmodel import ErrorBounds, LatentDynamics
from .setnn import DENSE, TANH, Layer, Mlp, make_mlp

FORMAT_TAG = "zonosafe-model-v1"


@dataclass(frozen=True, eq=False)
class LatentSafetyModel:
    encoder: Mlp
    decoder: Mlp
    teacher_w: np.ndarray
    teacher_b: np.ndarray
    dynamics: LatentDynamics
    heads: tuple[BarrierHead, ...]
    bounds: ErrorBounds
    meta: dict

    def head(self, name: str) -> BarrierHead:
        for head in self.heads:
            if head.name == name:
                return head
        raise KeyError(name)


def _net_to_obj(net: Mlp) -> list:
    layers = []
    for layer in net.layers:
        if layer.kind == DENSE:
            layers.append({"kind": DENSE, "w": layer.w.tolist(), "b": layer.b.tolist()})
        else:
            layers.append({"kind": TANH})
    return layers


def _net_from_obj(obj) -> Mlp:
    layers = []
    for entry in obj:
        if entry["kind"] == DENSE:
            layers.append(Layer(DENSE, np.asarray(entry["w"]), np.asarray(entry["b"])))
        else:
            layers.append(Layer(TANH))
    return make_mlp(layers)


def model_to_obj(model: LatentSafetyModel) -> dict:
    return {
        "format": FORMAT_TAG,
        "encoder": _net_to_obj(model.encoder),
        "decoder": _net_to_obj(model.decoder),
        "teacher": {"w": model.teacher_w.tolist(), "b": model.teacher_b.tolist()},
        "dynamics": {"a": model.dynamics.a.tolist(), "b": model.dynamics.b.tolist()},
        "heads": [
            {
                "name": head.name,
                "w": head.w.tolist(),
                "b": head.b,
                "eps_dir": head.eps_dir,
                "eps_box": head.eps_box,
                "lipschitz": head.lipschitz,
            }
            for head in model.heads
        ],
        "bounds": {
            "eps_dir": model.bounds.eps_dir,
            "eps_box": model.bounds.eps_box,
            "eps_conj": model.bounds.eps_conj,
        },
        "meta": model.meta,
    }


def model_from_obj(obj) -> LatentSafetyModel:
    if obj.get("format") != FORMAT_TAG:
        raise ValueError(f"unsupported model format {obj.get('format')!r}")
    heads = tuple(
        BarrierHead(h["name"], np.asarray(h["w"]), float(h["b"]),
                    eps_dir=float(h["eps_dir"]), eps_box=float(h["eps_box"]))
        for h in obj["heads"]
    )
    names = tuple(h.name for h in heads)
    if set(names) != set(HEAD_NAMES):
        raise ValueError(f"expected heads {HEAD_NAMES}, got {names}")
    bounds = ErrorBounds(
        eps_dir={k: float(v) for k, v in obj["bounds"]["eps_dir"].items()},
        eps_box={k: float(v) for k, v in obj["bounds"]["eps_box"].items()},
        eps_conj=float(obj["bounds"]["eps_conj"]),
    )
    return LatentSafetyModel(
        encoder=_net_from_obj(obj["encoder"]),
        decoder=_net_from_obj(obj["decoder"]),
        teacher_w=np.asarray(obj["teacher"]["w"], dtype=np.float64),
        teacher_b=np.asarray(obj["teacher"]["b"], dtype=np.float64),
        dynamics=LatentDynamics(np.asarray(obj["dynamics"]["a"]),
                                np.asarray(obj["dynamics"]["b"])),
        heads=heads,
        bounds=bounds,
        meta=obj.get("meta", {}),
    )


def save_model(model: LatentSafetyModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_obj(model), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path) -> LatentSafetyModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_obj(json.load(fh))
