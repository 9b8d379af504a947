"""Assemble/restore full training state from checkpoint containers.

A checkpoint fully determines the run: backbone config, packing descriptor,
target kind, adapter hyperparameters, every tensor (base + adapters), and
optionally optimizer moments and the RNG seed, so training and inference
never guess shapes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import BackboneConfig, VelocityBackbone
from .codec import PackingDescriptor
from .errors import DataError
from .lora import LoraLinear, apply_lora
from .numcore import OptimizerState, Tensor, checkpoint


@dataclass
class ModelState:
    model: VelocityBackbone
    adapters: dict[str, LoraLinear]
    desc: PackingDescriptor
    target: str                       # "depth" | "normal"
    lora_rank: int
    lora_alpha: float
    step: int = 0
    seed: int = 0


def _meta(state: ModelState) -> dict:
    return {
        "backbone": state.model.config.to_dict(),
        "packing": state.desc.to_dict(),
        "target": state.target,
        "lora": {"rank": state.lora_rank, "alpha": state.lora_alpha,
                 "targets": sorted(state.adapters)},
        "seed": state.seed,
    }


def save_model(path: str, state: ModelState,
               optimizer: OptimizerState | None = None) -> None:
    tensors: dict[str, np.ndarray] = {"meta.json": checkpoint.pack_json(_meta(state))}
    for name, p in state.model.param_dict().items():
        tensors[f"param/{name}"] = p.data
    if optimizer is not None:
        opt_meta = {"lr": optimizer.lr, "beta1": optimizer.beta1,
                    "beta2": optimizer.beta2, "eps": optimizer.eps,
                    "weight_decay": optimizer.weight_decay, "step": optimizer.step}
        tensors["opt.json"] = checkpoint.pack_json(opt_meta)
        for name, m in optimizer.m.items():
            tensors[f"opt/m/{name}"] = m
        for name, v in optimizer.v.items():
            tensors[f"opt/v/{name}"] = v
    checkpoint.save(path, tensors, step=state.step)


def load_model(path: str) -> tuple[ModelState, OptimizerState | None]:
    tensors, step = checkpoint.load(path)
    if "meta.json" not in tensors:
        raise DataError(f"{path}: checkpoint carries no meta.json entry")
    meta = checkpoint.unpack_json(tensors["meta.json"])
    if "lora" not in meta:
        raise DataError(f"{path}: not an adapter checkpoint (merged or foreign)")
    config = BackboneConfig.from_dict(meta["backbone"])
    model = VelocityBackbone(config, seed=meta.get("seed", 0))
    lora_cfg = meta["lora"]
    kinds = tuple(sorted({_target_kind(t) for t in lora_cfg["targets"]}))
    adapters = apply_lora(model, rank=lora_cfg["rank"], alpha=lora_cfg["alpha"],
                          seed=meta.get("seed", 0), targets=kinds)
    params = model.param_dict()
    for name, p in params.items():
        key = f"param/{name}"
        if key not in tensors:
            raise DataError(f"{path}: missing tensor {key}")
        if tuple(tensors[key].shape) != p.shape:
            raise DataError(f"{path}: shape mismatch for {key}: "
                            f"{tensors[key].shape} vs {p.shape}")
        p.data = tensors[key].astype(np.float32)
    state = ModelState(model=model, adapters=adapters,
                       desc=PackingDescriptor.from_dict(meta["packing"]),
                       target=meta["target"], lora_rank=lora_cfg["rank"],
                       lora_alpha=lora_cfg["alpha"], step=step,
                       seed=meta.get("seed", 0))
    opt = None
    if "opt.json" in tensors:
        om = checkpoint.unpack_json(tensors["opt.json"])
        opt = OptimizerState(lr=om["lr"], beta1=om["beta1"], beta2=om["beta2"],
                             eps=om["eps"], weight_decay=om["weight_decay"],
                             step=om["step"])
        for key, arr in tensors.items():
            if key.startswith("opt/m/"):
                opt.m[key[len("opt/m/"):]] = arr.astype(np.float32)
            elif key.startswith("opt/v/"):
                opt.v[key[len("opt/v/"):]] = arr.astype(np.float32)
    return state, opt


def _target_kind(full_name: str) -> str:
    # "block3.attn.wq" -> "wq", "block3.mlp.w1" -> "mlp.w1", "head" -> "head"
    if full_name == "head":
        return "head"
    parts = full_name.split(".")
    if parts[1] == "attn":
        return parts[2]
    return f"{parts[1]}.{parts[2]}"


def save_merged(path: str, state: ModelState) -> None:
    """Write a standalone checkpoint with adapters folded into the base."""
    from .lora import merge_lora
    merge_lora(state.model)
    meta = {"backbone": state.model.config.to_dict(), "packing": state.desc.to_dict(),
            "target": state.target, "merged": True, "seed": state.seed}
    tensors: dict[str, np.ndarray] = {"meta.json": checkpoint.pack_json(meta)}
    for name, p in state.model.param_dict().items():
        tensors[f"param/{name}"] = p.data
    checkpoint.save(path, tensors, step=state.step)


def load_merged(path: str) -> tuple[VelocityBackbone, PackingDescriptor, str, int]:
    tensors, step = checkpoint.load(path)
    meta = checkpoint.unpack_json(tensors["meta.json"])
    if not meta.get("merged"):
        raise DataError(f"{path}: not a merged checkpoint")
    model = VelocityBackbone(BackboneConfig.from_dict(meta["backbone"]),
                             seed=meta.get("seed", 0))
    for name, p in model.param_dict().items():
        p.data = tensors[f"param/{name}"].astype(np.float32)
        p.requires_grad = False
    return model, PackingDescriptor.from_dict(meta["packing"]), meta["target"], step
