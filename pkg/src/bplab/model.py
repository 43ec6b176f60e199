"""Full detector (backbone + boundary transformer) and its single-file checkpoint."""

from __future__ import annotations

import io
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbone import Backbone, FeatureMaps
from .config import RunConfig, from_key_values
from .transformer import BoundaryTransformer

CHECKPOINT_FORMAT = "bplab-ckpt-v1"

IMAGE_MEAN = (0.485, 0.456, 0.406)
IMAGE_STD = (0.229, 0.224, 0.225)


class TextDetector(nn.Module):
    def __init__(self, config: RunConfig):
        super().__init__()
        self.config = config
        state = torch.random.get_rng_state()
        torch.manual_seed(config.seed)
        try:
            self.backbone = Backbone(config.backbone())
            self.transformer = BoundaryTransformer(config.transformer())
        finally:
            torch.random.set_rng_state(state)
        self.register_buffer("prior_mask", torch.tensor(config.prior_mask()), persistent=False)

    @property
    def stride(self) -> int:
        return self.config.output_stride

    def forward(self, images: torch.Tensor) -> FeatureMaps:
        return self.backbone(images)


def to_tensor(image: np.ndarray) -> torch.Tensor:
    """``(H, W, 3)`` uint8 RGB to a normalized ``(3, H, W)`` float tensor."""
    x = torch.from_numpy(np.ascontiguousarray(image)).float().div_(255.0)
    x = (x - torch.tensor(IMAGE_MEAN)) / torch.tensor(IMAGE_STD)
    return x.permute(2, 0, 1).contiguous()


def save_checkpoint(
    path: str | Path,
    model: TextDetector,
    optimizer: torch.optim.Optimizer | None = None,
    state: dict | None = None,
) -> None:
    """Write config echo, named parameter arrays and optional optimizer state to one ``.npz`` archive."""
    arrays: dict[str, np.ndarray] = {
        "__format__": np.array(CHECKPOINT_FORMAT),
        "__config__": np.array(json.dumps(_config_strings(model.config), sort_keys=True)),
        "__state__": np.array(json.dumps(state or {}, sort_keys=True)),
    }
    for name, tensor in model.state_dict().items():
        arrays[f"model/{name}"] = tensor.detach().cpu().numpy()
    if optimizer is not None:
        opt = optimizer.state_dict()
        arrays["__optim_groups__"] = np.array(json.dumps(opt["param_groups"]))
        for idx, entry in opt["state"].items():
            for key, value in entry.items():
                arrays[f"optim/{idx}/{key}"] = torch.as_tensor(value).detach().cpu().numpy()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[TextDetector, dict, dict | None]:
    """Returns ``(model, state, optimizer_state_dict or None)``."""
    with np.load(path, allow_pickle=False) as data:
        fmt = str(data["__format__"])
        if fmt != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {fmt!r}")
        config = from_key_values(RunConfig, json.loads(str(data["__config__"])))
        state = json.loads(str(data["__state__"]))
        model = TextDetector(config)
        params = {k[len("model/") :]: torch.from_numpy(data[k].copy()) for k in data.files if k.startswith("model/")}
        model.load_state_dict(params)
        optim = None
        if "__optim_groups__" in data.files:
            groups = json.loads(str(data["__optim_groups__"]))
            per_param: dict[int, dict] = {}
            for k in data.files:
                if k.startswith("optim/"):
                    _, idx, key = k.split("/", 2)
                    per_param.setdefault(int(idx), {})[key] = torch.from_numpy(data[k].copy())
            optim = {"state": per_param, "param_groups": groups}
    model.eval()
    return model, state, optim


def _config_strings(config: RunConfig) -> dict[str, str]:
    out = {}
    for k, v in asdict(config).items():
        if isinstance(v, bool):
            out[k] = "true" if v else "false"
        elif isinstance(v, (tuple, list)):
            out[k] = ",".join(str(x) for x in v)
        else:
            out[k] = repr(v) if isinstance(v, float) else str(v)
    return out
