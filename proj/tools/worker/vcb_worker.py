#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Model worker for the "real" backend.

Hosts Stable Diffusion 1.5 with an IP-Adapter image prompt, a depth ControlNet
and ZoeDepth. Invoked as `vcb_worker.py request.json`; see vcbe.py for the
response protocol. Needs torch, diffusers, transformers and the weights named
in the config "weights" object.
"""

import functools
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
import vcbe  # noqa: E402

import numpy as np  # noqa: E402
import torch  # noqa: E402
from PIL import Image  # noqa: E402

TOKENS, DIM = 4, 768


def _dtype(device):
    return torch.float16 if device.startswith("cuda") else torch.float32


def _pretrained(cls, entry, **kwargs):
    return cls.from_pretrained(entry["repo"], revision=entry.get("revision"),
                               subfolder=entry.get("subfolder"), **kwargs)


@functools.lru_cache(maxsize=None)
def _sd(weights_key, device):
    import json
    from diffusers import StableDiffusionPipeline
    from transformers import CLIPVisionModelWithProjection

    w = json.loads(weights_key)
    dtype = _dtype(device)
    image_encoder = _pretrained(CLIPVisionModelWithProjection, w["image_encoder"],
                                torch_dtype=dtype)
    pipe = StableDiffusionPipeline.from_pretrained(
        w["sd"]["repo"], revision=w["sd"].get("revision"), image_encoder=image_encoder,
        torch_dtype=dtype, safety_checker=None, requires_safety_checker=False)
    ip = w["ip_adapter"]
    pipe.load_ip_adapter(ip["repo"], subfolder=ip.get("subfolder", "models"),
                         weight_name=ip["weight_name"], revision=ip.get("revision"))
    pipe.set_ip_adapter_scale(float(ip.get("scale", 1.0)))
    return pipe.to(device)


def _projection(pipe):
    return pipe.unet.encoder_hid_proj.image_projection_layers[0]


class _Identity(torch.nn.Module):
    def forward(self, x):
        return x


def _weights_key(req):
    import json
    return json.dumps(req["weights"], sort_keys=True)


def encode(req):
    device = req["device"]
    pipe = _sd(_weights_key(req), device)
    image = Image.open(req["image"]).convert("RGB")
    pixels = pipe.feature_extractor(images=image, return_tensors="pt").pixel_values
    with torch.no_grad():
        clip = pipe.image_encoder(pixels.to(device, _dtype(device))).image_embeds
        tokens = _projection(pipe)(clip).reshape(TOKENS, DIM)
    vcbe.write_vcbe(req["output"], TOKENS, DIM, tokens.float().cpu().flatten().tolist(),
                    req["encoder_id"])


@functools.lru_cache(maxsize=None)
def _zoe(repo, revision, device):
    from transformers import AutoImageProcessor, ZoeDepthForDepthEstimation
    proc = AutoImageProcessor.from_pretrained(repo, revision=revision)
    model = ZoeDepthForDepthEstimation.from_pretrained(repo, revision=revision).to(device)
    return proc, model


def depth(req):
    entry = req["weights"]["depth"]
    proc, model = _zoe(entry["repo"], entry.get("revision"), req["device"])
    image = Image.open(req["image"]).convert("RGB")
    inputs = proc(images=image, return_tensors="pt").to(req["device"])
    with torch.no_grad():
        pred = model(**inputs).predicted_depth
    pred = torch.nn.functional.interpolate(pred.unsqueeze(1), size=(image.height, image.width),
                                           mode="bicubic", align_corners=False)[0, 0]
    d = pred.float().cpu().numpy()
    # near = 1, far = 0, the convention depth ControlNets are trained on
    near = (d.max() - d) / max(float(d.max() - d.min()), 1e-6)
    vcbe.write_vcbe(req["output"], image.height, image.width, near.flatten().tolist(),
                    req["estimator_id"])


@functools.lru_cache(maxsize=None)
def _controlnet(weights_key, device):
    import json
    from diffusers import ControlNetModel, StableDiffusionControlNetPipeline
    w = json.loads(weights_key)
    net = _pretrained(ControlNetModel, w["controlnet"], torch_dtype=_dtype(device))
    return StableDiffusionControlNetPipeline(**_sd(weights_key, device).components,
                                             controlnet=net).to(device)


def generate(req):
    device = req["device"]
    key = _weights_key(req)
    pipe = _sd(key, device)
    header, values = vcbe.read_vcbe(req["embedding"])
    if header["shape"] != [TOKENS, DIM]:
        raise ValueError(f"embedding shape {header['shape']} != [{TOKENS}, {DIM}]")
    dtype = _dtype(device)
    pos = torch.tensor(values, dtype=dtype, device=device).reshape(1, 1, TOKENS, DIM)
    proj = _projection(pipe)
    with torch.no_grad():
        neg = proj(torch.zeros(1, proj.image_embeds.in_features, dtype=dtype, device=device))
    neg = neg.reshape(1, 1, TOKENS, DIM)

    s = req["settings"]
    kwargs = dict(prompt=req.get("prompt", ""), num_inference_steps=s["steps"],
                  guidance_scale=s["guidance"], width=s["width"], height=s["height"],
                  generator=torch.Generator(device="cpu").manual_seed(s["seed"]),
                  ip_adapter_image_embeds=[torch.cat([neg, pos])])
    runner = pipe
    if req.get("depth"):
        dheader, dvals = vcbe.read_vcbe(req["depth"])
        dh, dw = dheader["shape"]
        arr = (np.clip(np.array(dvals, dtype=np.float32).reshape(dh, dw), 0, 1) * 255)
        control = Image.fromarray(arr.astype(np.uint8)).convert("RGB")
        kwargs.update(image=control.resize((s["width"], s["height"])),
                      controlnet_conditioning_scale=float(req["depth_scale"]))
        runner = _controlnet(key, device)

    # tokens arrive already projected; bypass the adapter's projection layer
    layers = runner.unet.encoder_hid_proj.image_projection_layers
    original = layers[0]
    layers[0] = _Identity()
    try:
        image = runner(**kwargs).images[0]
    finally:
        layers[0] = original
    image.save(req["output"], format="PNG")


if __name__ == "__main__":
    sys.exit(vcbe.serve({"encode": encode, "depth": depth, "generate": generate}))
