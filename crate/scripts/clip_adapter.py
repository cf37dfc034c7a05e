#!/usr/bin/env python3
"""Line-delimited JSON adapter exposing a Hugging Face CLIP model to posepilot.

Usage (as --backend-cmd):
    python3 scripts/clip_adapter.py [--model openai/clip-vit-base-patch32] [--device cpu]

`weights_path` from the backend spec overrides --model. `--tiny-random`
builds a small randomly initialized model, which exercises the protocol
without downloading weights.
"""

import argparse
import base64
import json
import sys

import torch
from transformers import CLIPConfig, CLIPModel, CLIPTokenizerFast

MEAN = torch.tensor([0.48145466, 0.4578275, 0.40821073]).view(3, 1, 1)
STD = torch.tensor([0.26862954, 0.26130258, 0.27577711]).view(3, 1, 1)


def projected(out):
    # transformers 5 wraps the projected embedding in a model output
    return out if isinstance(out, torch.Tensor) else out.pooler_output


def tiny_model():
    cfg = CLIPConfig(
        text_config={"hidden_size": 32, "intermediate_size": 64, "num_hidden_layers": 2, "num_attention_heads": 2},
        vision_config={
            "hidden_size": 32,
            "intermediate_size": 64,
            "num_hidden_layers": 2,
            "num_attention_heads": 2,
            "image_size": 32,
            "patch_size": 8,
        },
        projection_dim=16,
    )
    torch.manual_seed(0)
    return CLIPModel(cfg).eval(), None


class Adapter:
    def __init__(self, args):
        self.args = args
        self.model = None
        self.tokenizer = None
        self.device = torch.device(args.device)

    def load(self, options):
        if self.model is not None:
            return
        if self.args.tiny_random:
            self.model, self.tokenizer = tiny_model()
        else:
            name = options.get("weights_path") or self.args.model
            self.model = CLIPModel.from_pretrained(name).eval()
            self.tokenizer = CLIPTokenizerFast.from_pretrained(name)
        self.model.to(self.device)

    def tokens(self, texts):
        if self.tokenizer is None:
            # byte-level ids for the random model
            ids = [[b % 400 + 1 for b in t.encode()][:30] for t in texts]
            width = max(len(i) for i in ids)
            ids = [i + [0] * (width - len(i)) for i in ids]
            mask = [[1 if v else 0 for v in i] for i in ids]
            return {"input_ids": torch.tensor(ids), "attention_mask": torch.tensor(mask)}
        return self.tokenizer(texts, padding=True, truncation=True, return_tensors="pt")

    def pixels(self, req):
        raw = base64.b64decode(req["rgb8_base64"])
        w, h = req["width"], req["height"]
        x = torch.frombuffer(bytearray(raw), dtype=torch.uint8).view(h, w, 3).permute(2, 0, 1).float() / 255.0
        return ((x - MEAN) / STD).unsqueeze(0).to(self.device)

    def text_features(self, texts):
        t = {k: v.to(self.device) for k, v in self.tokens(texts).items()}
        return projected(self.model.get_text_features(**t))

    def describe(self, req):
        self.load(req.get("options") or {})
        size = self.model.config.vision_config.image_size
        return {
            "embedding_dim": self.model.config.projection_dim,
            "native_input_size": [size, size],
            "supports_attribution": True,
        }

    def embed_image(self, req):
        with torch.no_grad():
            v = projected(self.model.get_image_features(pixel_values=self.pixels(req)))
        return {"vector": v[0].tolist()}

    def embed_texts(self, req):
        with torch.no_grad():
            v = self.text_features(req["texts"])
        return {"vectors": v.tolist()}

    def attribute(self, req):
        """Grad-CAM over the patch tokens of one vision encoder layer."""
        layers = self.model.vision_model.encoder.layers
        spec = req.get("layer")
        index = len(layers) - 1
        if spec is not None:
            index = int(str(spec).rsplit(".", 1)[-1])
        saved = {}

        def hook(_module, _inputs, output):
            hidden = output[0] if isinstance(output, tuple) else output
            hidden.retain_grad()
            saved["h"] = hidden

        handle = layers[index].register_forward_hook(hook)
        try:
            image = projected(self.model.get_image_features(pixel_values=self.pixels(req)))
            with torch.no_grad():
                text = self.text_features([req["text"]])
            score = torch.nn.functional.cosine_similarity(image, text).sum()
            self.model.zero_grad()
            score.backward()
        finally:
            handle.remove()
        h = saved["h"][0, 1:]
        g = saved["h"].grad[0, 1:]
        cam = torch.relu((g.mean(dim=0, keepdim=True) * h).sum(dim=1)).detach()
        side = int(round(cam.numel() ** 0.5))
        return {"grid_width": side, "grid_height": side, "values": cam.tolist()}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--model", default="openai/clip-vit-base-patch32")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--tiny-random", action="store_true")
    adapter = Adapter(parser.parse_args())
    ops = {
        "describe": adapter.describe,
        "embed_image": adapter.embed_image,
        "embed_texts": adapter.embed_texts,
        "attribute": adapter.attribute,
    }
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            op = ops.get(req.get("op"))
            if op is None:
                raise ValueError(f"unknown op `{req.get('op')}`")
            if req.get("op") != "describe":
                adapter.load({})
            reply = op(req)
        except Exception as e:  # reported to the caller, which maps it to a backend error
            reply = {"error": f"{type(e).__name__}: {e}"}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
