#!/usr/bin/env python3
# Assembles a diffusers pipeline from separately sourced components and runs
# one edit (with --input) or one text-to-image generation (without).
# Needs torch, diffusers and transformers.
import argparse
import sys


def load(args):
    import torch
    from diffusers import (AutoencoderKL, DDIMScheduler, StableDiffusionImg2ImgPipeline,
                           StableDiffusionPipeline, UNet2DConditionModel)
    from transformers import CLIPTextModel, CLIPTokenizer

    def src(s):
        return s[len("hf://"):] if s.startswith("hf://") else s

    dtype = torch.float16 if torch.cuda.is_available() else torch.float32
    te, dn, ae = src(args.text_encoder), src(args.denoiser), src(args.autoencoder)
    parts = dict(
        tokenizer=CLIPTokenizer.from_pretrained(te, subfolder="tokenizer"),
        text_encoder=CLIPTextModel.from_pretrained(te, subfolder="text_encoder", torch_dtype=dtype),
        unet=UNet2DConditionModel.from_pretrained(dn, subfolder="unet", torch_dtype=dtype),
        vae=AutoencoderKL.from_pretrained(ae, subfolder="vae", torch_dtype=dtype),
        scheduler=DDIMScheduler.from_pretrained(dn, subfolder="scheduler"),
        safety_checker=None,
        feature_extractor=None,
        requires_safety_checker=False,
    )
    cls = StableDiffusionImg2ImgPipeline if args.input else StableDiffusionPipeline
    pipe = cls(**parts)
    return pipe.to("cuda" if torch.cuda.is_available() else "cpu"), torch


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--text-encoder", required=True)
    p.add_argument("--denoiser", required=True)
    p.add_argument("--autoencoder", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--guidance", type=float, default=4.0)
    p.add_argument("--strength", type=float, default=0.4)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--input")
    p.add_argument("--output", required=True)
    args = p.parse_args()

    from PIL import Image

    pipe, torch = load(args)
    gen = torch.Generator(device=pipe.device).manual_seed(args.seed % (2**63))
    if args.input:
        image = Image.open(args.input).convert("RGB").resize((args.size, args.size))
        out = pipe(prompt=args.prompt, image=image, strength=args.strength, guidance_scale=args.guidance,
                   num_inference_steps=args.steps, generator=gen).images[0]
    else:
        out = pipe(prompt=args.prompt, height=args.size, width=args.size, guidance_scale=args.guidance,
                   num_inference_steps=args.steps, generator=gen).images[0]
    out.convert("L").resize((args.size, args.size)).save(args.output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
