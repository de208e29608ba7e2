"""Frozen torchvision backbones trimmed to their penultimate activations.

Each entry strips the classification head so the forward pass returns the
pre-classifier feature vector.  Models are always put in eval mode with
gradients disabled; this package never trains anything.
"""

import torch
from torchvision import models

from .errors import BackboneError

# fixed init seed so --weights none is reproducible across runs
_INIT_SEED = 0


def _resnet18(weights):
    model = models.resnet18(weights=models.ResNet18_Weights.DEFAULT if weights else None)
    model.fc = torch.nn.Identity()
    return model


def _resnet50(weights):
    model = models.resnet50(weights=models.ResNet50_Weights.DEFAULT if weights else None)
    model.fc = torch.nn.Identity()
    return model


def _vgg16(weights):
    model = models.vgg16(weights=models.VGG16_Weights.DEFAULT if weights else None)
    # drop only the final classifier Linear; the 4096-d activations after
    # the second fully connected block are the embedding
    model.classifier = torch.nn.Sequential(*list(model.classifier.children())[:-1])
    return model


def _vit_b_16(weights):
    model = models.vit_b_16(weights=models.ViT_B_16_Weights.DEFAULT if weights else None)
    model.heads = torch.nn.Identity()
    return model


BACKBONES = {
    "resnet18": (_resnet18, 512),
    "resnet50": (_resnet50, 2048),
    "vgg16": (_vgg16, 4096),
    "vit_b_16": (_vit_b_16, 768),
}


def backbone_dim(name: str) -> int:
    if name not in BACKBONES:
        raise BackboneError(
            f"unknown backbone {name!r}, known: {', '.join(sorted(BACKBONES))}")
    return BACKBONES[name][1]


def build_backbone(name: str, weights: str = "pretrained"):
    """Return ``(model, dim)`` for ``name``, frozen and in eval mode.

    ``weights`` is either ``"pretrained"`` (the torchvision default
    checkpoint, downloaded on first use) or ``"none"`` (a fixed-seed random
    initialization, useful offline and in tests; the embeddings are
    meaningless but deterministic).
    """
    if weights not in ("pretrained", "none"):
        raise BackboneError(f"weights must be 'pretrained' or 'none', got {weights!r}")
    dim = backbone_dim(name)
    builder = BACKBONES[name][0]
    torch.manual_seed(_INIT_SEED)
    model = builder(weights == "pretrained")
    model.eval()
    for param in model.parameters():
        param.requires_grad_(False)
    return model, dim
