"""
Backbone Module

Residual feature extractors and a linear head with a mask-aware forward pass.

Two architectures are available:
    desk      three stages (20/40/80 channels, two blocks each), N = 80
    resnet18  the CIFAR-style 18-layer residual network, N = 512

Neither is adapted to the half-resolution input: the first convolution keeps
its native stride whether it sees a raw image or an encoded map.
"""

import json
import logging
import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from errors import ShapeMismatchError

logger = logging.getLogger(__name__)

ARCHITECTURES = {
    # arch id: (stage widths, blocks per stage)
    'desk': ((20, 40, 80), (2, 2, 2)),
    'resnet18': ((64, 128, 256, 512), (2, 2, 2, 2)),
}

_CKPT_MAGIC = b'CLFDNET\x00'


@dataclass
class BackboneConfig:
    """Architecture id, input shape and class count of a classifier."""

    arch: str = 'desk'
    input_shape: tuple = (3, 16, 16)
    num_classes: int = 10

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture '{self.arch}', expected one of {sorted(ARCHITECTURES)}")
        self.input_shape = tuple(self.input_shape)

    @property
    def feature_dim(self):
        return ARCHITECTURES[self.arch][0][-1]


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_planes, planes, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_planes, planes, kernel_size=3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, kernel_size=3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_planes != planes:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_planes, planes, kernel_size=1, stride=stride, bias=False),
                nn.BatchNorm2d(planes),
            )

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ContinualClassifier(nn.Module):
    """
    Residual feature extractor followed by a linear head.

    `extract` returns the pooled feature vector of length N; `classify`
    applies a binary mask to it before the head.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        widths, blocks = ARCHITECTURES[config.arch]
        in_channels = config.input_shape[0]
        self.conv1 = nn.Conv2d(in_channels, widths[0], kernel_size=3, stride=1, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(widths[0])
        stages = []
        in_planes = widths[0]
        for i, (planes, count) in enumerate(zip(widths, blocks)):
            strides = [1 if i == 0 else 2] + [1] * (count - 1)
            layers = []
            for stride in strides:
                layers.append(BasicBlock(in_planes, planes, stride))
                in_planes = planes
            stages.append(nn.Sequential(*layers))
        self.stages = nn.Sequential(*stages)
        self.head = nn.Linear(in_planes, config.num_classes)

    @property
    def feature_dim(self):
        return self.head.in_features

    def extract(self, x):
        if tuple(x.shape[1:]) != self.config.input_shape:
            raise ShapeMismatchError(
                f"backbone expects inputs of shape {self.config.input_shape}, got {tuple(x.shape[1:])}")
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.stages(out)
        out = F.adaptive_avg_pool2d(out, 1)
        return out.flatten(1)

    def classify(self, features, mask=None):
        if mask is not None:
            if mask.shape != features.shape:
                raise ShapeMismatchError(
                    f"mask shape {tuple(mask.shape)} does not match features {tuple(features.shape)}")
            features = features * mask.to(features.dtype)
        return self.head(features)

    def forward(self, x, mask=None):
        return self.classify(self.extract(x), mask)


def count_module_flops(module, input_shape):
    """
    Analytic forward FLOPs of the convolutions and linear layers of a module.

    Convolutions count 2 * k_h * k_w * C_in/groups * C_out * H_out * W_out,
    linear layers 2 * fan_in * fan_out. Other layers are not counted.

    Args:
        module (nn.Module): Module to profile.
        input_shape (tuple): Per-sample input shape (C, H, W).

    Returns:
        int: FLOPs for one sample.
    """
    total = [0]

    def conv_hook(layer, inputs, output):
        k_h, k_w = layer.kernel_size
        total[0] += (2 * k_h * k_w * (layer.in_channels // layer.groups)
                     * layer.out_channels * output.shape[-2] * output.shape[-1])

    def linear_hook(layer, inputs, output):
        total[0] += 2 * layer.in_features * layer.out_features

    handles = []
    for layer in module.modules():
        if isinstance(layer, nn.Conv2d):
            handles.append(layer.register_forward_hook(conv_hook))
        elif isinstance(layer, nn.Linear):
            handles.append(layer.register_forward_hook(linear_hook))

    was_training = module.training
    module.eval()
    try:
        with torch.no_grad():
            module(torch.zeros((1,) + tuple(input_shape)))
    finally:
        for handle in handles:
            handle.remove()
        module.train(was_training)
    return total[0]


def count_flops(config, input_shape=None):
    """Forward FLOPs of the classifier described by `config` for one sample."""
    input_shape = tuple(input_shape or config.input_shape)
    counted = ContinualClassifier(BackboneConfig(config.arch, input_shape, config.num_classes))
    return count_module_flops(counted, input_shape)


def save_checkpoint(model, path):
    """
    Write a named parameter table: magic, manifest length (u32), JSON manifest
    with architecture and shapes, then little-endian float32 values.
    """
    state = model.state_dict()
    manifest = {
        'arch': model.config.arch,
        'input_shape': list(model.config.input_shape),
        'num_classes': model.config.num_classes,
        'tensors': [{'name': name, 'shape': list(t.shape)} for name, t in state.items()],
    }
    header = json.dumps(manifest).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack('<I', len(header)))
        f.write(header)
        for tensor in state.values():
            f.write(tensor.detach().cpu().numpy().astype('<f4').tobytes())
    logger.info(f"Model checkpoint written to {path}")


def load_checkpoint(path):
    """Rebuild a ContinualClassifier from a checkpoint written by save_checkpoint."""
    with open(path, 'rb') as f:
        payload = f.read()
    if payload[:8] != _CKPT_MAGIC:
        raise ValueError(f"{path} is not a model checkpoint")
    (length,) = struct.unpack_from('<I', payload, 8)
    manifest = json.loads(payload[12:12 + length].decode('utf-8'))
    model = ContinualClassifier(BackboneConfig(
        manifest['arch'], tuple(manifest['input_shape']), manifest['num_classes']))
    state = model.state_dict()
    offset = 12 + length
    for item in manifest['tensors']:
        count = int(np.prod(item['shape'])) if item['shape'] else 1
        values = np.frombuffer(payload, dtype='<f4', count=count, offset=offset).reshape(item['shape'])
        offset += count * 4
        target = state[item['name']]
        state[item['name']] = torch.from_numpy(values.copy()).to(target.dtype)
    model.load_state_dict(state)
    return model
