"""A Pipeline bundles one cloud-to-image mapper with the classifier that
consumes it, so training, evaluation, and attacks all see one object.

The mapper fixes the gradient topology: basic occupancy and z-buffer
images are quantized (blocked), while the leaky projection and the
graph-drawing image carry raw coordinates in their intensities
(coordinate leak), which is exactly the surface the attack module probes.
"""

from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .graphdraw import map_graphdraw
from .net import TinyNet
from .project import GradPath, MappedImage, basic_project, basic_project_leaky
from .render import AdaINParams, ZBufferConfig, adain, positional_embedding, zbuffer

PIPELINE_NAMES = ("basic", "leaky", "graphdraw", "zbuffer")

_LEAKY_NAMES = ("leaky", "graphdraw")


@dataclass
class Pipeline:
    name: str
    net: TinyNet
    grad_path: GradPath
    c_in: int
    size: int
    downsample: int
    map_seed: int = 0
    gain: float = 1.0  # fixed input scale; ds^2 turns the entry mean into a sum
    zconfig: ZBufferConfig | None = None
    adain_params: AdaINParams | None = None

    def __post_init__(self):
        leaky = self.name in _LEAKY_NAMES
        if leaky != (self.grad_path is GradPath.COORDINATE_LEAK):
            raise ValueError(f"grad_path inconsistent with mapper {self.name!r}")

    def map_image(self, cloud: PointCloud) -> MappedImage:
        if self.name == "basic":
            return basic_project(cloud, size=self.size)
        if self.name == "leaky":
            return basic_project_leaky(cloud, size=self.size)
        if self.name == "graphdraw":
            return map_graphdraw(cloud, seed=self.map_seed)
        if self.name == "zbuffer":
            return zbuffer(cloud, self.zconfig)
        raise ValueError(f"unknown pipeline {self.name!r}")

    def net_input_from_image(self, image: MappedImage) -> np.ndarray:
        x = image.data
        if self.gain != 1.0:
            x = x * self.gain
        if self.name == "zbuffer":
            h, w, _ = x.shape
            x = np.concatenate([x, positional_embedding(h, w)], axis=2)
            if self.adain_params is not None:
                x, _ = adain(x, self.adain_params)
        return x

    def net_input(self, cloud: PointCloud) -> np.ndarray:
        return self.net_input_from_image(self.map_image(cloud))


def make_pipeline(name: str, num_classes: int, seed: int = 0,
                  net: TinyNet | None = None, map_seed: int = 0,
                  adain_params: AdaINParams | None = None) -> Pipeline:
    if name not in PIPELINE_NAMES:
        raise ValueError(f"unknown pipeline {name!r}, expected one of {PIPELINE_NAMES}")
    sizes = {"basic": 456, "leaky": 456, "graphdraw": 256, "zbuffer": 313}
    chans = {"basic": 1, "leaky": 3, "graphdraw": 3, "zbuffer": 3}
    paths = {"basic": GradPath.BLOCKED, "leaky": GradPath.COORDINATE_LEAK,
             "graphdraw": GradPath.COORDINATE_LEAK, "zbuffer": GradPath.BLOCKED}
    size = sizes[name]
    c_in = chans[name]
    if net is None:
        net = TinyNet(c_in, num_classes, seed=seed)
    elif net.c_in != c_in:
        raise ValueError(f"net expects {net.c_in} channels, mapper provides {c_in}")
    downsample = -(-size // 64)
    zconfig = ZBufferConfig() if name == "zbuffer" else None
    # sparse dot images need the sum-pool gain to keep activations O(1);
    # the dense depth image instead gets per-channel normalization
    gain = 1.0 if name == "zbuffer" else float(downsample ** 2)
    if name == "zbuffer" and adain_params is None:
        adain_params = AdaINParams.identity(c_in)
    return Pipeline(name=name, net=net, grad_path=paths[name], c_in=c_in,
                    size=size, downsample=downsample, map_seed=map_seed,
                    gain=gain, zconfig=zconfig, adain_params=adain_params)
