"""Regenerates the ONNX interpreter parity fixture.

Exports a small encoder/decoder (mean path only) with PyTorch and stores the
reference output for a fixed input as an ANXF32 raster. Run from this
directory: python3 make_onnx_fixture.py
"""
import struct

import numpy as np
import torch
from torch import nn


class TinyAutoencoder(nn.Module):
    def __init__(self):
        super().__init__()
        self.enc = nn.Sequential(
            nn.Conv2d(3, 8, 3, stride=2, padding=1), nn.BatchNorm2d(8), nn.ReLU(),
            nn.Conv2d(8, 8, 3, stride=2, padding=1), nn.BatchNorm2d(8), nn.LeakyReLU(0.2),
        )
        self.mu = nn.Linear(8 * 4 * 4, 16)
        self.up = nn.Linear(16, 8 * 4 * 4)
        self.dec = nn.Sequential(
            nn.ConvTranspose2d(8, 8, 4, stride=2, padding=1), nn.BatchNorm2d(8), nn.ReLU(),
            nn.ConvTranspose2d(8, 3, 4, stride=2, padding=1), nn.Sigmoid(),
        )

    def forward(self, x):
        h = self.enc(x)
        z = self.mu(torch.flatten(h, 1))
        h = self.up(z).reshape(-1, 8, 4, 4)
        return self.dec(h)


def write_f32(path, array):
    c, h, w = array.shape
    hwc = np.ascontiguousarray(array.transpose(1, 2, 0), dtype="<f4")
    with open(path, "wb") as f:
        f.write(f"ANXF32 {h} {w} {c}\n".encode())
        f.write(hwc.tobytes())


def main():
    torch.manual_seed(0)
    model = TinyAutoencoder()
    # Non-trivial running statistics so BatchNormalization is exercised.
    for m in model.modules():
        if isinstance(m, nn.BatchNorm2d):
            m.running_mean.uniform_(-0.2, 0.2)
            m.running_var.uniform_(0.5, 1.5)
            m.weight.data.uniform_(0.5, 1.5)
            m.bias.data.uniform_(-0.1, 0.1)
    model.eval()
    yy, xx = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
    x = np.stack([(np.sin(0.3 * xx + c) * np.cos(0.2 * yy) + 1) / 2 for c in range(3)]).astype(np.float32)
    write_f32("tiny_autoencoder_input.f32", x)
    with torch.no_grad():
        y = model(torch.from_numpy(x)[None])[0].numpy()
    write_f32("tiny_autoencoder_output.f32", y)
    torch.onnx.export(model, torch.from_numpy(x)[None], "tiny_autoencoder.onnx", input_names=["x"],
                      output_names=["y"], dynamic_axes={"x": {0: "N"}, "y": {0: "N"}}, opset_version=13,
                      dynamo=False)


if __name__ == "__main__":
    main()
