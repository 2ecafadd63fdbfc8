"""Image files, dataset manifests, and training patch extraction.

Only binary netpbm formats are handled: PGM (P5) for grayscale and PPM
(P6) for 3-channel color, with maxval 255 or 65535. 16-bit samples are
big-endian per the format. Pixels are exposed as (1, c, h, w) tensors on
[0, 1]; writing clamps and quantizes, so a round-trip is exact up to half
a quantization step.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ManifestError, ShapeError
from .tensor import Tensor


@dataclass
class ImageFile:
    pixels: Tensor  # (1, c, h, w) in [0, 1]
    bit_depth: int  # 8 or 16
    channels: int  # 1 or 3

    @classmethod
    def from_array(cls, array: np.ndarray, bit_depth: int = 8) -> "ImageFile":
        """Wrap a (h, w), (c, h, w), or (1, c, h, w) array on [0, 1]."""
        arr = np.asarray(array, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None, None]
        elif arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[0] != 1:
            raise ShapeError(f"expected a single image, got shape {np.asarray(array).shape}")
        channels = arr.shape[1]
        if channels not in (1, 3):
            raise ShapeError(f"netpbm images support 1 or 3 channels, got {channels}")
        if bit_depth not in (8, 16):
            raise ShapeError(f"bit depth must be 8 or 16, got {bit_depth}")
        return cls(pixels=Tensor(arr), bit_depth=bit_depth, channels=channels)


class _ByteScanner:
    """Header tokenizer that tracks the byte offset for error messages."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def fail(self, message: str):
        raise FormatError(message, offset=self.pos)

    def skip_separators(self) -> None:
        while self.pos < len(self.blob):
            b = self.blob[self.pos]
            if b in b" \t\r\n":
                self.pos += 1
            elif b == ord("#"):
                while self.pos < len(self.blob) and self.blob[self.pos] not in b"\r\n":
                    self.pos += 1
            else:
                return

    def token(self) -> bytes:
        self.skip_separators()
        start = self.pos
        while self.pos < len(self.blob) and self.blob[self.pos] not in b" \t\r\n#":
            self.pos += 1
        if self.pos == start:
            self.fail("unexpected end of header")
        return self.blob[start : self.pos]

    def int_token(self, what: str) -> int:
        tok = self.token()
        try:
            return int(tok)
        except ValueError:
            self.fail(f"expected an integer {what}, got {tok!r}")


def read_image(path) -> ImageFile:
    """Read a binary PGM (P5) or PPM (P6) file."""
    blob = Path(path).read_bytes()
    scanner = _ByteScanner(blob)
    magic = scanner.token()
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise FormatError(f"unsupported magic {magic!r}, expected P5 or P6", offset=0)
    width = scanner.int_token("width")
    height = scanner.int_token("height")
    maxval = scanner.int_token("maxval")
    if maxval not in (255, 65535):
        raise FormatError(f"unsupported maxval {maxval}, expected 255 or 65535", offset=scanner.pos)
    if width <= 0 or height <= 0:
        raise FormatError(f"invalid dimensions {width}x{height}", offset=scanner.pos)
    if scanner.pos >= len(blob) or blob[scanner.pos] not in b" \t\r\n":
        scanner.fail("missing whitespace after maxval")
    scanner.pos += 1

    bit_depth = 8 if maxval == 255 else 16
    sample_bytes = 1 if bit_depth == 8 else 2
    expected = width * height * channels * sample_bytes
    payload = blob[scanner.pos : scanner.pos + expected]
    if len(payload) != expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, found {len(payload)}",
            offset=scanner.pos + len(payload),
        )
    dtype = np.dtype(">u2") if bit_depth == 16 else np.dtype("u1")
    samples = np.frombuffer(payload, dtype=dtype).astype(np.float32) / maxval
    # Row-major pixel order with interleaved channels per the format.
    planes = samples.reshape(height, width, channels).transpose(2, 0, 1)
    return ImageFile(pixels=Tensor(planes[None]), bit_depth=bit_depth, channels=channels)


def write_image(path, image: ImageFile) -> None:
    """Write a binary PGM/PPM file; values are clamped then quantized."""
    path = Path(path)
    if not path.parent.exists():
        raise FormatError(f"parent directory does not exist: {path.parent}")
    _, c, h, w = image.pixels.data.shape
    if c != image.channels or c not in (1, 3):
        raise ShapeError(f"channel count {c} does not match image metadata {image.channels}")
    maxval = 255 if image.bit_depth == 8 else 65535
    magic = b"P5" if c == 1 else b"P6"
    clamped = np.clip(image.pixels.data[0], 0.0, 1.0)
    quantized = np.rint(clamped.astype(np.float64) * maxval)
    interleaved = quantized.transpose(1, 2, 0)
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    dtype = np.dtype(">u2") if image.bit_depth == 16 else np.dtype("u1")
    path.write_bytes(header + interleaved.astype(dtype).tobytes())


@dataclass
class DatasetManifest:
    """Ordered list of image paths relative to a root directory."""

    root: Path
    entries: list[str]

    def paths(self) -> list[Path]:
        return [self.root / entry for entry in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(path) -> DatasetManifest:
    """Load a newline-delimited manifest of relative paths.

    Lines starting with '#' and empty lines are skipped. Every listed file
    must exist; missing ones are reported together.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"manifest not found: {path}")
    root = path.parent
    entries: list[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        entries.append(stripped)
    missing = [entry for entry in entries if not (root / entry).is_file()]
    if missing:
        raise ManifestError(missing)
    return DatasetManifest(root=root, entries=entries)


def crop_patch(image: Tensor, size: int, seed: int) -> Tensor:
    """Axis-aligned size x size crop at a seeded uniform offset."""
    n, c, h, w = image.data.shape
    if h < size or w < size:
        raise ShapeError(f"image ({h}, {w}) smaller than patch size {size}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return Tensor(image.data[:, :, top : top + size, left : left + size].copy(),
                  dtype=image.data.dtype)
