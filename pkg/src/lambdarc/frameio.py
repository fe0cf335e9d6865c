"""Luma frames: containers, Y4M/raw readers and a writer, synthetic textures."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TruncatedFrameError, Y4MParseError

Y4M_SIGNATURE = b"YUV4MPEG2"

# chroma sample count per luma sample, by Y4M colour-space tag
_CHROMA_LAYOUTS = {
    "420": "420",
    "420jpeg": "420",
    "420paldv": "420",
    "420mpeg2": "420",
    "mono": "mono",
    "400": "mono",
}


@dataclass(frozen=True)
class Frame:
    """Single luma plane with samples normalized to [0, 1].

    ``luma`` is stored as a read-only ``(height, width)`` float64 array; its
    row-major ravel is the sample vector.
    """

    luma: np.ndarray

    def __post_init__(self):
        arr = np.array(self.luma, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"luma must be a non-empty 2-D plane, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("luma samples must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "luma", arr)

    @property
    def width(self) -> int:
        return self.luma.shape[1]

    @property
    def height(self) -> int:
        return self.luma.shape[0]

    @property
    def shape(self):
        return self.luma.shape


@dataclass(frozen=True)
class FramePair:
    reference: Frame
    current: Frame

    def __post_init__(self):
        if self.reference.shape != self.current.shape:
            raise ValueError(
                f"reference {self.reference.shape} and current {self.current.shape} differ in size"
            )


@dataclass
class Sequence:
    frames: list
    frame_rate: float = 30.0

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValueError("a sequence needs at least one frame")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        shape = self.frames[0].shape
        for i, f in enumerate(self.frames):
            if f.shape != shape:
                raise ValueError(f"frame {i} has shape {f.shape}, expected {shape}")

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height


@dataclass
class Y4MHeader:
    width: int
    height: int
    frame_rate: float = 30.0
    colorspace: str = "420jpeg"
    extra: list = field(default_factory=list)

    @property
    def chroma_bytes(self) -> int:
        if _CHROMA_LAYOUTS[self.colorspace] == "mono":
            return 0
        cw, ch = (self.width + 1) // 2, (self.height + 1) // 2
        return 2 * cw * ch


def _parse_header(line: bytes) -> Y4MHeader:
    tokens = line.decode("ascii", errors="replace").split()
    if not tokens or tokens[0] != Y4M_SIGNATURE.decode():
        raise Y4MParseError(f"missing YUV4MPEG2 signature, got {tokens[0] if tokens else '<empty>'!r}")
    width = height = None
    rate = 30.0
    colorspace = "420jpeg"
    extra = []
    for tok in tokens[1:]:
        key, val = tok[0], tok[1:]
        if key == "W":
            if not val.isdigit() or int(val) <= 0:
                raise Y4MParseError(f"bad width token {tok!r}")
            width = int(val)
        elif key == "H":
            if not val.isdigit() or int(val) <= 0:
                raise Y4MParseError(f"bad height token {tok!r}")
            height = int(val)
        elif key == "F":
            m = re.fullmatch(r"(\d+):(\d+)", val)
            if not m or int(m.group(2)) == 0 or int(m.group(1)) == 0:
                raise Y4MParseError(f"bad frame-rate token {tok!r}")
            rate = int(m.group(1)) / int(m.group(2))
        elif key == "C":
            if val not in _CHROMA_LAYOUTS:
                raise Y4MParseError(f"unsupported colour-space token {tok!r}")
            colorspace = val
        elif key in "IAX":
            extra.append(tok)
        else:
            raise Y4MParseError(f"unknown header token {tok!r}")
    if width is None or height is None:
        raise Y4MParseError("header lacks W or H token")
    return Y4MHeader(width, height, rate, colorspace, extra)


def load_y4m(path) -> Sequence:
    """Read the luma planes of an 8-bit 4:2:0 or monochrome Y4M file."""
    data = Path(path).read_bytes()
    if not data.startswith(Y4M_SIGNATURE):
        raise Y4MParseError(f"{path}: missing YUV4MPEG2 signature")
    eol = data.find(b"\n")
    if eol < 0:
        raise Y4MParseError(f"{path}: unterminated stream header")
    header = _parse_header(data[:eol])
    luma_bytes = header.width * header.height
    payload = luma_bytes + header.chroma_bytes

    frames = []
    pos = eol + 1
    while pos < len(data):
        eol = data.find(b"\n", pos)
        marker = data[pos:eol if eol >= 0 else len(data)]
        if eol < 0 or not marker.startswith(b"FRAME"):
            raise Y4MParseError(
                f"frame {len(frames)}: expected FRAME marker, got {marker[:16]!r}"
            )
        pos = eol + 1
        chunk = data[pos:pos + payload]
        if len(chunk) < payload:
            raise TruncatedFrameError(len(frames), payload, len(chunk))
        y = np.frombuffer(chunk, dtype=np.uint8, count=luma_bytes)
        frames.append(Frame(y.reshape(header.height, header.width) / 255.0))
        pos += payload
    if not frames:
        raise Y4MParseError(f"{path}: no frames")
    return Sequence(frames, header.frame_rate)


def load_raw(path, width: int, height: int, frame_rate: float = 30.0) -> Sequence:
    """Read a headerless 8-bit Y-only planar file of known dimensions."""
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    data = Path(path).read_bytes()
    size = width * height
    n, rem = divmod(len(data), size)
    if rem:
        raise TruncatedFrameError(n, size, rem)
    if n == 0:
        raise ValueError(f"{path}: empty raw file")
    planes = np.frombuffer(data, dtype=np.uint8).reshape(n, height, width)
    return Sequence([Frame(p / 255.0) for p in planes], frame_rate)


def _rate_token(frame_rate: float) -> str:
    from fractions import Fraction

    fr = Fraction(frame_rate).limit_denominator(1001)
    return f"F{fr.numerator}:{fr.denominator}"


def write_y4m(seq: Sequence, path) -> None:
    """Write a Sequence as 4:2:0 Y4M; chroma planes are neutral grey."""
    w, h = seq.width, seq.height
    header = f"YUV4MPEG2 W{w} H{h} {_rate_token(seq.frame_rate)} Ip A1:1 C420jpeg\n"
    chroma = bytes([128]) * Y4MHeader(w, h).chroma_bytes
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for f in seq.frames:
            fh.write(b"FRAME\n")
            fh.write(quantize(f).tobytes())
            fh.write(chroma)


def quantize(frame: Frame) -> np.ndarray:
    return np.rint(frame.luma * 255.0).astype(np.uint8)


def mean_gradient(luma: np.ndarray) -> float:
    """Average of the mean absolute horizontal and vertical differences."""
    luma = np.asarray(luma, dtype=np.float64)
    gx = np.abs(np.diff(luma, axis=1)).mean() if luma.shape[1] > 1 else 0.0
    gy = np.abs(np.diff(luma, axis=0)).mean() if luma.shape[0] > 1 else 0.0
    return 0.5 * (gx + gy)


# per-unit-energy amplitude; keeps clip(0.5 + amp * e * pattern) unclipped for e <= 2.5
_TEXTURE_GAIN = 0.2


def synth_frame(width, height, spatial_energy, phase=0.0, seed=0) -> Frame:
    """Deterministic textured frame whose gradient energy grows with ``spatial_energy``.

    The texture mixes three sinusoidal gratings with low-pass filtered noise.
    ``phase`` advances the gratings and translates the noise field, so
    successive phases look like a moving scene.
    """
    if width < 16 or height < 16:
        raise ValueError(f"synth_frame needs width, height >= 16, got {width}x{height}")
    if spatial_energy < 0:
        raise ValueError("spatial_energy must be non-negative")
    if spatial_energy == 0:
        return Frame(np.full((height, width), 0.5))

    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    gratings = np.zeros((height, width))
    for _ in range(3):
        cycles = rng.uniform(2.0, 12.0)
        theta = rng.uniform(0.0, np.pi)
        speed = rng.uniform(0.2, 0.6)
        offset = rng.uniform(0.0, 2 * np.pi)
        u = (xx * np.cos(theta) / width + yy * np.sin(theta) / height) * cycles
        gratings += np.sin(2 * np.pi * u + offset + speed * phase) / 3.0

    white = rng.standard_normal((height, width))
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    lowpass = np.exp(-(fx**2 + fy**2) / (2 * 0.08**2))
    noise = np.real(np.fft.ifft2(np.fft.fft2(white) * lowpass))
    noise /= noise.std() or 1.0
    noise = np.clip(noise, -3.0, 3.0) / 3.0
    shift = int(round(2 * phase))
    noise = np.roll(noise, (shift // 2, shift), axis=(0, 1))

    pattern = 0.5 * gratings + 0.5 * noise
    luma = np.clip(0.5 + _TEXTURE_GAIN * spatial_energy * pattern, 0.0, 1.0)
    return Frame(luma)
