"""Time-tag streams and their binary/CSV file formats.

Binary layout (little endian): a 16-byte header ``b"TTAG"``, version u16,
10 reserved zero bytes, then packed 9-byte records (channel u8, time_ps u64).
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

SIGNAL, IDLER = 0, 1
CHANNELS = {"signal": SIGNAL, "idler": IDLER}

MAGIC = b"TTAG"
VERSION = 1
HEADER = struct.Struct("<4sH10x")
RECORD = np.dtype([("channel", "<u1"), ("time_ps", "<u8")])


class TagFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TimeTag:
    channel: int
    time_ps: int


@dataclass(frozen=True)
class TimeTagStream:
    channels: np.ndarray
    times: np.ndarray
    duration_ps: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.uint8)
        t = np.asarray(self.times, dtype=np.int64)
        if ch.shape != t.shape or t.ndim != 1:
            raise ValueError("channels and times must be 1-d arrays of equal length")
        if t.size and (np.any(np.diff(t) < 0) or t[0] < 0):
            raise ValueError("time tags must be nonnegative and nondecreasing")
        ch.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return self.times.size

    def __iter__(self):
        for c, t in zip(self.channels, self.times):
            yield TimeTag(int(c), int(t))

    def select(self, channel) -> "TimeTagStream":
        code = CHANNELS[channel] if isinstance(channel, str) else int(channel)
        keep = self.channels == code
        return TimeTagStream(self.channels[keep], self.times[keep], self.duration_ps, self.meta)

    def count(self, channel) -> int:
        code = CHANNELS[channel] if isinstance(channel, str) else int(channel)
        return int(np.count_nonzero(self.channels == code))


def write_ttag(path, stream: TimeTagStream) -> None:
    rec = np.empty(len(stream), dtype=RECORD)
    rec["channel"] = stream.channels
    rec["time_ps"] = stream.times
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION))
        f.write(rec.tobytes())


def read_ttag(path) -> TimeTagStream:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER.size:
        raise TagFormatError(f"{path}: truncated header")
    magic, version = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TagFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise TagFormatError(f"{path}: unsupported version {version}")
    body = raw[HEADER.size:]
    if len(body) % RECORD.itemsize:
        raise TagFormatError(f"{path}: trailing partial record")
    rec = np.frombuffer(body, dtype=RECORD)
    times = rec["time_ps"].astype(np.int64)
    duration = int(times[-1]) + 1 if times.size else 0
    try:
        return TimeTagStream(rec["channel"].copy(), times, duration)
    except ValueError as e:
        raise TagFormatError(f"{path}: {e}") from None


def write_tag_csv(path, stream: TimeTagStream) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["channel", "time_ps"])
        w.writerows(zip(stream.channels.tolist(), stream.times.tolist()))


def read_tag_csv(path) -> TimeTagStream:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    try:
        ch = np.array([int(r["channel"]) for r in rows], dtype=np.uint8)
        t = np.array([int(r["time_ps"]) for r in rows], dtype=np.int64)
        return TimeTagStream(ch, t, int(t[-1]) + 1 if t.size else 0)
    except (KeyError, ValueError) as e:
        raise TagFormatError(f"{path}: {e}") from None
