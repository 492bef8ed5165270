"""Camera/IMU time alignment for a sensor with two independent clocks.

Every captured frame produces a small sync message carrying the frame's
sequence number and its timestamp on the IMU clock.  Images and sync
messages arrive on separate streams in either order; two bounded ring
buffers hold whichever side arrives first until its partner shows up.

The gyroscope and accelerometer are sampled at different rates; they are
merged into one stream at the gyro rate by linear interpolation of the
accelerometer.
"""

from __future__ import annotations

import bisect
import csv
from collections import OrderedDict, deque
from pathlib import Path
from typing import Any, Iterable, NamedTuple

import numpy as np


class SyncMessage(NamedTuple):
    seq: int
    stamp: float


class ImageMessage(NamedTuple):
    seq: int
    payload: Any
    arrival_stamp: float


class StampedImage(NamedTuple):
    seq: int
    payload: Any
    stamp: float


class ImuSample(NamedTuple):
    stamp: float
    gyro: tuple
    accel: tuple


class RingBuffer:
    """Fixed-capacity, seq-ordered buffer with exact-match lookup.

    Pushing into a full buffer evicts the oldest entry and increments
    ``dropped``; it never blocks.
    """

    def __init__(self, capacity: int = 32):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.dropped = 0
        self._items: OrderedDict[int, Any] = OrderedDict()
        self._last_seq: int | None = None

    def push(self, seq: int, item) -> None:
        if self._last_seq is not None and seq <= self._last_seq:
            raise ValueError(f"seq {seq} is not increasing (last {self._last_seq})")
        self._last_seq = seq
        if len(self._items) >= self.capacity:
            self._items.popitem(last=False)
            self.dropped += 1
        self._items[seq] = item

    def pop(self, seq: int):
        return self._items.pop(seq, None)

    def __contains__(self, seq) -> bool:
        return seq in self._items

    def __len__(self) -> int:
        return len(self._items)

    def seqs(self) -> list[int]:
        return list(self._items)


def apply_camera_offset(stamp: float, offset: float) -> float:
    return stamp + offset


def match_image(img: ImageMessage, sync_buf: RingBuffer, img_buf: RingBuffer,
                offset: float = 0.0) -> StampedImage | None:
    """Stamp ``img`` with its sync message's IMU time, or park it until that arrives."""
    sync = sync_buf.pop(img.seq)
    if sync is None:
        img_buf.push(img.seq, img)
        return None
    return StampedImage(img.seq, img.payload, apply_camera_offset(sync.stamp, offset))


def match_sync(sync: SyncMessage, sync_buf: RingBuffer, img_buf: RingBuffer,
               offset: float = 0.0) -> StampedImage | None:
    img = img_buf.pop(sync.seq)
    if img is None:
        sync_buf.push(sync.seq, sync)
        return None
    return StampedImage(img.seq, img.payload, apply_camera_offset(sync.stamp, offset))


class ImageSynchronizer:
    """Single-consumer state machine pairing images with sync messages."""

    def __init__(self, capacity: int = 32, offset: float = 0.0):
        self.sync_buf = RingBuffer(capacity)
        self.img_buf = RingBuffer(capacity)
        self.offset = offset
        self.emitted = 0

    @property
    def dropped_images(self) -> int:
        return self.img_buf.dropped

    @property
    def dropped_syncs(self) -> int:
        return self.sync_buf.dropped

    def add_image(self, img: ImageMessage) -> StampedImage | None:
        out = match_image(img, self.sync_buf, self.img_buf, self.offset)
        self.emitted += out is not None
        return out

    def add_sync(self, sync: SyncMessage) -> StampedImage | None:
        out = match_sync(sync, self.sync_buf, self.img_buf, self.offset)
        self.emitted += out is not None
        return out


def merge_imu(gyro: Iterable, accel: Iterable) -> list[ImuSample]:
    """Merge ``(stamp, xyz)`` gyro and accel streams at the gyro rate.

    Gyro samples outside the accelerometer's time span are dropped; the
    accelerometer is never extrapolated.
    """
    gyro = list(gyro)
    accel = list(accel)
    if not gyro or len(accel) < 1:
        return []
    ta = np.array([a[0] for a in accel], dtype=float)
    va = np.array([a[1] for a in accel], dtype=float).reshape(-1, 3)
    tg = np.array([g[0] for g in gyro], dtype=float)
    if np.any(np.diff(ta) <= 0) or np.any(np.diff(tg) <= 0):
        raise ValueError("streams must have strictly increasing stamps")
    inside = (tg >= ta[0]) & (tg <= ta[-1])
    merged = np.column_stack([np.interp(tg[inside], ta, va[:, i]) for i in range(3)])
    kept = [g for g, ok in zip(gyro, inside) if ok]
    return [ImuSample(float(g[0]), tuple(map(float, g[1])), tuple(m.tolist())) for g, m in zip(kept, merged)]


class ImuMerger:
    """Streaming counterpart of :func:`merge_imu`.

    Gyro samples are withheld until the accelerometer history brackets
    their stamp.  Samples older than the first accelerometer reading (or
    than the retained history) can never be bracketed and are dropped
    and counted.
    """

    def __init__(self, history: int = 64):
        self._pending: list[tuple[float, tuple]] = []
        self._accel: deque[tuple[float, np.ndarray]] = deque(maxlen=history)
        self._last_gyro: float | None = None
        self.dropped = 0

    def push_gyro(self, stamp: float, gyro) -> list[ImuSample]:
        if self._last_gyro is not None and stamp <= self._last_gyro:
            raise ValueError("gyro stamps must increase")
        self._last_gyro = stamp
        self._pending.append((stamp, tuple(map(float, gyro))))
        return self._drain()

    def push_accel(self, stamp: float, accel) -> list[ImuSample]:
        if self._accel and stamp <= self._accel[-1][0]:
            raise ValueError("accel stamps must increase")
        self._accel.append((stamp, np.asarray(accel, dtype=float)))
        return self._drain()

    def _interp(self, stamp: float) -> np.ndarray:
        times = [a[0] for a in self._accel]
        i = bisect.bisect_left(times, stamp)
        t1, a1 = self._accel[i]
        if t1 == stamp:
            return a1
        t0, a0 = self._accel[i - 1]
        return a0 + (stamp - t0) / (t1 - t0) * (a1 - a0)

    def _drain(self) -> list[ImuSample]:
        if not self._accel:
            return []
        first, last = self._accel[0][0], self._accel[-1][0]
        out, keep = [], []
        for stamp, gyro in self._pending:
            if stamp < first:
                self.dropped += 1
            elif stamp <= last:
                out.append(ImuSample(stamp, gyro, tuple(self._interp(stamp).tolist())))
            else:
                keep.append((stamp, gyro))
        self._pending = keep
        return out

    def flush(self) -> int:
        """Drop gyro samples that can no longer be bracketed; returns how many."""
        n = len(self._pending)
        self.dropped += n
        self._pending = []
        return n


# ---------------------------------------------------------------------------
# replay files: kind,seq_or_blank,stamp,payload...

STREAM_KINDS = ("img", "sync", "gyro", "accel")


def write_stream(records: Iterable[tuple], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for kind, seq, stamp, *payload in records:
            if kind not in STREAM_KINDS:
                raise ValueError(f"unknown record kind {kind!r}")
            writer.writerow([kind, "" if seq is None else int(seq), repr(float(stamp)), *payload])


def read_stream(path) -> list[tuple]:
    records = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            kind, seq, stamp, *payload = row
            if kind not in STREAM_KINDS:
                raise ValueError(f"unknown record kind {kind!r}")
            if kind in ("gyro", "accel"):
                payload = [float(v) for v in payload]
            records.append((kind, int(seq) if seq else None, float(stamp), *payload))
    return records


def replay(records: Iterable[tuple], capacity: int = 32, offset: float = 0.0):
    """Feed a recorded stream through the synchronizer and IMU merger.

    Returns ``(stamped_images, imu_samples, synchronizer, merger)``.
    """
    sync = ImageSynchronizer(capacity, offset)
    merger = ImuMerger()
    images, imu = [], []
    for kind, seq, stamp, *payload in records:
        if kind == "img":
            out = sync.add_image(ImageMessage(seq, payload[0] if payload else None, stamp))
            if out is not None:
                images.append(out)
        elif kind == "sync":
            out = sync.add_sync(SyncMessage(seq, stamp))
            if out is not None:
                images.append(out)
        elif kind == "gyro":
            imu.extend(merger.push_gyro(stamp, payload[:3]))
        else:
            imu.extend(merger.push_accel(stamp, payload[:3]))
    merger.flush()
    return images, imu, sync, merger
