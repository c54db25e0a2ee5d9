"""
Replay Buffer Module

Fixed-capacity episodic memory of encoded feature maps, maintained by
reservoir sampling over the stream of training samples.

Checkpoint layout (little-endian):
    header  magic(8s) version(u32) capacity(u32) seen(u64) count(u32)
            channels(u32) height(u32) width(u32) logits_dim(u32) element_size(u32)
    entry   map values (element_size bytes each, float32 or float16)
            logits (logits_dim float32, NaN when the entry has none)
            label (i32) task id (i32)
"""

import logging
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from errors import EmptyBufferError, PreconditionError, ShapeMismatchError

logger = logging.getLogger(__name__)

MAGIC = b'CLFDBUF\x00'
VERSION = 1
_HEADER = struct.Struct('<8sIIQIIIIII')
HEADER_BYTES = _HEADER.size
_ENTRY_TAIL = struct.Struct('<ii')


@dataclass
class BufferEntry:
    """One stored sample: encoded map, label, task id and optional logits."""

    map: np.ndarray
    label: int
    task_id: int
    logits: Optional[np.ndarray] = None


def reservoir_index(seen, capacity, rng):
    """
    Slot for the next stream item, or -1 when it is discarded.

    While the buffer fills, item n goes to slot n. Afterwards r is drawn
    uniformly from [0, seen] and the item replaces slot r when r < capacity.
    """
    if seen < capacity:
        return seen
    r = int(rng.integers(0, seen + 1))
    return r if r < capacity else -1


class ReservoirBuffer:
    """
    Reservoir-sampled store of BufferEntry objects.
    """

    def __init__(self, capacity, quantize=False):
        """
        Args:
            capacity (int): Maximum number of entries (0 disables storage).
            quantize (bool): Store maps as float16 instead of float32.
        """
        if capacity < 0:
            raise ValueError(f"capacity must be non-negative, got {capacity}")
        self.capacity = capacity
        self.quantize = quantize
        self.entries = []
        self.seen = 0

    def __len__(self):
        return len(self.entries)

    def is_empty(self):
        return not self.entries

    def reservoir_insert(self, entry, rng):
        """
        Offer one entry to the buffer.

        Returns:
            int: The slot written, or -1 when the entry was discarded.
        """
        if self.capacity <= 0:
            raise PreconditionError("reservoir insert needs a positive capacity")
        if self.quantize:
            entry = BufferEntry(entry.map.astype(np.float16), entry.label, entry.task_id, entry.logits)
        index = reservoir_index(self.seen, self.capacity, rng)
        if index == len(self.entries):
            self.entries.append(entry)
        elif index >= 0:
            self.entries[index] = entry
        self.seen += 1
        return index

    def add_batch(self, maps, labels, task_id, rng, logits=None):
        """Offer a batch of maps; logits, when given, are stored per entry."""
        for i in range(len(labels)):
            self.reservoir_insert(
                BufferEntry(
                    map=np.array(maps[i], dtype=np.float32),
                    label=int(labels[i]),
                    task_id=task_id,
                    logits=None if logits is None else np.array(logits[i], dtype=np.float32),
                ),
                rng,
            )

    def sample_batch(self, k, rng):
        """
        Draw k entries, with replacement only when k exceeds the buffer size.

        Raises:
            EmptyBufferError: If the buffer holds no entries.
        """
        if not self.entries:
            raise EmptyBufferError("cannot sample from an empty buffer")
        n = len(self.entries)
        if k > n:
            picks = rng.integers(0, n, size=k)
        else:
            picks = rng.choice(n, size=k, replace=False)
        return [self.entries[i] for i in picks]

    def _layout(self):
        if self.entries:
            shape = self.entries[0].map.shape
        else:
            shape = (0, 0, 0)
        logits_dim = next((e.logits.shape[0] for e in self.entries if e.logits is not None), 0)
        element_size = 2 if self.quantize else 4
        return shape, logits_dim, element_size

    def entry_bytes(self):
        """Serialized size of one entry under the current layout."""
        shape, logits_dim, element_size = self._layout()
        return int(np.prod(shape)) * element_size + logits_dim * 4 + _ENTRY_TAIL.size

    def memory_footprint(self):
        """Exact serialized byte count: header plus every entry."""
        return HEADER_BYTES + len(self.entries) * self.entry_bytes()

    def to_bytes(self):
        shape, logits_dim, element_size = self._layout()
        map_dtype = '<f2' if element_size == 2 else '<f4'
        chunks = [_HEADER.pack(MAGIC, VERSION, self.capacity, self.seen, len(self.entries),
                               *shape, logits_dim, element_size)]
        for entry in self.entries:
            if entry.map.shape != shape:
                raise ShapeMismatchError(f"buffer maps differ in shape: {entry.map.shape} vs {shape}")
            chunks.append(np.ascontiguousarray(entry.map, dtype=map_dtype).tobytes())
            if logits_dim:
                logits = entry.logits if entry.logits is not None else np.full(logits_dim, np.nan)
                chunks.append(np.asarray(logits, dtype='<f4').tobytes())
            chunks.append(_ENTRY_TAIL.pack(entry.label, entry.task_id))
        return b''.join(chunks)

    @classmethod
    def from_bytes(cls, payload):
        magic, version, capacity, seen, count, c, h, w, logits_dim, element_size = \
            _HEADER.unpack_from(payload, 0)
        if magic != MAGIC or version != VERSION:
            raise ValueError("not a replay buffer checkpoint")
        buffer = cls(capacity, quantize=(element_size == 2))
        buffer.seen = seen
        map_dtype = '<f2' if element_size == 2 else '<f4'
        map_count = c * h * w
        offset = HEADER_BYTES
        for _ in range(count):
            values = np.frombuffer(payload, dtype=map_dtype, count=map_count, offset=offset)
            offset += map_count * element_size
            logits = None
            if logits_dim:
                logits = np.frombuffer(payload, dtype='<f4', count=logits_dim, offset=offset).astype(np.float32)
                offset += logits_dim * 4
                if np.isnan(logits).all():
                    logits = None
            label, task_id = _ENTRY_TAIL.unpack_from(payload, offset)
            offset += _ENTRY_TAIL.size
            buffer.entries.append(BufferEntry(
                map=values.reshape(c, h, w).astype(np.float16 if element_size == 2 else np.float32),
                label=label, task_id=task_id, logits=logits))
        return buffer

    def save(self, path):
        payload = self.to_bytes()
        with open(path, 'wb') as f:
            f.write(payload)
        logger.info(f"Buffer checkpoint written to {path} ({len(payload)} bytes, {len(self)} entries)")
        return len(payload)

    @classmethod
    def load(cls, path):
        with open(path, 'rb') as f:
            return cls.from_bytes(f.read())

    def stacked(self, entries=None):
        """Stack entries into (maps, labels, task_ids, logits-or-None) arrays."""
        entries = self.entries if entries is None else entries
        maps = np.stack([e.map for e in entries]).astype(np.float32)
        labels = np.array([e.label for e in entries], dtype=np.int64)
        task_ids = np.array([e.task_id for e in entries], dtype=np.int64)
        if all(e.logits is not None for e in entries):
            logits = np.stack([e.logits for e in entries]).astype(np.float32)
        else:
            logits = None
        return maps, labels, task_ids, logits


def raw_image_bytes(shape, element_size=4):
    """Bytes needed to store one raw image of `shape` at the given precision."""
    return int(np.prod(shape)) * element_size
