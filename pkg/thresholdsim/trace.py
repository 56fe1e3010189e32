"""
Per-trial trace file of a Monte Carlo run.

Layout (little-endian): magic b"TSDT", uint16 version, uint64 record count,
then fixed-size records (trial int64, channel int32, gain float64, time
float64). channel -1 and time -1.0 mark a pulse that never crossed.
Records are buffered in fixed-capacity pages and flushed a page at a time.
"""

import logging
import os
import struct

import numpy as np

from thresholdsim.errors import ConsistencyError

logger = logging.getLogger(__name__)

MAGIC = b"TSDT"
VERSION = 1
HEADER = struct.Struct("<4sHQ")
RECORD = struct.Struct("<qidd")
PAGE_RECORDS = 512
NO_HIT_CHANNEL = -1
NO_HIT_TIME = -1.0

RECORD_DTYPE = np.dtype([("trial", "<i8"), ("channel", "<i4"), ("gain", "<f8"), ("time", "<f8")])


class TracePage:

    def __init__(self):
        self.num_records = 0
        self.data = bytearray(PAGE_RECORDS * RECORD.size)

    def has_capacity(self):
        return self.num_records < PAGE_RECORDS

    def write(self, trial, channel, gain, time):
        if not self.has_capacity():
            return False
        RECORD.pack_into(self.data, self.num_records * RECORD.size, trial, channel, gain, time)
        self.num_records += 1
        return True

    def read(self, slot):
        return RECORD.unpack_from(self.data, slot * RECORD.size)

    def payload(self):
        return bytes(self.data[:self.num_records * RECORD.size])


class TraceWriter:
    """Appends records through a page buffer; the header count is patched on close."""

    def __init__(self):
        self.path = None
        self.file = None
        self.page = TracePage()
        self.count = 0

    def open(self, path):
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self.path = path
        self.file = open(path, "wb")
        self.file.write(HEADER.pack(MAGIC, VERSION, 0))
        self.count = 0
        return self

    def write(self, trial, channel, gain, time):
        if not self.page.write(int(trial), int(channel), float(gain), float(time)):
            self.flush()
            self.page.write(int(trial), int(channel), float(gain), float(time))
        self.count += 1

    def write_many(self, trials, channels, gains, times):
        for record in zip(trials, channels, gains, times):
            self.write(*record)

    def flush(self):
        if self.page.num_records:
            self.file.write(self.page.payload())
            self.page = TracePage()

    def close(self):
        if self.file is None:
            return
        self.flush()
        self.file.seek(0)
        self.file.write(HEADER.pack(MAGIC, VERSION, self.count))
        self.file.close()
        self.file = None
        logger.info("wrote %d trace records to %s", self.count, self.path)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_trace(path):
    """Structured numpy array of the records in a trace file."""
    with open(path, "rb") as f:
        head = f.read(HEADER.size)
        if len(head) != HEADER.size:
            raise ConsistencyError("trace file is truncated", {"path": path})
        magic, version, count = HEADER.unpack(head)
        if magic != MAGIC or version != VERSION:
            raise ConsistencyError("not a trace file", {"path": path, "magic": magic, "version": version})
        body = f.read()
    if len(body) != count * RECORD.size:
        raise ConsistencyError("trace record count does not match the header",
                               {"path": path, "count": count, "bytes": len(body)})
    return np.frombuffer(body, dtype=RECORD_DTYPE, count=count)
