"""量化後影像區段的傳輸訊息與其位元組格式。

Wire format (little-endian)::

    offset  size  field
    0       1     codec_tag        (0 identity, 1 kmeans, 2 jpeg)
    1       1     format version   (currently 1)
    2       2     segment_index
    4       4     decoded_length   (elements after decoding)
    8       4     metadata_length
    12      4     payload_length
    16      ...   metadata, then payload
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from common.errors import CodecError


HEADER = struct.Struct("<BBHIII")
HEADER_SIZE = HEADER.size
FORMAT_VERSION = 1

CODEC_TAGS = {"identity": 0, "kmeans": 1, "jpeg": 2}
CODEC_NAMES = {v: k for k, v in CODEC_TAGS.items()}


@dataclass(frozen=True)
class QuantizedMessage:
    codec: str
    segment_index: int
    decoded_length: int
    metadata: bytes
    payload: bytes

    @property
    def codec_tag(self) -> int:
        return CODEC_TAGS[self.codec]

    @property
    def byte_size(self) -> int:
        """metadata 加 payload 的位元組數；不含固定的 16 位元組標頭。"""

        return len(self.metadata) + len(self.payload)

    @property
    def header_bytes(self) -> int:
        return HEADER_SIZE

    @property
    def wire_size(self) -> int:
        return HEADER_SIZE + self.byte_size

    def to_bytes(self) -> bytes:
        if not 0 <= self.segment_index <= 0xFFFF:
            raise CodecError(f"segment_index {self.segment_index} does not fit in u16")
        header = HEADER.pack(
            self.codec_tag,
            FORMAT_VERSION,
            self.segment_index,
            self.decoded_length,
            len(self.metadata),
            len(self.payload),
        )
        return header + self.metadata + self.payload

    @classmethod
    def from_bytes(cls, buf: bytes) -> "QuantizedMessage":
        if len(buf) < HEADER_SIZE:
            raise CodecError(f"message truncated: {len(buf)} bytes < header {HEADER_SIZE}")
        tag, version, segment, length, meta_len, payload_len = HEADER.unpack_from(buf, 0)
        if version != FORMAT_VERSION:
            raise CodecError(f"unsupported message format version {version}")
        if tag not in CODEC_NAMES:
            raise CodecError(f"unknown codec tag {tag}")
        if len(buf) != HEADER_SIZE + meta_len + payload_len:
            raise CodecError(
                f"message length {len(buf)} does not match header ({HEADER_SIZE}+{meta_len}+{payload_len})"
            )
        meta = bytes(buf[HEADER_SIZE : HEADER_SIZE + meta_len])
        payload = bytes(buf[HEADER_SIZE + meta_len :])
        return cls(CODEC_NAMES[tag], segment, length, meta, payload)
