"""Canonical byte encoding and fingerprints.

Every encoding starts with one type-tag byte. Fields are written as a 4-byte
big-endian length followed by the raw bytes; lists carry a 4-byte big-endian
element count before their elements. Fingerprints are SHA-256 digests of these
encodings, so the format is the contract between task identities and the memo
store's keys.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Sequence, TypeAlias

from contract_slide.core.enums import EncodingTag
from contract_slide.core.errors import EncodingError
from contract_slide.core.model import (
    FINGERPRINT_SIZE,
    Fingerprint,
    FingerprintList,
    KeyedValues,
    KVPair,
    Partial,
    Record,
    RecordList,
)

Encodable: TypeAlias = (
    Record | KVPair | Sequence[KVPair] | Partial | RecordList | KeyedValues | FingerprintList
)

_U32 = struct.Struct(">I")


def _field(raw: bytes) -> bytes:
    return _U32.pack(len(raw)) + raw


def _count(size: int) -> bytes:
    return _U32.pack(size)


def canonical_encode(value: Encodable) -> bytes:
    if isinstance(value, Record):
        return bytes([EncodingTag.RECORD]) + _field(value.data)
    if isinstance(value, KVPair):
        return bytes([EncodingTag.KV_PAIR]) + _field(value.key) + _field(value.value)
    if isinstance(value, Partial):
        return bytes([EncodingTag.PARTIAL]) + _count(len(value.values)) + b"".join(map(_field, value.values))
    if isinstance(value, RecordList):
        body = b"".join(_field(record.data) for record in value.records)
        return bytes([EncodingTag.RECORD_LIST]) + _count(len(value.records)) + body
    if isinstance(value, KeyedValues):
        body = b"".join(map(_field, value.values))
        return bytes([EncodingTag.KEYED_VALUES]) + _field(value.key) + _count(len(value.values)) + body
    if isinstance(value, FingerprintList):
        body = b"".join(_field(item.digest) for item in value.items)
        return bytes([EncodingTag.FINGERPRINT_LIST]) + _count(len(value.items)) + body
    if isinstance(value, (list, tuple)):
        parts = [bytes([EncodingTag.KV_LIST]), _count(len(value))]
        for pair in value:
            if not isinstance(pair, KVPair):
                raise TypeError(f"KV list holds {type(pair).__name__}, expected KVPair")
            parts.append(_field(pair.key))
            parts.append(_field(pair.value))
        return b"".join(parts)
    raise TypeError(f"no canonical encoding for {type(value).__name__}")


class _Reader:
    def __init__(self, raw: bytes) -> None:
        self._raw = raw
        self._offset = 0

    def take(self, size: int) -> bytes:
        end = self._offset + size
        if end > len(self._raw):
            raise EncodingError("canonical bytes truncated")
        chunk = self._raw[self._offset:end]
        self._offset = end
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def field(self) -> bytes:
        return self.take(self.u32())

    def fields(self) -> tuple[bytes, ...]:
        return tuple(self.field() for _ in range(self.u32()))

    def finish(self) -> None:
        if self._offset != len(self._raw):
            raise EncodingError("trailing bytes after canonical value")


def canonical_decode(raw: bytes) -> Encodable:
    if not raw:
        raise EncodingError("empty canonical value")
    try:
        tag = EncodingTag(raw[0])
    except ValueError as exc:
        raise EncodingError(f"unknown type tag {raw[0]:#04x}") from exc
    reader = _Reader(raw)
    reader.take(1)
    try:
        value = _decode_body(tag, reader)
    except ValueError as exc:
        raise EncodingError(str(exc)) from exc
    reader.finish()
    return value


def _decode_body(tag: EncodingTag, reader: _Reader) -> Encodable:
    match tag:
        case EncodingTag.RECORD:
            return Record(reader.field())
        case EncodingTag.KV_PAIR:
            key = reader.field()
            return KVPair(key, reader.field())
        case EncodingTag.KV_LIST:
            count = reader.u32()
            pairs: list[KVPair] = []
            for _ in range(count):
                key = reader.field()
                pairs.append(KVPair(key, reader.field()))
            return pairs
        case EncodingTag.PARTIAL:
            return Partial(reader.fields())
        case EncodingTag.RECORD_LIST:
            return RecordList(tuple(Record(item) for item in reader.fields()))
        case EncodingTag.KEYED_VALUES:
            key = reader.field()
            return KeyedValues(key, reader.fields())
        case EncodingTag.FINGERPRINT_LIST:
            items = reader.fields()
            if any(len(item) != FINGERPRINT_SIZE for item in items):
                raise EncodingError("fingerprint list entry has the wrong width")
            return FingerprintList(tuple(Fingerprint(item) for item in items))
    raise EncodingError(f"unhandled type tag {tag!r}")


def decode_kv_list(raw: bytes) -> list[KVPair]:
    value = canonical_decode(raw)
    if not isinstance(value, list):
        raise EncodingError("expected an encoded KV list")
    return value


def decode_partial(raw: bytes) -> Partial:
    value = canonical_decode(raw)
    if not isinstance(value, Partial):
        raise EncodingError("expected an encoded partial")
    return value


def fingerprint(raw: bytes) -> Fingerprint:
    return Fingerprint(hashlib.sha256(raw).digest())


def fingerprint_of(value: Encodable) -> Fingerprint:
    return fingerprint(canonical_encode(value))
