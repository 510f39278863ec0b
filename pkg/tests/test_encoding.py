from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from contract_slide.core.encoding import (
    canonical_decode,
    canonical_encode,
    decode_kv_list,
    decode_partial,
    fingerprint_of,
)
from contract_slide.core.errors import EncodingError
from contract_slide.core.model import (
    Fingerprint,
    FingerprintList,
    KeyedValues,
    KVPair,
    Partial,
    Record,
    RecordList,
)

values = st.binary(max_size=12)
keys = st.binary(min_size=1, max_size=8)


def test_partial_layout_is_tag_count_and_length_prefixed_fields() -> None:
    encoded = canonical_encode(Partial((b"ab", b"")))

    assert encoded == bytes([0x04]) + b"\x00\x00\x00\x02" + b"\x00\x00\x00\x02ab" + b"\x00\x00\x00\x00"


def test_kv_list_decodes_back_to_pairs() -> None:
    pairs = [KVPair(b"a", b"1"), KVPair(b"b", b"2")]

    assert decode_kv_list(canonical_encode(pairs)) == pairs
    assert decode_kv_list(canonical_encode([])) == []


def test_record_and_record_list_differ() -> None:
    record = Record(b"x")

    assert fingerprint_of(record) != fingerprint_of(RecordList((record,)))


def test_fingerprint_list_round_trip() -> None:
    items = (fingerprint_of(Record(b"a")), fingerprint_of(Record(b"b")))

    assert canonical_decode(canonical_encode(FingerprintList(items))) == FingerprintList(items)


@given(st.lists(values, max_size=6), st.lists(values, max_size=6))
def test_partial_encoding_is_injective(left: list[bytes], right: list[bytes]) -> None:
    same_bytes = canonical_encode(Partial(tuple(left))) == canonical_encode(Partial(tuple(right)))

    assert same_bytes == (left == right)


@given(keys, st.lists(values, max_size=6), keys, st.lists(values, max_size=6))
def test_keyed_values_fingerprint_separates_key_and_values(
    key_a: bytes, values_a: list[bytes], key_b: bytes, values_b: list[bytes]
) -> None:
    left = fingerprint_of(KeyedValues(key_a, tuple(values_a)))
    right = fingerprint_of(KeyedValues(key_b, tuple(values_b)))

    assert (left == right) == (key_a == key_b and values_a == values_b)


@given(st.lists(values, max_size=8))
def test_decode_partial_inverts_encode(items: list[bytes]) -> None:
    assert decode_partial(canonical_encode(Partial(tuple(items)))) == Partial(tuple(items))


pairs = st.builds(KVPair, keys, values)


@given(pairs, pairs)
def test_pair_encoding_is_injective(left: KVPair, right: KVPair) -> None:
    assert (canonical_encode(left) == canonical_encode(right)) == (left == right)


@given(st.lists(pairs, max_size=5), st.lists(pairs, max_size=5))
def test_pair_list_encoding_is_injective(left: list[KVPair], right: list[KVPair]) -> None:
    assert (canonical_encode(left) == canonical_encode(right)) == (left == right)


@given(st.binary(min_size=1, max_size=16), st.binary(min_size=1, max_size=16))
def test_record_encoding_is_injective(left: bytes, right: bytes) -> None:
    assert (canonical_encode(Record(left)) == canonical_encode(Record(right))) == (left == right)


def test_ten_thousand_distinct_records_have_distinct_fingerprints() -> None:
    digests = {fingerprint_of(Record(f"record-{index}".encode())).digest for index in range(10_000)}

    assert len(digests) == 10_000


def test_unknown_tag_is_rejected() -> None:
    with pytest.raises(EncodingError):
        canonical_decode(b"\x7f\x00")


def test_truncated_bytes_are_rejected() -> None:
    encoded = canonical_encode(KVPair(b"key", b"value"))

    with pytest.raises(EncodingError):
        canonical_decode(encoded[:-1])


def test_trailing_bytes_are_rejected() -> None:
    with pytest.raises(EncodingError):
        canonical_decode(canonical_encode(Record(b"x")) + b"\x00")


def test_decode_partial_rejects_other_values() -> None:
    with pytest.raises(EncodingError):
        decode_partial(canonical_encode(Record(b"x")))


def test_fingerprint_requires_32_bytes() -> None:
    with pytest.raises(ValueError):
        Fingerprint(b"short")


def test_model_rejects_empty_record_and_key() -> None:
    with pytest.raises(ValueError):
        Record(b"")
    with pytest.raises(ValueError):
        KVPair(b"", b"v")
