import random
import threading

import pytest

from fabricsim.errors import (
    CorruptHeader,
    InvalidLogConfig,
    NameCollision,
    PayloadTooLarge,
    SeqEvicted,
    SeqNotAssigned,
    UnknownLog,
)
from fabricsim.logstore import HEADER_SIZE, RECORD_OVERHEAD, LogRegistry, LogStore


def mid(i: int) -> bytes:
    return i.to_bytes(16, "little")


@pytest.fixture
def store(tmp_path):
    s = LogStore.create(tmp_path / "telemetry.log", "telemetry", 1024, 4096)
    yield s
    s.close()


# -- create -------------------------------------------------------------------

def test_create_fresh_log_starts_at_seq_one(store):
    assert store.header.next_seq == 1
    assert store.header.earliest_seq == 1
    assert store.header.element_size == 1024
    assert store.header.capacity == 4096


def test_create_rejects_zero_element_size(tmp_path):
    with pytest.raises(InvalidLogConfig):
        LogStore.create(tmp_path / "t.log", "t", 0, 10)


def test_create_rejects_zero_capacity(tmp_path):
    with pytest.raises(InvalidLogConfig):
        LogStore.create(tmp_path / "t.log", "t", 8, 0)


def test_create_twice_same_name_collides(tmp_path):
    LogStore.create(tmp_path / "dup.log", "dup", 8, 4).close()
    with pytest.raises(NameCollision):
        LogStore.create(tmp_path / "dup.log", "dup", 8, 4)


# -- append -------------------------------------------------------------------

def test_first_append_returns_seq_one(store):
    assert store.append(b"hello", mid(1)) == 1
    assert store.header.next_seq == 2


def test_appends_are_monotone(store):
    for i in range(1, 11):
        assert store.append(bytes([i]), mid(i)) == i


def test_duplicate_message_id_returns_original_seq(store):
    for i in range(1, 8):
        store.append(bytes([i]), mid(i))
    length_before = len(store)
    assert store.append(b"retry-payload", mid(7)) == 7
    assert len(store) == length_before


def test_oversized_payload_rejected(store):
    with pytest.raises(PayloadTooLarge):
        store.append(b"x" * 1025, mid(1))


def test_dedup_idempotence_matches_single_append(tmp_path):
    a = LogStore.create(tmp_path / "a.log", "a", 64, 128)
    b = LogStore.create(tmp_path / "b.log", "b", 64, 128)
    a.append(b"payload", mid(5))
    b.append(b"payload", mid(5))
    b.append(b"payload", mid(5))
    assert a.scan(1, 10).entries == b.scan(1, 10).entries
    a.close()
    b.close()


# -- read ----------------------------------------------------------------------

def test_read_round_trips_exact_bytes(store):
    payloads = [b"", b"x", b"hello world", b"\x00\x01\x02",
                "météo-à-paris".encode("utf-8").ljust(700, b"-")]
    seqs = [store.append(p, mid(i)) for i, p in enumerate(payloads)]
    for seq, payload in zip(seqs, payloads):
        assert store.read(seq).payload == payload


def test_read_next_seq_not_assigned(store):
    store.append(b"one", mid(1))
    with pytest.raises(SeqNotAssigned):
        store.read(store.next_seq)


def test_read_evicted_after_capacity_overflow(tmp_path):
    # oracle: brute-force append loop one past capacity evicts seq 1
    cap = 16
    s = LogStore.create(tmp_path / "ring.log", "ring", 8, cap)
    for i in range(1, cap + 2):
        s.append(bytes([i % 256]), mid(i))
    with pytest.raises(SeqEvicted):
        s.read(1)
    assert s.read(2).payload == bytes([2])
    assert s.earliest_seq == 2
    s.close()


def test_read_your_write_for_all_sizes(tmp_path):
    element = 96
    s = LogStore.create(tmp_path / "sizes.log", "sizes", element, 256)
    rng = random.Random(13)
    for size in range(element + 1):
        payload = bytes(rng.randrange(256) for _ in range(size))
        seq = s.append(payload, mid(size))
        assert s.read(seq).payload == payload
    s.close()


# -- scan ---------------------------------------------------------------------

def test_scan_empty_range_on_empty_log(store):
    result = store.scan(1, 0)
    assert result.entries == []
    assert not result.truncated


def test_scan_six_entries_in_order(store):
    for i in range(1, 7):
        store.append(bytes([i]), mid(i))
    result = store.scan(1, 6)
    assert [e.seq for e in result.entries] == [1, 2, 3, 4, 5, 6]
    assert [e.payload for e in result.entries] == [bytes([i]) for i in range(1, 7)]
    assert not result.truncated


def test_scan_spanning_evicted_region_is_marked(tmp_path):
    # oracle: in-memory list of every append
    cap = 8
    total = 20
    s = LogStore.create(tmp_path / "ev.log", "ev", 8, cap)
    shadow = {}
    for i in range(1, total + 1):
        shadow[s.append(bytes([i]), mid(i))] = bytes([i])
    result = s.scan(1, total)
    earliest = total - cap + 1
    assert result.truncated
    assert result.first_available == earliest
    assert [e.seq for e in result.entries] == list(range(earliest, total + 1))
    for e in result.entries:
        assert e.payload == shadow[e.seq]
    s.close()


def test_scan_clamps_beyond_head(store):
    store.append(b"one", mid(1))
    result = store.scan(1, 10)
    assert [e.seq for e in result.entries] == [1]


# -- recover ---------------------------------------------------------------------

def test_recover_round_trips_100_entries(tmp_path):
    path = tmp_path / "dur.log"
    s = LogStore.create(path, "dur", 32, 256)
    payloads = {}
    for i in range(1, 101):
        payloads[i] = f"entry-{i}".encode()
        s.append(payloads[i], mid(i))
    s.close()

    r = LogStore.recover(path)
    assert r.next_seq == 101
    result = r.scan(1, 100)
    assert [e.seq for e in result.entries] == list(range(1, 101))
    for e in result.entries:
        assert e.payload == payloads[e.seq]
    assert not r.torn_discarded
    r.close()


def test_recover_without_clean_close(tmp_path):
    # crash semantics: no close(), reopen straight from whatever hit the disk
    path = tmp_path / "crash.log"
    s = LogStore.create(path, "crash", 16, 64)
    for i in range(1, 8):
        s.append(bytes([i]) * 3, mid(i))
    # no s.close()
    r = LogStore.recover(path)
    assert r.next_seq == 8
    assert [e.payload for e in r.scan(1, 7).entries] == [bytes([i]) * 3
                                                         for i in range(1, 8)]
    r.close()


def test_recover_resumes_sequence_numbering(tmp_path):
    path = tmp_path / "resume.log"
    s = LogStore.create(path, "resume", 8, 64)
    for i in range(1, 6):
        s.append(bytes([i]), mid(i))
    s.close()
    r = LogStore.recover(path)
    assert r.append(b"next", mid(6)) == 6
    r.close()


def test_recover_preserves_dedup_index(tmp_path):
    path = tmp_path / "dd.log"
    s = LogStore.create(path, "dd", 8, 64)
    s.append(b"x", mid(42))
    s.close()
    r = LogStore.recover(path)
    assert r.append(b"retry", mid(42)) == 1
    assert r.next_seq == 2
    r.close()


def test_truncation_at_every_byte_of_last_record(tmp_path):
    # fault-injection harness: persist 100 entries, then truncate the file at
    # every byte offset inside the final record; recovery must always come
    # back with 99 entries and next_seq == 100
    element = 16
    stride = RECORD_OVERHEAD + element
    base = tmp_path / "base.log"
    s = LogStore.create(base, "base", element, 128)
    for i in range(1, 101):
        s.append(f"p{i:03d}".encode(), mid(i))
    s.close()
    file_size = base.stat().st_size
    last_record_start = file_size - stride

    for cut in range(stride):
        victim = tmp_path / f"cut{cut}.log"
        victim.write_bytes(base.read_bytes())
        with open(victim, "r+b") as f:
            f.truncate(last_record_start + cut)
        r = LogStore.recover(victim)
        assert r.next_seq == 100, f"cut at byte {cut}"
        assert r.earliest_seq == 1
        assert len(r.scan(1, 99).entries) == 99
        assert r.torn_discarded == (cut != 0)
        r.close()


def test_torn_final_write_discarded_after_wraparound(tmp_path):
    path = tmp_path / "wrap.log"
    cap = 8
    s = LogStore.create(path, "wrap", 8, cap)
    for i in range(1, 21):
        s.append(bytes([i]), mid(i))
    s.close()
    # corrupt the slot holding the newest record (seq 20)
    stride = RECORD_OVERHEAD + 8
    slot = (20 - 1) % cap
    with open(path, "r+b") as f:
        f.seek(HEADER_SIZE + slot * stride + 10)
        f.write(b"\xff\xff\xff")
    r = LogStore.recover(path)
    assert r.next_seq == 20
    assert r.torn_discarded
    r.close()


def test_corrupt_magic_raises_corrupt_header(tmp_path):
    path = tmp_path / "bad.log"
    s = LogStore.create(path, "bad", 8, 16)
    s.append(b"x", mid(1))
    s.close()
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(raw)
    with pytest.raises(CorruptHeader):
        LogStore.recover(path)


def test_mid_log_corruption_is_not_forgiven(tmp_path):
    path = tmp_path / "midcorrupt.log"
    s = LogStore.create(path, "midcorrupt", 8, 64)
    for i in range(1, 11):
        s.append(bytes([i]), mid(i))
    s.close()
    stride = RECORD_OVERHEAD + 8
    with open(path, "r+b") as f:
        f.seek(HEADER_SIZE + 4 * stride + 12)  # inside record for seq 5
        f.write(b"\xde\xad")
    with pytest.raises(CorruptHeader):
        LogStore.recover(path)


# -- resize ----------------------------------------------------------------------

def test_resize_preserves_entries_and_seqs(tmp_path):
    path = tmp_path / "rs.log"
    s = LogStore.create(path, "rs", 64, 32)
    for i in range(1, 6):
        s.append(f"v{i}".encode(), mid(i))
    s.resize(128)
    assert s.element_size == 128
    assert [e.payload for e in s.scan(1, 5).entries] == [f"v{i}".encode()
                                                         for i in range(1, 6)]
    assert s.append(b"y" * 100, mid(6)) == 6
    s.close()
    r = LogStore.recover(path)
    assert r.element_size == 128
    assert r.next_seq == 7
    r.close()


def test_resize_refuses_to_shrink_below_live_payload(tmp_path):
    s = LogStore.create(tmp_path / "shrink.log", "shrink", 64, 8)
    s.append(b"z" * 50, mid(1))
    with pytest.raises(InvalidLogConfig):
        s.resize(32)
    s.close()


# -- concurrency -----------------------------------------------------------------

def test_concurrent_appends_assign_gap_free_permutation(tmp_path):
    s = LogStore.create(tmp_path / "conc.log", "conc", 32, 4096)
    n_threads, per_thread = 8, 100
    results: dict[int, list[int]] = {}

    def worker(tid: int):
        seqs = []
        for i in range(per_thread):
            unique = tid * per_thread + i
            seqs.append(s.append(f"{tid}:{i}".encode(), mid(unique)))
        results[tid] = seqs

    threads = [threading.Thread(target=worker, args=(t,)) for t in range(n_threads)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    all_seqs = sorted(seq for seqs in results.values() for seq in seqs)
    assert all_seqs == list(range(1, n_threads * per_thread + 1))
    s.close()


def test_concurrent_duplicate_ids_get_one_seq(tmp_path):
    s = LogStore.create(tmp_path / "dups.log", "dups", 16, 1024)
    barrier = threading.Barrier(6)
    seen: list[int] = []
    lock = threading.Lock()

    def worker():
        barrier.wait()
        for i in range(50):
            seq = s.append(b"same", mid(i))
            with lock:
                seen.append(seq)

    threads = [threading.Thread(target=worker) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    # 50 distinct message ids -> 50 distinct seqs, each repeated 6x
    assert sorted(set(seen)) == list(range(1, 51))
    assert len(seen) == 300
    s.close()


# -- registry ------------------------------------------------------------------------

def test_registry_create_get_and_unknown(tmp_path):
    reg = LogRegistry(tmp_path)
    reg.create("one", 8, 16)
    assert reg.exists("one")
    assert reg.get("one").element_size == 8
    with pytest.raises(UnknownLog):
        reg.get("missing")
    with pytest.raises(NameCollision):
        reg.create("one", 8, 16)
    reg.close_all()


def test_registry_reopens_from_disk(tmp_path):
    reg = LogRegistry(tmp_path)
    reg.create("persist", 16, 32).append(b"v", mid(1))
    reg.close_all()
    reg2 = LogRegistry(tmp_path)
    assert reg2.get("persist").read(1).payload == b"v"
    reg2.close_all()


def test_registry_rejects_path_tricks(tmp_path):
    reg = LogRegistry(tmp_path)
    with pytest.raises(InvalidLogConfig):
        reg.create("../escape", 8, 8)
