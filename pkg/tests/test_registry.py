"""Registry: predicate queries vs a brute-force oracle, live updates,
snapshot persistence."""

import random
import threading

import pytest

from vwsn.errors import CorruptSnapshot, DuplicateNodeId, InvalidQuery, UnknownNode
from vwsn.model import Capability, CapabilityDecl, GeoPoint, SignalParams, Unit, geo_distance_m
from vwsn.registry import DiscoveryQuery, LiveStatus, Registry, SensorDescription

CAP_UNITS = {
    Capability.TEMPERATURE: [Unit.CELSIUS, Unit.FAHRENHEIT, Unit.KELVIN],
    Capability.LIGHT: [Unit.LUX],
    Capability.HUMIDITY: [Unit.PERCENT_RH],
}


def random_desc(rng: random.Random, node_id: str) -> SensorDescription:
    caps = []
    for capability in rng.sample(list(Capability), k=rng.randint(1, 3)):
        units = rng.sample(CAP_UNITS[capability], k=rng.randint(1, len(CAP_UNITS[capability])))
        lo = rng.choice([50, 100, 500, 1000])
        hi = lo * rng.choice([2, 10, 100])
        caps.append(CapabilityDecl(
            capability=capability, units=tuple(units),
            min_interval_ms=lo, max_interval_ms=hi,
            signal=SignalParams(base=20.0, amplitude=1.0, period_ms=60_000, seed=1)))
    platform = rng.choice(["SPOTSIM", "MOTESIM"])
    desc = SensorDescription(
        node_id=node_id,
        platform=platform,
        protocol="SPOTSIM" if platform == "SPOTSIM" else "MOTESIM-via-GTO",
        data_format="text-line" if platform == "SPOTSIM" else "tlv",
        capabilities=tuple(caps),
        location=GeoPoint(rng.uniform(45.0, 46.0), rng.uniform(-74.0, -73.0)),
        capacity=1 if platform == "MOTESIM" else rng.choice([2, 4, 8]),
        reserve_fraction=rng.choice([0.0, 0.01, 0.05]),
    )
    if rng.random() < 0.9:
        active = rng.randint(0, desc.capacity)
        desc = SensorDescription(**{**desc.__dict__, "live": LiveStatus(
            load=active / desc.capacity,
            battery_fraction=rng.choice([0.0, 0.02, 0.3, 0.8, 1.0]),
            awake=rng.random() < 0.8)})
    return desc


def random_query(rng: random.Random) -> DiscoveryQuery:
    center = GeoPoint(rng.uniform(45.0, 46.0), rng.uniform(-74.0, -73.0)) \
        if rng.random() < 0.5 else None
    return DiscoveryQuery(
        capability=rng.choice(list(Capability)) if rng.random() < 0.6 else None,
        unit=rng.choice(list(Unit)) if rng.random() < 0.4 else None,
        center=center,
        radius_m=rng.choice([1000.0, 10_000.0, 100_000.0]) if center and rng.random() < 0.8 else None,
        max_interval_ms=rng.choice([80, 200, 1200, 10_000]) if rng.random() < 0.4 else None,
        available_only=rng.random() < 0.3,
        min_battery=rng.choice([0.1, 0.5, 0.9]) if rng.random() < 0.3 else None,
    )


def oracle_scan(descs, q: DiscoveryQuery):
    """Independent linear-scan evaluation of the documented predicate and
    ordering, reimplemented from scratch for comparison."""

    def decl_satisfies(decl):
        if q.capability is not None and decl.capability != q.capability:
            return False
        if q.unit is not None and q.unit not in decl.units:
            return False
        if q.max_interval_ms is not None and decl.min_interval_ms > q.max_interval_ms:
            return False
        return True

    out = []
    for d in descs:
        if q.capability is not None or q.unit is not None or q.max_interval_ms is not None:
            if not any(decl_satisfies(c) for c in d.capabilities):
                continue
        if q.center is not None and q.radius_m is not None:
            if geo_distance_m(q.center, d.location) > q.radius_m:
                continue
        if q.available_only:
            if d.live is None or not d.live.awake:
                continue
            if d.live.battery_fraction <= d.reserve_fraction:
                continue
        if q.min_battery is not None:
            if d.live is None or d.live.battery_fraction < q.min_battery:
                continue
        out.append(d)

    def key(d):
        active = round((d.live.load if d.live else 0.0) * d.capacity)
        dist = geo_distance_m(q.center, d.location) if q.center is not None else 0.0
        battery = d.live.battery_fraction if d.live else 0.0
        return (active, dist, -battery, d.node_id)

    out.sort(key=key)
    return out


class TestBasics:
    def test_register_then_query_all(self):
        reg = Registry()
        rng = random.Random(0)
        reg.register(random_desc(rng, "a"))
        assert len(reg.query(DiscoveryQuery())) == 1

    def test_duplicate_register(self):
        reg = Registry()
        rng = random.Random(0)
        reg.register(random_desc(rng, "a"))
        with pytest.raises(DuplicateNodeId):
            reg.register(random_desc(rng, "a"))

    def test_500_random_registrations_counted(self):
        reg = Registry()
        rng = random.Random(1)
        for i in range(500):
            reg.register(random_desc(rng, f"n{i:04d}"))
        assert len(reg.query(DiscoveryQuery())) == 500

    def test_empty_repository_empty_result(self):
        assert Registry().query(DiscoveryQuery(capability=Capability.LIGHT)) == []

    def test_unknown_update_rejected(self):
        with pytest.raises(UnknownNode):
            Registry().update_live("ghost", 0.0, 1.0, True)

    def test_invalid_queries(self):
        with pytest.raises(InvalidQuery):
            Registry().query(DiscoveryQuery(radius_m=10.0))
        with pytest.raises(InvalidQuery):
            Registry().query(DiscoveryQuery(min_battery=1.5))


class TestLiveUpdates:
    def _one_node(self):
        reg = Registry()
        rng = random.Random(3)
        desc = random_desc(rng, "a")
        reg.register(SensorDescription(**{**desc.__dict__, "live": None}))
        return reg

    def test_zero_battery_excluded_from_available(self):
        reg = self._one_node()
        reg.update_live("a", load=0.0, battery_fraction=0.0, awake=True)
        assert reg.query(DiscoveryQuery(available_only=True)) == []
        reg.update_live("a", load=0.0, battery_fraction=1.0, awake=True)
        assert len(reg.query(DiscoveryQuery(available_only=True))) == 1

    def test_full_load_listed_but_ranked_last(self):
        reg = Registry()
        rng = random.Random(4)
        for node_id in ("a", "b"):
            desc = random_desc(rng, node_id)
            reg.register(SensorDescription(**{**desc.__dict__, "live": None, "capacity": 4}))
        reg.update_live("a", load=1.0, battery_fraction=1.0, awake=True)
        reg.update_live("b", load=0.25, battery_fraction=1.0, awake=True)
        ordered = [d.node_id for d in reg.query(DiscoveryQuery())]
        assert ordered == ["b", "a"]

    def test_interleaved_updates_match_sequential_oracle(self):
        """Random update/query mix equals replaying the same ops on a dict."""
        rng = random.Random(5)
        reg = Registry()
        shadow: dict[str, SensorDescription] = {}
        for i in range(30):
            desc = random_desc(rng, f"n{i:02d}")
            desc = SensorDescription(**{**desc.__dict__, "live": None})
            reg.register(desc)
            shadow[desc.node_id] = desc
        for _ in range(400):
            if rng.random() < 0.5:
                nid = rng.choice(sorted(shadow))
                live = LiveStatus(load=rng.choice([0.0, 0.25, 0.5, 1.0]),
                                  battery_fraction=rng.random(), awake=rng.random() < 0.7)
                reg.update_live(nid, live.load, live.battery_fraction, live.awake)
                shadow[nid] = SensorDescription(**{**shadow[nid].__dict__, "live": live})
            else:
                q = random_query(rng)
                got = [d.node_id for d in reg.query(q)]
                want = [d.node_id for d in oracle_scan(shadow.values(), q)]
                assert got == want


class TestOracleEquivalence:
    def test_200_nodes_100_queries(self):
        rng = random.Random(6)
        reg = Registry()
        descs = [random_desc(rng, f"n{i:04d}") for i in range(200)]
        for d in descs:
            reg.register(d)
        for _ in range(100):
            q = random_query(rng)
            got = [d.node_id for d in reg.query(q)]
            want = [d.node_id for d in oracle_scan(descs, q)]
            assert got == want


class TestSnapshot:
    def test_empty_round_trip(self, tmp_path):
        reg = Registry()
        path = tmp_path / "snap.json"
        reg.snapshot(path)
        other = Registry()
        other.load_snapshot(path)
        assert len(other) == 0

    def test_round_trip_500_nodes_byte_equal(self, tmp_path):
        rng = random.Random(7)
        reg = Registry()
        for i in range(500):
            reg.register(random_desc(rng, f"n{i:04d}"))
        first = tmp_path / "a.json"
        reg.snapshot(first)
        clone = Registry()
        clone.load_snapshot(first)
        second = tmp_path / "b.json"
        clone.snapshot(second)
        assert first.read_bytes() == second.read_bytes()

    def test_loaded_nodes_have_no_live_view(self, tmp_path):
        rng = random.Random(8)
        reg = Registry()
        reg.register(random_desc(rng, "a"))
        reg.update_live("a", 0.5, 0.9, True)
        path = tmp_path / "snap.json"
        reg.snapshot(path)
        clone = Registry()
        clone.load_snapshot(path)
        assert clone.get("a").live is None
        assert clone.query(DiscoveryQuery(available_only=True)) == []

    def test_truncated_file_is_corrupt(self, tmp_path):
        rng = random.Random(9)
        reg = Registry()
        reg.register(random_desc(rng, "a"))
        path = tmp_path / "snap.json"
        reg.snapshot(path)
        path.write_bytes(path.read_bytes()[:-30])
        with pytest.raises(CorruptSnapshot):
            Registry().load_snapshot(path)

    def test_wrong_format_marker(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text('{"format": "something-else", "version": 1, "nodes": []}')
        with pytest.raises(CorruptSnapshot):
            Registry().load_snapshot(path)


class TestConcurrency:
    def test_parallel_queries_with_updates(self):
        rng = random.Random(10)
        reg = Registry()
        for i in range(50):
            reg.register(random_desc(rng, f"n{i:02d}"))
        stop = threading.Event()
        errors = []

        def reader():
            local = random.Random(11)
            while not stop.is_set():
                try:
                    out = reg.query(random_query(local))
                    # a consistent view never yields duplicate node ids
                    ids = [d.node_id for d in out]
                    assert len(ids) == len(set(ids))
                except AssertionError as e:  # pragma: no cover
                    errors.append(e)

        threads = [threading.Thread(target=reader) for _ in range(3)]
        for t in threads:
            t.start()
        for k in range(3000):
            reg.update_live(f"n{k % 50:02d}", load=(k % 5) / 4,
                            battery_fraction=(k % 10) / 9, awake=bool(k % 2))
        stop.set()
        for t in threads:
            t.join()
        assert not errors
