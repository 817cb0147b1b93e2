"""Core model: lifecycle table, addressing, units, geodesy."""

import math
import random
import threading
import uuid

import pytest
from hypothesis import given, strategies as st

from vwsn.errors import AlreadyBound, IllegalTransition, IncompatibleUnits, NotBound
from vwsn.model import (
    AddressMap,
    GeoPoint,
    GlobalAddress,
    LifecycleEvent,
    LocalAddress,
    Unit,
    VsState,
    convert_unit,
    geo_distance_m,
    transition,
)

# Independent statement of the legal moves, written from the documented
# lifecycle rather than imported from the implementation.
LEGAL = {
    ("Requested", "configure"): "Configured",
    ("Configured", "deploy_begin"): "Deploying",
    ("Deploying", "deploy_ok"): "Deployed",
    ("Deployed", "start_ok"): "Running",
    ("Stopped", "start_ok"): "Running",
    ("Running", "stop_ok"): "Stopped",
    ("Running", "migrate_begin"): "Migrating",
    ("Stopped", "migrate_begin"): "Migrating",
    ("Migrating", "migrate_ok"): "<resume>",
    ("Deployed", "delete_begin"): "Deleting",
    ("Stopped", "delete_begin"): "Deleting",
    ("Deleting", "delete_ok"): "Deleted",
    **{(s, "fault"): "Faulted"
       for s in ("Requested", "Configured", "Deploying", "Deployed", "Running",
                 "Stopped", "Migrating", "Deleting")},
}


class TestTransition:
    def test_table_rows(self):
        assert transition(VsState.DEPLOYED, LifecycleEvent.START_OK) is VsState.RUNNING
        assert transition(VsState.RUNNING, LifecycleEvent.STOP_OK) is VsState.STOPPED

    def test_terminal_state_rejects(self):
        with pytest.raises(IllegalTransition):
            transition(VsState.DELETED, LifecycleEvent.START_OK)

    def test_exhaustive_grid(self):
        """Every (state, event) pair behaves exactly as the documented table."""
        hits = 0
        for state in VsState:
            for event in LifecycleEvent:
                expected = LEGAL.get((state.value, event.value))
                if expected is None:
                    with pytest.raises(IllegalTransition):
                        transition(state, event, resume=VsState.RUNNING)
                    continue
                hits += 1
                resume = VsState.RUNNING if expected == "<resume>" else None
                got = transition(state, event, resume=resume)
                if expected == "<resume>":
                    assert got is VsState.RUNNING
                    assert transition(state, event, resume=VsState.STOPPED) is VsState.STOPPED
                else:
                    assert got.value == expected
        assert hits == len(LEGAL) == 20

    def test_migrate_ok_requires_resume(self):
        with pytest.raises(IllegalTransition):
            transition(VsState.MIGRATING, LifecycleEvent.MIGRATE_OK)
        with pytest.raises(IllegalTransition):
            transition(VsState.MIGRATING, LifecycleEvent.MIGRATE_OK, resume=VsState.DEPLOYED)

    def test_absorbing_terminals(self):
        for state in (VsState.DELETED, VsState.FAULTED):
            for event in LifecycleEvent:
                with pytest.raises(IllegalTransition):
                    transition(state, event, resume=VsState.RUNNING)


class TestGlobalAddress:
    def test_render_round_trip(self):
        addr = GlobalAddress("iaas-1", uuid.uuid4())
        text = addr.render()
        assert text.startswith("vs://iaas-1/")
        assert GlobalAddress.parse(text) == addr

    def test_rendering_is_lowercase_hex(self):
        addr = GlobalAddress.new("x")
        tail = addr.render().rsplit("/", 1)[1]
        assert len(tail) == 32 and tail == tail.lower()

    @pytest.mark.parametrize("bad", ["", "vs://a", "vs://a/zz", "vs:///deadbeef",
                                     "vs://a/" + "0" * 31])
    def test_parse_rejects(self, bad):
        with pytest.raises(ValueError):
            GlobalAddress.parse(bad)


def _addr(i: int) -> GlobalAddress:
    return GlobalAddress("t", uuid.UUID(int=i))


class TestAddressMap:
    def test_bind_resolve(self):
        m = AddressMap()
        m.bind(_addr(1), LocalAddress("n1", 0))
        assert m.resolve(_addr(1)) == LocalAddress("n1", 0)
        assert len(m) == 1

    def test_slot_occupied(self):
        m = AddressMap()
        m.bind(_addr(1), LocalAddress("n1", 0))
        with pytest.raises(AlreadyBound):
            m.bind(_addr(2), LocalAddress("n1", 0))

    def test_rebind(self):
        m = AddressMap()
        m.bind(_addr(1), LocalAddress("n1", 0))
        freed = m.rebind(_addr(1), LocalAddress("n2", 1))
        assert freed == LocalAddress("n1", 0)
        assert m.resolve(_addr(1)) == LocalAddress("n2", 1)
        m.bind(_addr(2), LocalAddress("n1", 0))  # old slot is free again

    def test_rebind_unbound(self):
        with pytest.raises(NotBound):
            AddressMap().rebind(_addr(1), LocalAddress("n", 0))

    def test_random_sequences_preserve_bijection(self):
        """1000 random bind/unbind/rebind ops against a reference pair-set."""
        rng = random.Random(42)
        m = AddressMap()
        ref: dict[GlobalAddress, LocalAddress] = {}
        for step in range(1000):
            op = rng.choice(("bind", "unbind", "rebind"))
            g = _addr(rng.randrange(30))
            l = LocalAddress(f"n{rng.randrange(6)}", rng.randrange(4))
            try:
                if op == "bind":
                    m.bind(g, l)
                    assert g not in ref and l not in ref.values()
                    ref[g] = l
                elif op == "unbind":
                    m.unbind(g)
                    assert g in ref
                    del ref[g]
                else:
                    m.rebind(g, l)
                    assert g in ref and l not in ref.values()
                    ref[g] = l
            except (AlreadyBound, NotBound):
                if op == "bind":
                    assert g in ref or l in ref.values()
                elif op == "unbind":
                    assert g not in ref
                else:
                    assert g not in ref or l in ref.values()
            # bijection: forward o backward is the identity
            assert {m.resolve(k) for k in m.bound_globals()} == set(ref.values())
            for k in m.bound_globals():
                assert m.reverse(m.resolve(k)) == k
        assert {g: m.resolve(g) for g in m.bound_globals()} == ref

    def test_concurrent_resolve_never_sees_unbound(self):
        """Readers hammering resolve() during rebinds always get an address."""
        m = AddressMap()
        g = _addr(7)
        m.bind(g, LocalAddress("n0", 0))
        stop = threading.Event()
        misses: list[Exception] = []

        def reader():
            while not stop.is_set():
                try:
                    m.resolve(g)
                except NotBound as e:  # pragma: no cover - the failure we assert against
                    misses.append(e)

        threads = [threading.Thread(target=reader) for _ in range(4)]
        for t in threads:
            t.start()
        for i in range(2000):
            m.rebind(g, LocalAddress(f"n{i % 7}", i % 3 + 1))
        stop.set()
        for t in threads:
            t.join()
        assert not misses


class TestUnits:
    @pytest.mark.parametrize("value,src,dst,expected", [
        (0.0, Unit.CELSIUS, Unit.FAHRENHEIT, 32.0),
        (100.0, Unit.CELSIUS, Unit.KELVIN, 373.15),
        (37.0, Unit.CELSIUS, Unit.FAHRENHEIT, 98.6),
    ])
    def test_defining_points(self, value, src, dst, expected):
        assert convert_unit(value, src, dst) == pytest.approx(expected, abs=1e-12)

    def test_incompatible(self):
        with pytest.raises(IncompatibleUnits):
            convert_unit(1.0, Unit.CELSIUS, Unit.LUX)

    @given(st.floats(min_value=-1e4, max_value=1e4),
           st.sampled_from([Unit.CELSIUS, Unit.FAHRENHEIT, Unit.KELVIN]),
           st.sampled_from([Unit.CELSIUS, Unit.FAHRENHEIT, Unit.KELVIN]))
    def test_round_trip(self, value, a, b):
        assert convert_unit(convert_unit(value, a, b), b, a) == pytest.approx(value, abs=1e-9)

    def test_round_trip_sweep(self):
        rng = random.Random(7)
        temps = [Unit.CELSIUS, Unit.FAHRENHEIT, Unit.KELVIN]
        for _ in range(10_000):
            v = rng.uniform(-500, 500)
            a, b = rng.choice(temps), rng.choice(temps)
            assert abs(convert_unit(convert_unit(v, a, b), b, a) - v) < 1e-9


def reference_haversine(a: GeoPoint, b: GeoPoint) -> float:
    # Textbook formulation, kept distinct from the implementation on purpose.
    r = 6_371_000.0
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dp = p2 - p1
    dl = math.radians(b.lon - a.lon)
    x = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * r * math.atan2(math.sqrt(x), math.sqrt(1 - x))


class TestGeo:
    def test_identity(self):
        p = GeoPoint(45.5, -73.6)
        assert geo_distance_m(p, p) == 0.0

    def test_against_reference(self):
        a, b = GeoPoint(45.5, -73.6), GeoPoint(45.5, -73.6001)
        assert abs(geo_distance_m(a, b) - reference_haversine(a, b)) < 0.1

    def test_range_enforced(self):
        with pytest.raises(ValueError):
            GeoPoint(91.0, 0.0)
        with pytest.raises(ValueError):
            GeoPoint(0.0, -180.5)

    def test_triangle_inequality_and_symmetry(self):
        rng = random.Random(99)
        for _ in range(1000):
            pts = [GeoPoint(rng.uniform(-89, 89), rng.uniform(-179, 179)) for _ in range(3)]
            ab = geo_distance_m(pts[0], pts[1])
            bc = geo_distance_m(pts[1], pts[2])
            ac = geo_distance_m(pts[0], pts[2])
            assert ab >= 0 and abs(ab - geo_distance_m(pts[1], pts[0])) < 1e-6
            assert ac <= ab + bc + 1e-6
