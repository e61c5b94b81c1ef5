import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridgroup.errors import DisconnectsError, NetworkFormatError, ValidationError
from gridgroup.lti import is_hurwitz
from gridgroup.power import (Bus, Line, PowerNetwork, angle_basis, build_dynamics,
                             enumerate_contingencies, fixture_path, laplacian, load_network,
                             network_from_dict, save_network)


def make_net(nb, edges, actuated=None, inertia=1.0, damping=1.0):
    actuated = set(range(1, nb + 1)) if actuated is None else set(actuated)
    buses = [Bus(i, inertia, damping, i in actuated) for i in range(1, nb + 1)]
    lines = [Line(k + 1, a, b, w) for k, (a, b, w) in enumerate(edges)]
    return PowerNetwork(buses, lines)


def triangle(b=1.0):
    return make_net(3, [(1, 2, b), (2, 3, b), (1, 3, b)])


def synthetic_39():
    """39 buses, 46 lines: a 28-bus ring with 7 chords plus 11 pendant buses."""
    edges = [(i, i % 28 + 1, 1.0 + 0.1 * i) for i in range(1, 29)]
    edges += [(1, 15, 2.0), (3, 10, 1.5), (5, 20, 1.2), (8, 25, 1.7),
              (12, 22, 1.1), (17, 27, 1.9), (2, 19, 1.3)]
    edges += [(2 * j + 1, 28 + j + 1, 1.0) for j in range(11)]
    return make_net(39, edges, actuated=range(1, 40, 4))


def test_laplacian_of_triangle():
    L = laplacian(triangle())
    assert np.array_equal(np.diag(L), [2, 2, 2])
    assert np.all(L[~np.eye(3, dtype=bool)] == -1)


def test_laplacian_with_line_removed():
    L = laplacian(triangle(), removed=1)
    assert L[0, 1] == 0
    assert np.array_equal(np.diag(L), [1, 1, 2])


def test_parallel_lines_are_summed():
    net = make_net(2, [(1, 2, 1.0), (1, 2, 2.5)])
    assert laplacian(net)[0, 1] == -3.5


def test_random_laplacian_kernel(rng):
    edges = [(a, b, float(rng.uniform(0.5, 2))) for a in range(1, 6)
             for b in range(a + 1, 6) if rng.random() < 0.5]
    edges += [(i, i + 1, 1.0) for i in range(1, 5)]
    net = make_net(5, edges)
    L = laplacian(net)
    assert np.allclose(L @ np.ones(5), 0)
    ev = np.linalg.eigvalsh(L)
    assert np.sum(np.abs(ev) < 1e-9) == 1
    assert np.all(ev > -1e-12)


@settings(max_examples=25, deadline=None)
@given(perm_seed=st.integers(0, 10 ** 6), nb=st.integers(3, 7))
def test_laplacian_permutation_equivariance(perm_seed, nb):
    rng = np.random.default_rng(perm_seed)
    edges = [(i, i + 1, float(rng.uniform(0.5, 2))) for i in range(1, nb)]
    edges += [(1, nb, 1.3)]
    net = make_net(nb, edges)
    perm = rng.permutation(nb)
    # relabel bus (i+1) -> bus (perm[i]+1), listing buses in the new order
    relabel = {i + 1: int(perm[i]) + 1 for i in range(nb)}
    buses = sorted((Bus(relabel[b.id], b.inertia, b.damping, b.actuated)
                    for b in net.buses), key=lambda b: b.id)
    lines = [Line(ln.id, relabel[ln.from_bus], relabel[ln.to_bus], ln.susceptance)
             for ln in net.lines]
    L2 = laplacian(PowerNetwork(buses, lines))
    P = np.zeros((nb, nb))
    for i in range(nb):
        P[perm[i], i] = 1
    assert np.allclose(L2, P @ laplacian(net) @ P.T)


def test_angle_basis_is_orthonormal_complement():
    for nb in (2, 3, 7):
        U = angle_basis(nb)
        assert U.shape == (nb, nb - 1)
        assert np.allclose(U.T @ U, np.eye(nb - 1))
        assert np.allclose(U.T @ np.ones(nb), 0)


def test_two_bus_eigenvalues():
    sys = build_dynamics(make_net(2, [(1, 2, 1.0)]))
    assert sys.A.shape == (3, 3)
    expected = np.sort_complex(np.concatenate([np.roots([1, 1, 2]), [-1.0]]))
    assert np.allclose(np.sort_complex(np.linalg.eigvals(sys.A)), expected)


def test_contingencies_share_input_and_output_maps(tri):
    nominal = build_dynamics(tri)
    for c in enumerate_contingencies(tri):
        for name in ('B_w', 'B_u', 'C', 'D'):
            assert np.array_equal(getattr(c.model, name), getattr(nominal, name))
        assert not np.array_equal(c.model.A, nominal.A)
        assert is_hurwitz(c.model.A)


def test_output_map_weights_frequencies():
    net = make_net(2, [(1, 2, 1.0)], inertia=8.0)
    C = build_dynamics(net).C
    assert np.allclose(np.diag(C), [1.0, 2.0, 2.0])


def test_disturbance_enters_through_actuated_buses():
    net = make_net(3, [(1, 2, 1.0), (2, 3, 1.0), (1, 3, 1.0)], actuated=[2])
    sys = build_dynamics(net)
    assert sys.B_u.shape == (5, 1)
    assert np.array_equal(sys.B_u, sys.B_w)
    assert np.flatnonzero(sys.B_u[:, 0]).tolist() == [3]


def test_triangle_has_three_contingencies(tri):
    cs = enumerate_contingencies(tri)
    assert [c.line_id for c in cs] == [1, 2, 3]
    assert [c.index for c in cs] == [1, 2, 3]


def test_star_has_no_contingencies():
    assert enumerate_contingencies(make_net(5, [(1, k, 1.0) for k in range(2, 6)])) == []


def test_synthetic_39_bus_graph_has_35_contingencies():
    net = synthetic_39()
    assert len(net.buses) == 39 and len(net.lines) == 46
    assert len(enumerate_contingencies(net)) == 35


def test_bridge_removal_raises():
    net = make_net(3, [(1, 2, 1.0), (2, 3, 1.0)])
    with pytest.raises(DisconnectsError):
        build_dynamics(net, removed=1)


def test_bundled_fixtures():
    ring = load_network(fixture_path('case10ring'))
    assert (len(ring.buses), len(ring.lines)) == (10, 13)
    assert len(enumerate_contingencies(ring)) == 13
    mesh = load_network(fixture_path('case20mesh'))
    assert len(mesh.buses) == 20


def test_contingencies_are_hurwitz_on_every_fixture():
    for name in ('case3tri', 'case10ring', 'case20mesh'):
        for c in enumerate_contingencies(load_network(fixture_path(name))):
            assert is_hurwitz(c.model.A)


def test_round_trip(tmp_path, ring):
    path = tmp_path / 'net.json'
    save_network(ring, path)
    again = load_network(path)
    assert again == ring
    assert again.content_hash() == ring.content_hash()


def test_minimal_two_bus_file(tmp_path):
    path = tmp_path / 'two.json'
    path.write_text(json.dumps({
        "buses": [{"id": 1, "inertia": 1, "damping": 1, "actuated": True},
                  {"id": 2, "inertia": 2, "damping": 1}],
        "lines": [{"id": "a", "from": 1, "to": 2, "susceptance": 3}]}))
    net = load_network(path)
    assert len(net.lines) == 1 and net.lines[0].id == 'a'


@pytest.mark.parametrize('mutate, needle', [
    (lambda d: d['buses'][1].update(inertia=-1.0), 'inertia'),
    (lambda d: d['lines'][0].pop('susceptance'), "lines[0]: missing field 'susceptance'"),
    (lambda d: d['lines'][0].update(to=99), 'unknown bus'),
    (lambda d: d['buses'][0].update(actuated='yes'), "buses[0]: field 'actuated'"),
    (lambda d: d['lines'][0].update(susceptance=True), "lines[0]: field 'susceptance'"),
])
def test_schema_errors_name_the_field(tmp_path, tri, mutate, needle):
    d = tri.to_dict()
    mutate(d)
    path = tmp_path / 'bad.json'
    path.write_text(json.dumps(d))
    with pytest.raises(NetworkFormatError) as err:
        load_network(path)
    assert needle in str(err.value)


def test_invalid_json_reports_line(tmp_path):
    path = tmp_path / 'bad.json'
    path.write_text('{\n "buses": [\n')
    with pytest.raises(NetworkFormatError, match='line'):
        load_network(path)


@pytest.mark.parametrize('buses, lines', [
    ([Bus(1, 1, 1, True)], []),
    ([Bus(1, 1, 1, True), Bus(2, 1, 1)], [Line(1, 1, 1, 1.0)]),
    ([Bus(1, 1, 1, True), Bus(2, 1, 1), Bus(3, 1, 1)], [Line(1, 1, 2, 1.0)]),
    ([Bus(1, 1, 1), Bus(2, 1, 1)], [Line(1, 1, 2, 1.0)]),
    ([Bus(1, 1, 0, True), Bus(2, 1, 1)], [Line(1, 1, 2, 1.0)]),
])
def test_invariant_violations(buses, lines):
    with pytest.raises(ValidationError):
        PowerNetwork(buses, lines)


def test_string_ids_sort_after_integers():
    net = network_from_dict({
        "buses": [{"id": i, "inertia": 1, "damping": 1, "actuated": True} for i in (1, 2, 3)],
        "lines": [{"id": "b", "from": 1, "to": 2, "susceptance": 1},
                  {"id": 7, "from": 2, "to": 3, "susceptance": 1},
                  {"id": "a", "from": 1, "to": 3, "susceptance": 1}]})
    assert [c.line_id for c in enumerate_contingencies(net)] == [7, 'a', 'b']
