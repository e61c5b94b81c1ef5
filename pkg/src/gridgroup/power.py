"""Linearized swing-equation models of a power network and its N-1 line outages.

Generator angles are expressed in average-angle-free coordinates
``theta_t = U^T theta`` where the columns of ``U`` are an orthonormal basis of
the complement of the all-ones vector. The state is ``x = [theta_t; omega]``
with ``omega`` the rotor frequency deviations, and

    A = [[0, U^T], [-M^-1 L U, -M^-1 D]]
    B_u = B_w = [[0], [M^-1 E]]
    C = blkdiag(I, (M/2)^(1/2)),  D = 0

where ``L`` is the susceptance-weighted Laplacian at a flat DC operating
point and ``E`` selects the actuated buses.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DisconnectsError, NetworkFormatError, ValidationError
from .lti import StateSpaceModel, is_hurwitz

__all__ = ['Bus', 'Line', 'PowerNetwork', 'Contingency', 'laplacian',
           'angle_basis', 'build_dynamics', 'enumerate_contingencies',
           'load_network', 'save_network', 'fixture_path', 'is_connected']


@dataclass(frozen=True)
class Bus:
    id: int | str
    inertia: float
    damping: float
    actuated: bool = False


@dataclass(frozen=True)
class Line:
    id: int | str
    from_bus: int | str
    to_bus: int | str
    susceptance: float


def _id_key(x):
    return (0, x, '') if isinstance(x, int) else (1, 0, str(x))


@dataclass(frozen=True)
class PowerNetwork:
    buses: tuple
    lines: tuple
    name: str = field(default='', compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'buses', tuple(self.buses))
        object.__setattr__(self, 'lines', tuple(self.lines))
        self.validate()

    def validate(self):
        if len(self.buses) < 2:
            raise ValidationError("a network needs at least 2 buses")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate bus id")
        for b in self.buses:
            if not (np.isfinite(b.inertia) and b.inertia > 0):
                raise ValidationError(f"bus {b.id!r}: inertia must be > 0")
            if not (np.isfinite(b.damping) and b.damping > 0):
                raise ValidationError(f"bus {b.id!r}: damping must be > 0")
        lids = [ln.id for ln in self.lines]
        if len(set(lids)) != len(lids):
            raise ValidationError("duplicate line id")
        known = set(ids)
        for ln in self.lines:
            if ln.from_bus not in known or ln.to_bus not in known:
                raise ValidationError(f"line {ln.id!r} references an unknown bus")
            if ln.from_bus == ln.to_bus:
                raise ValidationError(f"line {ln.id!r} is a self-loop")
            if not (np.isfinite(ln.susceptance) and ln.susceptance > 0):
                raise ValidationError(f"line {ln.id!r}: susceptance must be > 0")
        if not any(b.actuated for b in self.buses):
            raise ValidationError("at least one bus must be actuated")
        if not is_connected(self):
            raise ValidationError("network graph is not connected")

    @property
    def bus_index(self):
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def line_ids(self):
        return [ln.id for ln in self.lines]

    def line(self, line_id):
        for ln in self.lines:
            if ln.id == line_id:
                return ln
        raise ValidationError(f"unknown line id {line_id!r}")

    def to_dict(self):
        return {
            "buses": [{"id": b.id, "inertia": b.inertia, "damping": b.damping,
                       "actuated": b.actuated} for b in self.buses],
            "lines": [{"id": ln.id, "from": ln.from_bus, "to": ln.to_bus,
                       "susceptance": ln.susceptance} for ln in self.lines],
        }

    def content_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True, eq=False)
class Contingency:
    """Outage of one line; ``index`` runs 1..M in line-id order."""
    line_id: int | str
    index: int
    model: StateSpaceModel


def _remaining_lines(net, removed):
    if removed is None:
        return net.lines
    net.line(removed)
    return tuple(ln for ln in net.lines if ln.id != removed)


def is_connected(net, removed=None):
    idx = net.bus_index
    lines = _remaining_lines(net, removed)
    nb = len(net.buses)
    rows = [idx[ln.from_bus] for ln in lines]
    cols = [idx[ln.to_bus] for ln in lines]
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(nb, nb))
    ncomp, _ = connected_components(adj, directed=False)
    return ncomp == 1


def laplacian(net: PowerNetwork, removed=None) -> np.ndarray:
    """Susceptance-weighted Laplacian, parallel lines summed.

    Rows follow the bus order of ``net``.
    """
    idx = net.bus_index
    L = np.zeros((len(net.buses),) * 2)
    for ln in _remaining_lines(net, removed):
        i, j, b = idx[ln.from_bus], idx[ln.to_bus], ln.susceptance
        L[i, i] += b
        L[j, j] += b
        L[i, j] -= b
        L[j, i] -= b
    return L


def angle_basis(nb: int) -> np.ndarray:
    """Orthonormal basis of the complement of ones(nb), shape (nb, nb-1).

    Modified Gram-Schmidt on e_1-e_2, e_2-e_3, ... in that order, so the
    coordinates are reproducible.
    """
    V = np.zeros((nb, nb - 1))
    for k in range(nb - 1):
        V[k, k], V[k + 1, k] = 1.0, -1.0
    U = np.zeros_like(V)
    for k in range(nb - 1):
        v = V[:, k].copy()
        for j in range(k):
            v -= (U[:, j] @ v) * U[:, j]
        U[:, k] = v / np.linalg.norm(v)
    return U


def build_dynamics(net: PowerNetwork, removed=None) -> StateSpaceModel:
    if not is_connected(net, removed):
        raise DisconnectsError(f"removing line {removed!r} disconnects the network")
    nb = len(net.buses)
    M = np.array([b.inertia for b in net.buses])
    Dmp = np.array([b.damping for b in net.buses])
    act = [i for i, b in enumerate(net.buses) if b.actuated]
    U = angle_basis(nb)
    L = laplacian(net, removed)

    r = nb - 1
    A = np.zeros((r + nb, r + nb))
    A[:r, r:] = U.T
    A[r:, :r] = -(L @ U) / M[:, None]
    A[r:, r:] = np.diag(-Dmp / M)

    B = np.zeros((r + nb, len(act)))
    for c, i in enumerate(act):
        B[r + i, c] = 1.0 / M[i]

    C = np.zeros((r + nb, r + nb))
    C[:r, :r] = np.eye(r)
    C[r:, r:] = np.diag(np.sqrt(M / 2))

    if not is_hurwitz(A):
        raise AssertionError("swing dynamics are not Hurwitz; "
                             "network invariants were violated")
    return StateSpaceModel(A, B, B, C, np.zeros((r + nb, len(act))))


def enumerate_contingencies(net: PowerNetwork) -> list[Contingency]:
    """One contingency per non-bridge line, ordered by line id."""
    out = []
    for ln in sorted(net.lines, key=lambda x: _id_key(x.id)):
        if is_connected(net, ln.id):
            out.append(Contingency(ln.id, len(out) + 1, build_dynamics(net, ln.id)))
    return out


def _req(obj, key, where, kinds):
    if key not in obj:
        raise NetworkFormatError(f"{where}: missing field {key!r}")
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, kinds):
        raise NetworkFormatError(f"{where}: field {key!r} has invalid value {val!r}")
    return val


def network_from_dict(data, name=''):
    if not isinstance(data, dict):
        raise NetworkFormatError("top level must be an object")
    buses, lines = [], []
    for k, b in enumerate(data.get("buses") or []):
        where = f"buses[{k}]"
        if not isinstance(b, dict):
            raise NetworkFormatError(f"{where}: expected an object")
        actuated = b.get("actuated", False)
        if not isinstance(actuated, bool):
            raise NetworkFormatError(f"{where}: field 'actuated' must be a boolean")
        buses.append(Bus(_req(b, "id", where, (int, str)),
                         float(_req(b, "inertia", where, (int, float))),
                         float(_req(b, "damping", where, (int, float))),
                         actuated))
    for k, ln in enumerate(data.get("lines") or []):
        where = f"lines[{k}]"
        if not isinstance(ln, dict):
            raise NetworkFormatError(f"{where}: expected an object")
        lines.append(Line(_req(ln, "id", where, (int, str)),
                          _req(ln, "from", where, (int, str)),
                          _req(ln, "to", where, (int, str)),
                          float(_req(ln, "susceptance", where, (int, float)))))
    try:
        return PowerNetwork(buses, lines, name=name)
    except NetworkFormatError:
        raise
    except ValidationError as exc:
        raise NetworkFormatError(str(exc)) from exc


def load_network(path) -> PowerNetwork:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    try:
        return network_from_dict(data, name=path.stem)
    except NetworkFormatError as exc:
        raise NetworkFormatError(f"{path}: {exc}") from exc


def save_network(net: PowerNetwork, path):
    Path(path).write_text(json.dumps(net.to_dict(), indent=2) + "\n")


def fixture_path(name: str) -> Path:
    """Path of a bundled network, e.g. ``fixture_path('case10ring')``."""
    if not name.endswith('.json'):
        name += '.json'
    return Path(str(resources.files('gridgroup') / 'data' / name))
