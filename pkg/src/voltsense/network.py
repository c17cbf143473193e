"""Radial unbalanced three-phase feeder model.

A feeder is a radial network of nodes joined by line segments carrying
3x3 complex phase-impedance matrices.  Files store SI units (volts, watts,
ohms); everything is converted to per-unit at load time and all downstream
math works in per-unit.  Missing phases are kept as structurally-zero
rows/columns so every impedance matrix stays 3x3.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property

import numpy as np

SQRT3 = np.sqrt(3.0)

# Phase angle offsets of a balanced set, relative to the phase-a angle.
_PHASE_OFFSETS = np.array([0.0, -2.0 * np.pi / 3.0, +2.0 * np.pi / 3.0])


class Phase(IntEnum):
    """Phase index with the fixed ordering a < b < c."""

    A = 0
    B = 1
    C = 2

    @property
    def letter(self):
        return "abc"[self.value]


PHASES = (Phase.A, Phase.B, Phase.C)


class FeederFormatError(ValueError):
    """Feeder file cannot be parsed."""


class TopologyError(ValueError):
    """Feeder graph is not a valid radial network."""


class UnknownNodeError(KeyError):
    """Node id not present in the feeder."""


@dataclass(frozen=True)
class LineSegment:
    """Directed line segment (parent -> child) with a 3x3 impedance matrix.

    ``impedance`` is symmetric, per-unit, with zero rows/columns for
    phases the segment does not carry.
    """

    from_node: int
    to_node: int
    impedance: np.ndarray

    def __post_init__(self):
        if self.from_node == self.to_node:
            raise TopologyError(f"line {self.from_node}->{self.to_node} joins a node to itself")
        z = np.asarray(self.impedance, dtype=complex)
        if z.shape != (3, 3):
            raise ValueError(f"impedance must be 3x3, got {z.shape}")
        if not np.all(np.isfinite(z.view(float))):
            raise ValueError(f"non-finite impedance on line {self.from_node}->{self.to_node}")
        z.setflags(write=False)
        object.__setattr__(self, "impedance", z)


@dataclass(frozen=True)
class PhasorSet:
    """Per-node, per-phase complex voltages in per-unit.

    ``voltages`` has shape (n_nodes, 3); entries for de-energized phases
    are zero and excluded from the ``mask``.
    """

    node_ids: tuple
    voltages: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.voltages, dtype=complex)
        m = np.asarray(self.mask, dtype=bool)
        if v.shape != (len(self.node_ids), 3) or m.shape != v.shape:
            raise ValueError("voltages/mask shape mismatch")
        if np.any(np.abs(v[m]) <= 0.0):
            raise ValueError("zero voltage magnitude on an energized phase")
        v.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "voltages", v)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.node_ids)})

    def get(self, node, phase):
        """Complex per-unit voltage at (node, phase)."""
        return self.voltages[self._index[node], Phase(phase)]

    def magnitude(self, node, phase):
        return abs(self.get(node, phase))

    def angle(self, node, phase):
        return float(np.angle(self.get(node, phase)))


class Feeder:
    """Immutable radial feeder: topology, per-unit impedances, spot loads.

    Construction validates radiality (``len(lines) == n_nodes - 1``, all
    nodes reachable from the source) and pre-computes parent/depth and
    per-node cumulative path impedances so that shared-path lookups are
    cheap.  Instances are safe for concurrent read access.
    """

    def __init__(self, node_ids, source, phase_masks, v_base_mag, v_base_ang,
                 lines, loads_pu, base_power_va, base_voltage_v):
        ids = list(node_ids)
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate node id")
        self.node_ids = tuple(sorted(ids))
        self.n_nodes = len(self.node_ids)
        self._index = {n: i for i, n in enumerate(self.node_ids)}
        if source not in self._index:
            raise TopologyError(f"source node {source} not among nodes")
        self.source = source
        self.base_power_va = float(base_power_va)
        self.base_voltage_v = float(base_voltage_v)

        mask = np.zeros((self.n_nodes, 3), dtype=bool)
        vmag = np.zeros(self.n_nodes)
        vang = np.zeros(self.n_nodes)
        for n in ids:
            i = self._index[n]
            mask[i] = phase_masks[n]
            vmag[i] = v_base_mag[n]
            vang[i] = v_base_ang[n]
        if not mask.any(axis=1).all():
            raise TopologyError("node with no phases")
        self.phase_mask = mask
        self.v_base_mag = vmag
        self.v_base_ang = vang

        self.lines = tuple(lines)
        if len(self.lines) != self.n_nodes - 1:
            raise TopologyError(
                f"{len(self.lines)} lines for {self.n_nodes} nodes; radial feeder needs n-1")
        self._wire_topology()

        loads = np.zeros((self.n_nodes, 3), dtype=complex)
        for (n, ph), s in loads_pu.items():
            i = self._index[n]
            if not mask[i, Phase(ph)]:
                raise FeederFormatError(f"load on absent phase {Phase(ph).letter} of node {n}")
            loads[i, Phase(ph)] += s
        loads.setflags(write=False)
        self.base_loads = loads

    def _wire_topology(self):
        n = self.n_nodes
        adj = {i: [] for i in range(n)}  # node idx -> [(other idx, line idx)]
        for k, ln in enumerate(self.lines):
            if ln.from_node not in self._index or ln.to_node not in self._index:
                raise TopologyError(f"line {ln.from_node}->{ln.to_node} references unknown node")
            adj[self._index[ln.from_node]].append((self._index[ln.to_node], k))
            adj[self._index[ln.to_node]].append((self._index[ln.from_node], k))

        parent = np.full(n, -1, dtype=int)
        parent_line = np.full(n, -1, dtype=int)
        depth = np.zeros(n, dtype=int)
        order = [self._index[self.source]]
        seen = {order[0]}
        qi = 0
        while qi < len(order):
            u = order[qi]
            qi += 1
            for v, k in adj[u]:
                if v in seen:
                    if v != parent[u]:
                        raise TopologyError("cycle detected")
                    continue
                seen.add(v)
                parent[v] = u
                parent_line[v] = k
                depth[v] = depth[u] + 1
                order.append(v)
        if len(seen) != n:
            missing = [self.node_ids[i] for i in range(n) if i not in seen]
            raise TopologyError(f"nodes unreachable from source: {missing}")

        self.parent = parent
        self.parent_line = parent_line
        self.depth = depth
        self.topo_order = tuple(order)  # source first, parents before children

        # Orient every segment parent -> child regardless of file order.
        oriented = []
        for k, ln in enumerate(self.lines):
            i, j = self._index[ln.from_node], self._index[ln.to_node]
            if parent[j] == i:
                oriented.append(ln)
            elif parent[i] == j:
                oriented.append(LineSegment(ln.to_node, ln.from_node, ln.impedance))
            else:  # unreachable given the BFS above, kept as a guard
                raise TopologyError(f"line {ln.from_node}->{ln.to_node} is not a tree edge")
        self.lines = tuple(oriented)
        for ln in self.lines:
            child, par = self._index[ln.to_node], self._index[ln.from_node]
            if np.any(self.phase_mask[child] & ~self.phase_mask[par]):
                raise TopologyError(
                    f"node {ln.to_node} carries a phase its parent {ln.from_node} lacks")

        # Per-node cumulative impedance of the source->node path.
        zcum = np.zeros((n, 3, 3), dtype=complex)
        for u in self.topo_order[1:]:
            zcum[u] = zcum[parent[u]] + self.lines[parent_line[u]].impedance
        zcum.setflags(write=False)
        self.path_impedance = zcum
        self._lca_cache = {}

    # -- lookups ------------------------------------------------------------

    def index(self, node):
        try:
            return self._index[node]
        except KeyError:
            raise UnknownNodeError(f"unknown node {node}") from None

    def phases(self, node):
        i = self.index(node)
        return tuple(p for p in PHASES if self.phase_mask[i, p])

    def source_phasor(self, node=None):
        """Balanced per-unit phasor triple of a node's base voltage."""
        i = self.index(self.source if node is None else node)
        v = self.v_base_mag[i] * np.exp(1j * (self.v_base_ang[i] + _PHASE_OFFSETS))
        return np.where(self.phase_mask[i], v, 0.0)

    def flat_state(self):
        """PhasorSet with every node at the source phasor (zero-drop profile)."""
        v = np.tile(self.source_phasor(), (self.n_nodes, 1))
        v = np.where(self.phase_mask, v, 0.0)
        return PhasorSet(self.node_ids, v, self.phase_mask.copy())

    def total_load(self):
        """Total complex spot load, per-unit (all nodes, all phases)."""
        return complex(self.base_loads.sum())

    @property
    def z_base_ohm(self):
        return self.base_voltage_v**2 / self.base_power_va

    def _lca(self, i, j):
        key = (i, j) if i <= j else (j, i)
        hit = self._lca_cache.get(key)
        if hit is not None:
            return hit
        a, b = i, j
        while self.depth[a] > self.depth[b]:
            a = self.parent[a]
        while self.depth[b] > self.depth[a]:
            b = self.parent[b]
        while a != b:
            a, b = self.parent[a], self.parent[b]
        self._lca_cache[key] = a
        return a

    @cached_property
    def shared_impedance(self):
        """(n, n, 3, 3) tensor of shared-path impedances for all node pairs."""
        n = self.n_nodes
        z = np.zeros((n, n, 3, 3), dtype=complex)
        for i in range(n):
            for j in range(i, n):
                z[i, j] = z[j, i] = self.path_impedance[self._lca(i, j)]
        z.setflags(write=False)
        return z


def path_to_source(feeder, node):
    """Ordered list of LineSegments from the source down to ``node``."""
    i = feeder.index(node)
    rev = []
    while feeder.parent[i] >= 0:
        rev.append(feeder.lines[feeder.parent_line[i]])
        i = feeder.parent[i]
    return rev[::-1]


def shared_path_impedance(feeder, obs, actor):
    """Summed impedance of the path shared by source->obs and source->actor.

    Per-unit 3x3 complex matrix; multiply by ``feeder.z_base_ohm`` for ohms.
    Zero matrix whenever either node is the source.
    """
    i, j = feeder.index(obs), feeder.index(actor)
    return feeder.path_impedance[feeder._lca(i, j)]


# -- feeder file format ---------------------------------------------------
#
# Line-oriented text, "#" comments, blank lines ignored.  Sections are a
# bare keyword on its own line:
#
#   BASE       power_va / voltage_v (line-to-line) / source <id>
#   NODES      id  phases  v_volts(line-to-neutral)  angle_rad
#   LINES      from  to  zaa zab zac zbb zbc zcc     (ohms, "re+imj")
#   LOADS      node  phase  p_watts  q_vars          (consumption positive)

_SECTIONS = ("BASE", "NODES", "LINES", "LOADS")


def _read_sections(text):
    sections = {name: [] for name in _SECTIONS}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.upper() in _SECTIONS and len(line.split()) == 1:
            current = line.upper()
            continue
        if current is None:
            raise FeederFormatError(f"line {lineno}: data before any section header")
        sections[current].append((lineno, line.split()))
    return sections


def _parse_complex(tok, lineno):
    try:
        return complex(tok)
    except ValueError:
        raise FeederFormatError(f"line {lineno}: bad complex number {tok!r}") from None


def _parse_phases(tok, lineno):
    mask = [False, False, False]
    for ch in tok.lower():
        if ch not in "abc":
            raise FeederFormatError(f"line {lineno}: bad phase spec {tok!r}")
        mask["abc".index(ch)] = True
    if not any(mask):
        raise FeederFormatError(f"line {lineno}: empty phase spec")
    return tuple(mask)


def parse_feeder(text):
    """Build a Feeder from feeder-file text (see module docstring)."""
    sections = _read_sections(text)

    base = {}
    for lineno, toks in sections["BASE"]:
        if len(toks) != 2:
            raise FeederFormatError(f"line {lineno}: BASE entries are 'key value'")
        base[toks[0].lower()] = toks[1]
    try:
        power_va = float(base["power_va"])
        voltage_v = float(base["voltage_v"])
        source = int(base["source"])
    except KeyError as e:
        raise FeederFormatError(f"BASE section missing {e.args[0]}") from None
    except ValueError as e:
        raise FeederFormatError(f"BASE section: {e}") from None

    v_base_ln = voltage_v / SQRT3        # line-to-neutral volts
    s_base_1ph = power_va / 3.0          # per-phase VA
    z_base = voltage_v**2 / power_va     # ohms

    node_ids, phase_masks, v_mag, v_ang = [], {}, {}, {}
    for lineno, toks in sections["NODES"]:
        if len(toks) != 4:
            raise FeederFormatError(f"line {lineno}: NODES entries are 'id phases volts angle'")
        nid = int(toks[0])
        if nid in phase_masks:
            raise TopologyError(f"line {lineno}: duplicate node {nid}")
        node_ids.append(nid)
        phase_masks[nid] = _parse_phases(toks[1], lineno)
        v_mag[nid] = float(toks[2]) / v_base_ln
        v_ang[nid] = float(toks[3])
    if not node_ids:
        raise FeederFormatError("no NODES section entries")

    lines = []
    for lineno, toks in sections["LINES"]:
        if len(toks) != 8:
            raise FeederFormatError(
                f"line {lineno}: LINES entries are 'from to zaa zab zac zbb zbc zcc'")
        fr, to = int(toks[0]), int(toks[1])
        zaa, zab, zac, zbb, zbc, zcc = (_parse_complex(t, lineno) for t in toks[2:])
        z = np.array([[zaa, zab, zac], [zab, zbb, zbc], [zac, zbc, zcc]]) / z_base
        lines.append(LineSegment(fr, to, z))

    loads = {}
    for lineno, toks in sections["LOADS"]:
        if len(toks) != 4:
            raise FeederFormatError(f"line {lineno}: LOADS entries are 'node phase p_w q_var'")
        nid = int(toks[0])
        mask = _parse_phases(toks[1], lineno)
        s = complex(float(toks[2]), float(toks[3])) / s_base_1ph
        for p in PHASES:
            if mask[p]:
                loads[(nid, p)] = loads.get((nid, p), 0j) + s
    return Feeder(node_ids, source, phase_masks, v_mag, v_ang,
                  lines, loads, power_va, voltage_v)


def load_feeder(path):
    """Load a feeder file; the path '-' reads the same format from stdin."""
    if str(path) == "-":
        return parse_feeder(sys.stdin.read())
    with open(path, "r", encoding="utf-8") as fh:
        return parse_feeder(fh.read())


def chain_feeder(n_nodes, total_load_kw=1200.0, total_load_kvar=600.0,
                 z_total_self=2.0 + 1.2j, z_total_mutual=0.6 + 0.35j,
                 power_va=2.5e6, voltage_v=4800.0):
    """Uniform three-phase chain feeder for scaling studies.

    Node 1 is the source; node k+1 hangs off node k through an identical
    segment.  Total spot load and total trunk impedance are held fixed while
    the node count grows, so every size represents the same physical feeder
    sampled more densely and converges comparably.
    """
    if n_nodes < 2:
        raise ValueError("chain feeder needs at least 2 nodes")
    n_seg = n_nodes - 1
    z_base = voltage_v**2 / power_va
    z = (np.full((3, 3), z_total_mutual, dtype=complex)
         + np.eye(3) * (z_total_self - z_total_mutual)) / (z_base * n_seg)
    s = complex(total_load_kw * 1e3, total_load_kvar * 1e3) / (power_va / 3.0) / (3 * n_seg)
    ids = list(range(1, n_nodes + 1))
    masks = {n: (True, True, True) for n in ids}
    v_mag = {n: 1.0 for n in ids}
    lines = [LineSegment(k, k + 1, z) for k in ids[:-1]]
    loads = {(n, p): s for n in ids[1:] for p in PHASES}
    return Feeder(ids, 1, masks, v_mag, {n: 0.0 for n in ids},
                  lines, loads, power_va, voltage_v)
