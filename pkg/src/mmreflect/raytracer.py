"""Image-method specular ray tracer.

Every ordered sequence of up to ``max_bounces`` distinct-consecutive
surfaces is tried: the transmitter is mirrored across each plane in turn and
the chain is walked back from the receiver.  A candidate survives if every
bounce point lies inside its polygon, the neighbouring vertices sit on the
same side of each reflecting plane and no surface blocks any segment.

The work is vectorised over sequences and receivers, so a single call can
trace many receivers (heatmaps, all users of an environment step).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

from .scene import Box, Scene, Surface, complex_permittivity, material_properties
from .vectormath import ContractError

EPS = 1e-9
RSSI_FLOOR_DBM = -200.0
MAX_BOUNCES = 3


@dataclass(frozen=True)
class PropagationPath:
    vertices: np.ndarray
    surfaces_hit: tuple
    total_length: float
    gamma_product: complex

    @property
    def order(self) -> int:
        return len(self.surfaces_hit)


@dataclass(frozen=True)
class ChannelSummary:
    coefficient_sum: complex
    rssi_dbm: float
    path_count: int


@dataclass
class SurfaceArrays:
    """Flat array form of a surface list used by the vectorised kernels."""

    normals: np.ndarray  # (S, 3)
    offsets: np.ndarray  # (S,)  plane: n . x = offset
    edge_normals: np.ndarray  # (S, E, 3) inward in-plane edge normals
    edge_offsets: np.ndarray  # (S, E)
    eta: np.ndarray  # (S,) complex relative permittivity
    pec: np.ndarray  # (S,) bool
    surfaces: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.offsets)

    def __len__(self) -> int:
        return self.count


def polygon_arrays(polys: np.ndarray):
    """Plane and edge data for a batch of same-size convex polygons ``(N, V, 3)``."""
    nxt = np.roll(polys, -1, axis=1)
    newell = np.stack(
        [
            np.sum((polys[..., 1] - nxt[..., 1]) * (polys[..., 2] + nxt[..., 2]), axis=1),
            np.sum((polys[..., 2] - nxt[..., 2]) * (polys[..., 0] + nxt[..., 0]), axis=1),
            np.sum((polys[..., 0] - nxt[..., 0]) * (polys[..., 1] + nxt[..., 1]), axis=1),
        ],
        axis=1,
    )
    normals = newell / np.linalg.norm(newell, axis=1, keepdims=True)
    offsets = np.einsum("ij,ij->i", normals, polys[:, 0])
    edges = nxt - polys
    en = np.cross(normals[:, None, :], edges)
    en /= np.linalg.norm(en, axis=2, keepdims=True)
    eo = np.einsum("ijk,ijk->ij", en, polys)
    return normals, offsets, en, eo


def _pad_edges(en: np.ndarray, eo: np.ndarray, width: int):
    n, e = eo.shape
    if e == width:
        return en, eo
    en_p = np.zeros((n, width, 3))
    eo_p = np.full((n, width), -1.0)
    en_p[:, :e] = en
    eo_p[:, :e] = eo
    return en_p, eo_p


def surface_eta(surface: Surface, frequency_hz: float) -> complex:
    if surface.material.pec:
        return complex(np.inf)
    eta_p, sigma = material_properties(surface.material, frequency_hz / 1e9)
    return complex_permittivity(eta_p, sigma, frequency_hz)


def compile_surfaces(surfaces, frequency_hz: float) -> SurfaceArrays:
    surfaces = list(surfaces)
    if not surfaces:
        return SurfaceArrays(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 1, 3)),
                             np.zeros((0, 1)), np.zeros(0, complex), np.zeros(0, bool), [])
    width = max(len(s.polygon) for s in surfaces)
    normals = np.zeros((len(surfaces), 3))
    offsets = np.zeros(len(surfaces))
    en = np.zeros((len(surfaces), width, 3))
    eo = np.full((len(surfaces), width), -1.0)
    by_size: dict[int, list[int]] = {}
    for i, s in enumerate(surfaces):
        by_size.setdefault(len(s.polygon), []).append(i)
    for size, idx in by_size.items():
        polys = np.stack([surfaces[i].polygon for i in idx])
        n, o, e_n, e_o = polygon_arrays(polys)
        normals[idx], offsets[idx] = n, o
        en[idx, :size], eo[idx, :size] = e_n, e_o
    eta = np.array([surface_eta(s, frequency_hz) for s in surfaces])
    pec = np.array([s.material.pec for s in surfaces])
    eta = np.where(pec, 1.0 + 0j, eta)
    return SurfaceArrays(normals, offsets, en, eo, eta, pec, surfaces)


def concat_arrays(parts) -> SurfaceArrays:
    parts = [p for p in parts if p.count]
    width = max(p.edge_offsets.shape[1] for p in parts)
    padded = [_pad_edges(p.edge_normals, p.edge_offsets, width) for p in parts]
    return SurfaceArrays(
        np.concatenate([p.normals for p in parts]),
        np.concatenate([p.offsets for p in parts]),
        np.concatenate([en for en, _ in padded]),
        np.concatenate([eo for _, eo in padded]),
        np.concatenate([p.eta for p in parts]),
        np.concatenate([p.pec for p in parts]),
        [s for p in parts for s in p.surfaces],
    )


def _inside(points: np.ndarray, sidx: np.ndarray, arr: SurfaceArrays, eps: float) -> np.ndarray:
    """Point-in-convex-polygon for points already on the plane of ``sidx``."""
    d = np.einsum("...ek,...k->...e", arr.edge_normals[sidx], points) - arr.edge_offsets[sidx]
    return np.all(d >= -eps, axis=-1)


@lru_cache(maxsize=32)
def _sequences(n_surf: int, order: int) -> np.ndarray:
    if order == 1:
        return np.arange(n_surf)[:, None]
    seqs = np.array(list(product(range(n_surf), repeat=order)), dtype=np.intp).reshape(-1, order)
    keep = np.all(seqs[:, 1:] != seqs[:, :-1], axis=1)
    seqs = seqs[keep]
    seqs.setflags(write=False)
    return seqs


class Tracer:
    """Traces specular paths among a fixed set of surfaces.

    ``surfaces`` may be a list of :class:`Surface` or a precompiled
    :class:`SurfaceArrays` (the environment rebuilds only the tile part
    each step and concatenates it with the cached static part).
    """

    def __init__(self, surfaces, frequency_hz: float, max_bounces: int = 2):
        if not 0 <= max_bounces <= MAX_BOUNCES:
            raise ContractError(f"max_bounces must be in [0, {MAX_BOUNCES}]")
        if isinstance(surfaces, SurfaceArrays):
            self.arrays = surfaces
        else:
            self.arrays = compile_surfaces(surfaces, frequency_hz)
        self.frequency_hz = frequency_hz
        self.wavelength = 299_792_458.0 / frequency_hz
        self.max_bounces = max_bounces
        self._seqs = {k: _sequences(self.arrays.count, k) for k in range(1, max_bounces + 1)}

    # -- occlusion -----------------------------------------------------
    def blocked(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """True where segment ``a[i] -> b[i]`` crosses a surface interior."""
        arr = self.arrays
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        if arr.count == 0 or len(a) == 0:
            return np.zeros(len(a), bool)
        d = b - a
        length = np.linalg.norm(d, axis=1)
        denom = d @ arr.normals.T
        num = arr.offsets[None, :] - a @ arr.normals.T
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        tol = EPS / np.maximum(length, EPS)
        cand = (np.abs(denom) > 1e-15) & (t > tol[:, None]) & (t < 1.0 - tol[:, None])
        qi, si = np.nonzero(cand)
        out = np.zeros(len(a), bool)
        if len(qi) == 0:
            return out
        pts = a[qi] + t[qi, si, None] * d[qi]
        dist = np.einsum("qek,qk->qe", arr.edge_normals[si], pts) - arr.edge_offsets[si]
        hit = np.all(dist > EPS, axis=1)
        out[qi[hit]] = True
        return out

    # -- path search ---------------------------------------------------
    def _order_paths(self, tx: np.ndarray, rxs: np.ndarray, order: int):
        """Valid (receiver index, sequence, vertices) for one bounce order."""
        arr = self.arrays
        seqs = self._seqs[order]
        m = len(seqs)
        r = len(rxs)
        n = arr.normals
        off = arr.offsets
        images = [np.broadcast_to(tx, (m, 3))]
        for j in range(order):
            s = seqs[:, j]
            cur = images[-1]
            dist = np.einsum("ij,ij->i", cur, n[s]) - off[s]
            images.append(cur - 2.0 * dist[:, None] * n[s])

        # Walk back from the receiver; candidates are pruned as they fail.
        ridx = np.repeat(np.arange(r), m)
        sidx = np.tile(np.arange(m), r)
        point = rxs[ridx]
        verts = [None] * order
        for j in range(order - 1, -1, -1):
            s = seqs[sidx, j]
            img = images[j + 1][sidx]
            d = img - point
            denom = np.einsum("ij,ij->i", d, n[s])
            num = off[s] - np.einsum("ij,ij->i", point, n[s])
            with np.errstate(divide="ignore", invalid="ignore"):
                t = num / denom
            ok = (np.abs(denom) > 1e-15) & (t > 1e-12) & (t < 1.0 - 1e-12)
            p = point[ok] + t[ok, None] * d[ok]
            ridx, sidx, point = ridx[ok], sidx[ok], p
            verts = [v[ok] if v is not None else None for v in verts]
            inside = _inside(p, seqs[sidx, j], arr, EPS)
            ridx, sidx, point = ridx[inside], sidx[inside], point[inside]
            verts = [v[inside] if v is not None else None for v in verts]
            verts[j] = point
            if len(ridx) == 0:
                return ridx, seqs[sidx], np.zeros((0, order + 2, 3))

        chain = np.stack([np.broadcast_to(tx, (len(ridx), 3))] + verts + [rxs[ridx]], axis=1)
        ok = np.ones(len(ridx), bool)
        sq = seqs[sidx]
        for j in range(order):
            s = sq[:, j]
            before = np.einsum("ij,ij->i", chain[:, j], n[s]) - off[s]
            after = np.einsum("ij,ij->i", chain[:, j + 2], n[s]) - off[s]
            ok &= (before * after > 0) & (np.abs(before) > EPS) & (np.abs(after) > EPS)
        ridx, sq, chain = ridx[ok], sq[ok], chain[ok]
        if len(ridx) == 0:
            return ridx, sq, chain
        a = chain[:, :-1].reshape(-1, 3)
        b = chain[:, 1:].reshape(-1, 3)
        seg_len = np.linalg.norm(b - a, axis=1)
        ok = seg_len.reshape(len(ridx), order + 1).min(axis=1) > EPS
        blocked = self.blocked(a, b).reshape(len(ridx), order + 1).any(axis=1)
        ok &= ~blocked
        return ridx[ok], sq[ok], chain[ok]

    def trace_arrays(self, tx, rxs, max_bounces: int | None = None) -> list[dict]:
        """Per receiver: ``{"seqs": list of tuples, "chains": (P, k+2, 3) per order}``.

        Returned as a flat dict per receiver with keys ``lengths`` (P,),
        ``gammas`` (P,) and ``paths`` (list of (sequence, vertices)).
        """
        tx = np.asarray(tx, dtype=float)
        rxs = np.atleast_2d(np.asarray(rxs, dtype=float))
        kmax = self.max_bounces if max_bounces is None else max_bounces
        if not 0 <= kmax <= self.max_bounces:
            raise ContractError("max_bounces exceeds the tracer's configured depth")
        out = [{"lengths": [], "gammas": [], "paths": []} for _ in range(len(rxs))]

        los_block = self.blocked(np.broadcast_to(tx, rxs.shape), rxs)
        for i, rx in enumerate(rxs):
            length = float(np.linalg.norm(rx - tx))
            if not los_block[i] and length > EPS:
                out[i]["lengths"].append(np.array([length]))
                out[i]["gammas"].append(np.array([1.0 + 0j]))
                out[i]["paths"].append((np.zeros((1, 0), np.intp), np.stack([tx, rx])[None]))

        for order in range(1, kmax + 1):
            if self.arrays.count == 0:
                break
            ridx, seqs, chains = self._order_paths(tx, rxs, order)
            if len(ridx) == 0:
                continue
            lengths = np.linalg.norm(np.diff(chains, axis=1), axis=2).sum(axis=1)
            gammas = self._gamma_products(seqs, chains)
            for i in np.unique(ridx):
                sel = ridx == i
                out[i]["lengths"].append(lengths[sel])
                out[i]["gammas"].append(gammas[sel])
                out[i]["paths"].append((seqs[sel], chains[sel]))
        for rec in out:
            rec["lengths"] = np.concatenate(rec["lengths"]) if rec["lengths"] else np.zeros(0)
            rec["gammas"] = np.concatenate(rec["gammas"]) if rec["gammas"] else np.zeros(0, complex)
        return out

    def _gamma_products(self, seqs: np.ndarray, chains: np.ndarray) -> np.ndarray:
        arr = self.arrays
        g = np.ones(len(seqs), complex)
        for j in range(seqs.shape[1]):
            s = seqs[:, j]
            d = chains[:, j + 1] - chains[:, j]
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            cos_i = np.clip(np.abs(np.einsum("ij,ij->i", d, arr.normals[s])), 1e-12, 1.0)
            root = np.sqrt(arr.eta[s] - (1.0 - cos_i**2))
            gam = (cos_i - root) / (cos_i + root)
            g *= np.where(arr.pec[s], -1.0 + 0j, gam)
        return g

    def coefficient_sums(self, tx, rxs, max_bounces: int | None = None):
        """Coherent channel sums and path counts for each receiver."""
        recs = self.trace_arrays(tx, rxs, max_bounces)
        lam = self.wavelength
        sums = np.zeros(len(recs), complex)
        counts = np.zeros(len(recs), int)
        for i, rec in enumerate(recs):
            d = rec["lengths"]
            if len(d):
                h = lam / (4.0 * math.pi * d) * rec["gammas"] * np.exp(-2j * math.pi * d / lam)
                sums[i] = h.sum()
                counts[i] = len(d)
        return sums, counts

    def rssi_dbm(self, tx, rxs, tx_power_dbm: float, max_bounces: int | None = None) -> np.ndarray:
        sums, counts = self.coefficient_sums(tx, rxs, max_bounces)
        return rssi_from_sums(sums, counts, tx_power_dbm)

    def paths(self, tx, rx, max_bounces: int | None = None) -> list[PropagationPath]:
        rec = self.trace_arrays(tx, np.asarray(rx, float)[None], max_bounces)[0]
        out = []
        k = 0
        for seqs, chains in rec["paths"]:
            for seq, chain in zip(seqs, chains):
                length = float(np.linalg.norm(np.diff(chain, axis=0), axis=1).sum())
                hit = tuple(self.arrays.surfaces[s] for s in seq) if self.arrays.surfaces else tuple(seq)
                out.append(PropagationPath(chain.copy(), hit, length, complex(rec["gammas"][k])))
                k += 1
        return out


def rssi_from_sums(sums: np.ndarray, counts: np.ndarray, tx_power_dbm: float) -> np.ndarray:
    mag = np.abs(sums)
    with np.errstate(divide="ignore"):
        db = tx_power_dbm + 20.0 * np.log10(mag)
    return np.where((counts > 0) & (mag > 0) & np.isfinite(db), np.maximum(db, RSSI_FLOOR_DBM), RSSI_FLOOR_DBM)


def trace_paths(scene: Scene, tx, rx, max_bounces: int = 2) -> list[PropagationPath]:
    """All unoccluded specular paths of at most ``max_bounces`` reflections."""
    tracer = Tracer(scene.surfaces, scene.frequency_hz, max_bounces)
    return tracer.paths(np.asarray(tx, float), np.asarray(rx, float))


def path_coefficient(path: PropagationPath, wavelength_m: float) -> complex:
    """``lambda / (4 pi d) * Gamma * exp(-j 2 pi d / lambda)`` for a whole path."""
    if not wavelength_m > 0:
        raise ContractError("wavelength must be positive")
    d = path.total_length
    if not d > 0:
        raise ContractError("zero-length path")
    return complex(wavelength_m / (4.0 * math.pi * d) * path.gamma_product
                   * np.exp(-2j * math.pi * d / wavelength_m))


def received_power(tx_power_dbm: float, paths, wavelength_m: float) -> ChannelSummary:
    total = complex(sum(path_coefficient(p, wavelength_m) for p in paths))
    count = len(paths)
    rssi = float(rssi_from_sums(np.array([total]), np.array([count]), tx_power_dbm)[0])
    return ChannelSummary(total, rssi, count)


@dataclass(frozen=True)
class GridSpec:
    x0: float
    x1: float
    y0: float
    y1: float
    step: float
    z: float

    def __post_init__(self):
        if not self.step > 0:
            raise ContractError("grid step must be positive")
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ContractError("grid bounds inverted")

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        nx = int(math.floor((self.x1 - self.x0) / self.step + 1e-9)) + 1
        ny = int(math.floor((self.y1 - self.y0) / self.step + 1e-9)) + 1
        return self.x0 + self.step * np.arange(nx), self.y0 + self.step * np.arange(ny)


def rssi_heatmap(scene: Scene, grid: GridSpec, max_bounces: int = 2,
                 tracer: Tracer | None = None, chunk: int = 64) -> np.ndarray:
    """Row-major ``(ny, nx)`` RSSI matrix in dBm sampled at the grid points."""
    xs, ys = grid.axes()
    if scene.bounds is not None:
        corners = Box((xs[0], ys[0], grid.z), (xs[-1], ys[-1], grid.z))
        if not (scene.bounds.contains(corners.lo) and scene.bounds.contains(corners.hi)):
            raise ContractError("heatmap grid lies outside the scene bounding box")
    tracer = tracer or Tracer(scene.surfaces, scene.frequency_hz, max_bounces)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, grid.z)], axis=1)
    out = np.empty(len(pts))
    for lo in range(0, len(pts), chunk):
        out[lo:lo + chunk] = tracer.rssi_dbm(scene.ap_position, pts[lo:lo + chunk],
                                             scene.ap_power_dbm, max_bounces)
    return out.reshape(gy.shape)


def write_heatmap_csv(path, grid: GridSpec, values: np.ndarray) -> None:
    xs, ys = grid.axes()
    if np.shape(values) != (len(ys), len(xs)):
        raise ContractError("heatmap values do not match the grid")
    lines = ["y\\x," + ",".join(f"{x:.2f}" for x in xs)]
    for y, row in zip(ys, values):
        lines.append(f"{y:.2f}," + ",".join(f"{v:.2f}" for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_heatmap_pgm(path, values: np.ndarray, lo_dbm: float = -140.0, hi_dbm: float = -40.0) -> None:
    """8-bit binary PGM; ``lo_dbm`` maps to 0 and ``hi_dbm`` to 255."""
    if not hi_dbm > lo_dbm:
        raise ContractError("PGM range must be increasing")
    scaled = np.clip((values - lo_dbm) / (hi_dbm - lo_dbm), 0.0, 1.0)
    pix = np.round(scaled * 255.0).astype(np.uint8)
    ny, nx = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
