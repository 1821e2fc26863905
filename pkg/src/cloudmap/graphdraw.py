"""Graph-drawing mapping: balanced KMeans into clusters, Delaunay
triangulation at two levels, and a hierarchical grid embedding that writes
point coordinates into a (grid*grid) x (grid*grid) 3-channel image.

The Delaunay edge sets are built by incremental Bowyer-Watson insertion
(3D tetrahedra, with 2D/1D fallbacks for flat or collinear inputs); a
brute-force circumsphere enumeration serves as the independent test oracle.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .project import GradPath, MappedImage, cloud_key

MAX_CLOUD_POINTS = 8192


@dataclass(frozen=True)
class Graph:
    """Undirected graph: vertex count plus canonical (u < v) edge pairs."""
    n_vertices: int
    edges: np.ndarray  # (E, 2) int64, each row sorted, rows unique

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        e = np.sort(e, axis=1)
        if len(e):
            e = np.unique(e, axis=0)
            if (e[:, 0] == e[:, 1]).any():
                raise ValueError("self-loop in edge list")
            if e.max() >= self.n_vertices or e.min() < 0:
                raise ValueError("edge index out of range")
        object.__setattr__(self, "edges", e)

    def adjacency(self) -> list:
        adj = [[] for _ in range(self.n_vertices)]
        for u, v in self.edges:
            adj[int(u)].append(int(v))
            adj[int(v)].append(int(u))
        return adj


@dataclass
class ClusterHierarchy:
    centers: np.ndarray        # (K, 3)
    members: list              # K int arrays partitioning range(N)
    k: int
    top_edges: Graph | None = None    # Delaunay over centers
    within_edges: list | None = None  # K Graphs, one per cluster's members


@dataclass
class GridEmbedding:
    grid_size: int
    cells: np.ndarray            # (M, 2) int64 (row, col), injective
    energy_trace: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# balanced KMeans

def _kmeanspp_init(pts: np.ndarray, k: int, rng) -> np.ndarray:
    n = len(pts)
    centers = np.empty((k, 3))
    centers[0] = pts[rng.integers(n)]
    d2 = ((pts - centers[0]) ** 2).sum(1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[i] = pts[rng.integers(n)]
        else:
            centers[i] = pts[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((pts - centers[i]) ** 2).sum(1))
    return centers


def balanced_kmeans(cloud: PointCloud, k: int = 32, alpha: float = 1.2,
                    seed: int = 0, max_iters: int = 50) -> ClusterHierarchy:
    """Lloyd iterations (kmeans++ init) followed by rebalancing.

    While any cluster exceeds the cap ceil(alpha*N/k), its member farthest
    from the cluster center is moved to the nearest center whose cluster is
    still below the cap. Centers are recomputed once after balancing, so
    every output cluster satisfies the cap.
    """
    pts = cloud.points
    n = len(pts)
    if n < k:
        raise ValueError(f"need at least {k} points, got {n}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(pts, k, rng)

    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new_assign = d2.argmin(1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for i in range(k):
            sel = assign == i
            if sel.any():
                centers[i] = pts[sel].mean(0)

    cap = int(np.ceil(alpha * n / k))
    d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    sizes = np.bincount(assign, minlength=k)
    while True:
        over = np.flatnonzero(sizes > cap)
        if len(over) == 0:
            break
        i = int(over[0])
        members_i = np.flatnonzero(assign == i)
        j = members_i[d2[members_i, i].argmax()]
        open_clusters = np.flatnonzero(sizes < cap)
        target = int(open_clusters[d2[j, open_clusters].argmin()])
        assign[j] = target
        sizes[i] -= 1
        sizes[target] += 1

    for i in range(k):
        sel = assign == i
        if sel.any():
            centers[i] = pts[sel].mean(0)
    members = [np.flatnonzero(assign == i) for i in range(k)]
    return ClusterHierarchy(centers=centers, members=members, k=k)


# ---------------------------------------------------------------------------
# Delaunay triangulation (Bowyer-Watson) and its brute-force oracle

_STRICT = 1.0 - 1e-12  # circumsphere containment margin


def _circumspheres(tets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centers and squared radii for (T, 4, d) simplex vertex arrays.
    Degenerate (flat) simplices get infinite radius."""
    a = tets[:, 0, :]
    rows = tets[:, 1:, :] - a[:, None, :]                  # (T, d, d)
    rhs = 0.5 * (rows * rows).sum(-1) + (rows * a[:, None, :]).sum(-1)
    d = tets.shape[2]
    det = np.linalg.det(rows)
    ok = np.abs(det) > 1e-30
    centers = np.zeros_like(a)
    if ok.any():
        centers[ok] = np.linalg.solve(rows[ok], rhs[ok][:, :, None])[:, :, 0]
    r2 = ((centers - a) ** 2).sum(-1)
    r2[~ok] = np.inf
    return centers, r2


def _bowyer_watson(pts: np.ndarray) -> list:
    """Incremental insertion in d dimensions (d = pts.shape[1], 2 or 3).
    Returns simplices as tuples of input indices."""
    m, d = pts.shape
    lo, hi = pts.min(0), pts.max(0)
    span = float((hi - lo).max()) or 1.0
    mid = (lo + hi) / 2.0
    scale = 1000.0 * span
    if d == 3:
        super_pts = mid + scale * np.array(
            [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
    else:
        super_pts = mid + scale * np.array([[0.0, 2.0], [-2.0, -1.5], [2.0, -1.5]])
    allp = np.vstack([super_pts, pts])
    ns = len(super_pts)

    verts = [tuple(range(ns))]
    centers, r2 = _circumspheres(allp[np.array(verts)])
    centers, r2 = list(centers), list(r2)

    for ip in range(ns, ns + m):
        p = allp[ip]
        carr = np.asarray(centers)
        rarr = np.asarray(r2)
        dist2 = ((carr - p) ** 2).sum(-1)
        bad = np.flatnonzero(dist2 < rarr * _STRICT)
        if len(bad) == 0:
            # numerical tie everywhere: fall back to the nearest circumsphere
            bad = np.array([int(np.argmin(dist2 - rarr))])
        face_count = {}
        for t in bad:
            vs = verts[t]
            for skip in range(d + 1):
                face = tuple(sorted(vs[:skip] + vs[skip + 1:]))
                face_count[face] = face_count.get(face, 0) + 1
        boundary = [f for f, cnt in face_count.items() if cnt == 1]
        keep = sorted(set(range(len(verts))) - set(int(b) for b in bad))
        verts = [verts[t] for t in keep]
        centers = [centers[t] for t in keep]
        r2 = [r2[t] for t in keep]
        new_verts = [tuple(sorted(f + (ip,))) for f in boundary]
        nc, nr = _circumspheres(allp[np.array(new_verts)])
        verts.extend(new_verts)
        centers.extend(nc)
        r2.extend(nr)

    result = []
    for vs in verts:
        if min(vs) >= ns:
            result.append(tuple(v - ns for v in vs))
    return result


def _edges_from_simplices(simplices: list, n_pairs: int) -> set:
    edges = set()
    for vs in simplices:
        for a, b in itertools.combinations(vs, 2):
            edges.add((a, b) if a < b else (b, a))
    return edges


def _connected(n: int, edges: set) -> bool:
    if n <= 1:
        return True
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        parent[find(a)] = find(b)
    root = find(0)
    return all(find(v) == root for v in range(n))


def _triangulate_nd(pts: np.ndarray) -> set:
    """Bowyer-Watson with validation; jittered retries handle degenerate
    (cospherical / cocircular) inputs deterministically."""
    m = len(pts)
    span = float((pts.max(0) - pts.min(0)).max()) or 1.0
    for attempt, eps in enumerate((0.0, 1e-9, 1e-7)):
        work = pts
        if eps > 0.0:
            rng = np.random.default_rng([17, attempt])
            work = pts + rng.uniform(-eps, eps, size=pts.shape) * span
        try:
            simplices = _bowyer_watson(work)
        except np.linalg.LinAlgError:
            continue
        edges = _edges_from_simplices(simplices, m)
        covered = set(v for e in edges for v in e)
        if len(covered) == m and _connected(m, edges):
            return edges
    raise RuntimeError(f"triangulation failed for {m} points after jitter retries")


def _principal_frame(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Centered coordinates, principal axes (rows of vt), effective rank."""
    ctr = pts - pts.mean(0)
    _, s, vt = np.linalg.svd(ctr, full_matrices=False)
    tol = max(s[0] * 1e-9, 1e-12) if len(s) else 0.0
    rank = int((s > tol).sum())
    return ctr, vt, rank


def delaunay3(points: np.ndarray) -> Graph:
    """Edge set of the Delaunay tetrahedralization of an (M, 3) point set.

    M = 2 yields the single edge, M = 3 the triangle. Coplanar inputs fall
    back to 2D Delaunay in the best-fit plane, collinear inputs to a sorted
    chain. Exact duplicate points are collapsed onto one representative each
    and reattached to it by an edge afterwards.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    m = len(pts)
    if m < 2:
        raise ValueError("need at least 2 points")

    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    nu = len(uniq)
    rep = np.full(nu, m, dtype=np.int64)
    np.minimum.at(rep, inverse, np.arange(m))

    edges = set()
    if nu == 2:
        edges.add(tuple(sorted((int(rep[0]), int(rep[1])))))
    elif nu == 3:
        for a, b in itertools.combinations(range(3), 2):
            edges.add(tuple(sorted((int(rep[a]), int(rep[b])))))
    elif nu >= 4:
        ctr, vt, rank = _principal_frame(uniq)
        if rank <= 1:
            order = np.argsort(ctr @ vt[0], kind="stable")
            for a, b in zip(order[:-1], order[1:]):
                edges.add(tuple(sorted((int(rep[a]), int(rep[b])))))
        else:
            coords = uniq if rank == 3 else ctr @ vt[:2].T
            for a, b in _triangulate_nd(coords):
                edges.add(tuple(sorted((int(rep[a]), int(rep[b])))))

    for i in range(m):
        r = int(rep[inverse[i]])
        if r != i:
            edges.add((min(r, i), max(r, i)))

    return Graph(m, np.array(sorted(edges), dtype=np.int64).reshape(-1, 2))


def delaunay_oracle(points: np.ndarray) -> Graph:
    """Brute-force Delaunay edge set: enumerate all 4-point subsets, keep
    tetrahedra whose circumsphere strictly contains no other point, union
    their edges. O(M^5); intended for M <= 40 in general position."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    m = len(pts)
    if m < 4:
        raise ValueError("oracle needs at least 4 points")
    if m > 40:
        raise ValueError("oracle limited to 40 points")
    subsets = np.array(list(itertools.combinations(range(m), 4)), dtype=np.int64)
    centers, r2 = _circumspheres(pts[subsets])
    dist2 = ((pts[None, :, :] - centers[:, None, :]) ** 2).sum(-1)  # (T, M)
    rows = np.arange(len(subsets))[:, None]
    dist2[rows, subsets] = np.inf  # a tet's own vertices sit on the sphere
    finite = np.isfinite(r2)
    empty = finite & ~(dist2 < r2[:, None] * _STRICT).any(1)
    edges = set()
    for vs in subsets[empty]:
        for a, b in itertools.combinations(vs.tolist(), 2):
            edges.add((a, b) if a < b else (b, a))
    return Graph(m, np.array(sorted(edges), dtype=np.int64).reshape(-1, 2))


# ---------------------------------------------------------------------------
# grid embedding

def _nearest_free_cell(occ: np.ndarray, target: tuple, gs: int) -> tuple:
    """First free cell by expanding Chebyshev rings around the rounded
    target; the winner minimizes (squared distance to target, row, col).
    Two extra rings are scanned past the first hit so ring order cannot
    misrank true euclidean distance."""
    tr, tc = target
    r0 = min(max(int(round(tr)), 0), gs - 1)
    c0 = min(max(int(round(tc)), 0), gs - 1)
    best = None
    found_at = None
    for radius in range(2 * gs + 1):
        if found_at is not None and radius > found_at + 2:
            break
        rlo, rhi = r0 - radius, r0 + radius
        for r in range(max(rlo, 0), min(rhi, gs - 1) + 1):
            if r == rlo or r == rhi:
                cols = range(max(c0 - radius, 0), min(c0 + radius, gs - 1) + 1)
            else:
                cols = [c for c in (c0 - radius, c0 + radius) if 0 <= c < gs]
            for c in cols:
                if occ[r, c] >= 0:
                    continue
                key = ((r - tr) ** 2 + (c - tc) ** 2, r, c)
                if best is None or key < best:
                    best = key
                    if found_at is None:
                        found_at = radius
        if found_at is None and best is not None:
            found_at = radius
    if best is None:
        raise RuntimeError("no free cell available")
    return best[1], best[2]


def _edge_energy(cells: np.ndarray, edges: np.ndarray) -> int:
    if len(edges) == 0:
        return 0
    return int(np.abs(cells[edges[:, 0]] - cells[edges[:, 1]]).sum())


def grid_embed(graph: Graph, positions: np.ndarray, grid_size: int = 16,
               seed: int = 0, max_passes: int = 1000) -> GridEmbedding:
    """Injective assignment of graph vertices to grid cells.

    Vertices are projected onto their two principal components, snapped to
    free cells in descending distance-from-centroid order, then improved by
    a local search over single-vertex moves and vertex swaps that only ever
    strictly reduces the total Manhattan edge length. The per-pass energies
    are recorded in the returned embedding's energy_trace.
    """
    m = graph.n_vertices
    gs = grid_size
    if m > gs * gs:
        raise ValueError(f"{m} vertices do not fit a {gs}x{gs} grid")
    pos = np.asarray(positions, dtype=np.float64).reshape(m, 3)

    ctr = pos - pos.mean(0)
    if m == 1:
        proj = np.zeros((1, 2))
    else:
        _, _, vt = np.linalg.svd(ctr, full_matrices=False)
        axes = vt[:2] if len(vt) >= 2 else np.vstack([vt, np.zeros((2 - len(vt), 3))])
        for i in range(2):  # fix the sign ambiguity of each axis
            j = int(np.argmax(np.abs(axes[i])))
            if axes[i, j] < 0:
                axes[i] = -axes[i]
        proj = ctr @ axes.T

    targets = np.empty((m, 2))
    for ax, out in ((0, 1), (1, 0)):  # PC1 spreads across columns
        lo, hi = proj[:, ax].min(), proj[:, ax].max()
        if hi - lo < 1e-12:
            targets[:, out] = (gs - 1) / 2.0
        else:
            targets[:, out] = (proj[:, ax] - lo) / (hi - lo) * (gs - 1)

    radius = np.linalg.norm(ctr, axis=1)
    order = sorted(range(m), key=lambda v: (-radius[v], v))
    occ = np.full((gs, gs), -1, dtype=np.int64)
    cells = np.zeros((m, 2), dtype=np.int64)
    for v in order:
        r, c = _nearest_free_cell(occ, (targets[v, 0], targets[v, 1]), gs)
        occ[r, c] = v
        cells[v] = (r, c)

    edges = graph.edges
    adj = graph.adjacency()
    trace = [_edge_energy(cells, edges)]
    if len(edges) == 0:
        return GridEmbedding(gs, cells, trace)

    for _ in range(max_passes):
        improved = False
        for u in range(m):
            nb = np.array(adj[u], dtype=np.int64)
            if len(nb) == 0:
                continue
            nb_cells = cells[nb]
            cur_u = int(np.abs(cells[u] - nb_cells).sum())

            free = np.argwhere(occ < 0)
            best_move = None
            if len(free):
                cost = np.abs(free[:, None, :] - nb_cells[None, :, :]).sum((1, 2))
                delta = cost - cur_u
                k = int(np.lexsort((free[:, 1], free[:, 0], delta))[0])
                if delta[k] < 0:
                    best_move = (int(delta[k]), int(free[k, 0]), int(free[k, 1]))

            # swap deltas against every other vertex, vectorized
            s1 = np.abs(cells[:, None, :] - nb_cells[None, :, :]).sum((1, 2))
            per_v = np.abs(cells[edges[:, 0]] - cells[edges[:, 1]]).sum(1)
            cost_at_u = np.zeros(m, dtype=np.int64)
            du = np.abs(cells[u] - cells).sum(1)
            np.add.at(cost_at_u, edges[:, 0], du[edges[:, 1]])
            np.add.at(cost_at_u, edges[:, 1], du[edges[:, 0]])
            cur_v = np.zeros(m, dtype=np.int64)
            np.add.at(cur_v, edges[:, 0], per_v)
            np.add.at(cur_v, edges[:, 1], per_v)
            d_uv = du[nb]
            s1w = s1.copy()
            s1w[nb] += d_uv
            cost_at_u_w = cost_at_u.copy()
            cost_at_u_w[nb] += d_uv
            swap_delta = (s1w - cur_u) + (cost_at_u_w - cur_v)
            swap_delta[u] = 1
            v = int(swap_delta.argmin())
            best_swap = (int(swap_delta[v]), v) if swap_delta[v] < 0 else None

            if best_move is not None and (best_swap is None or best_move[0] <= best_swap[0]):
                _, r, c = best_move
                occ[cells[u, 0], cells[u, 1]] = -1
                occ[r, c] = u
                cells[u] = (r, c)
                improved = True
            elif best_swap is not None:
                v = best_swap[1]
                cu, cv = cells[u].copy(), cells[v].copy()
                cells[u], cells[v] = cv, cu
                occ[cv[0], cv[1]] = u
                occ[cu[0], cu[1]] = v
                improved = True
        trace.append(_edge_energy(cells, edges))
        if not improved:
            break
    return GridEmbedding(gs, cells, trace)


# ---------------------------------------------------------------------------
# hierarchy assembly and drawing

def build_hierarchy(cloud: PointCloud, k: int = 32, alpha: float = 1.2,
                    seed: int = 0, max_iters: int = 50) -> ClusterHierarchy:
    """Cluster the cloud and attach both Delaunay levels."""
    h = balanced_kmeans(cloud, k=k, alpha=alpha, seed=seed, max_iters=max_iters)
    h.top_edges = delaunay3(h.centers)
    h.within_edges = []
    for mem in h.members:
        if len(mem) >= 2:
            h.within_edges.append(delaunay3(cloud.points[mem]))
        else:
            h.within_edges.append(Graph(len(mem), np.empty((0, 2), dtype=np.int64)))
    return h


def draw_image(cloud: PointCloud, hierarchy: ClusterHierarchy,
               top_embed: GridEmbedding, within_embeds: list) -> MappedImage:
    """Compose the final image: cluster i owns the pixel block of its top
    cell; member j of cluster i colors one pixel of that block with its
    encoded coordinates (t + 1) / 2. Every input point lands on exactly one
    pixel; the links are recorded in leak_map."""
    k = hierarchy.k
    if len(within_embeds) != k or len(top_embed.cells) != k:
        raise ValueError("embedding does not match hierarchy")
    gs_top = top_embed.grid_size
    if len(np.unique(top_embed.cells, axis=0)) != k:
        raise ValueError("top embedding not injective")
    gs_in = within_embeds[0].grid_size if k else 16
    size = gs_top * gs_in
    data = np.zeros((size, size, 3), dtype=np.float64)
    links = np.empty((cloud.n * 3, 4), dtype=np.int64)
    li = 0
    for i in range(k):
        mem = hierarchy.members[i]
        emb = within_embeds[i]
        if len(emb.cells) != len(mem):
            raise ValueError(f"cluster {i}: embedding size mismatch")
        if len(mem) and len(np.unique(emb.cells, axis=0)) != len(mem):
            raise ValueError(f"cluster {i}: embedding not injective")
        r, c = int(top_embed.cells[i, 0]), int(top_embed.cells[i, 1])
        for j, pt in enumerate(mem):
            u, v = int(emb.cells[j, 0]), int(emb.cells[j, 1])
            rr, cc = gs_in * r + u, gs_in * c + v
            data[rr, cc, :] = np.clip((cloud.points[pt] + 1.0) / 2.0, 0.0, 1.0)
            for ch in range(3):
                links[li] = (rr, cc, pt, ch)
                li += 1
    return MappedImage(data, GradPath.COORDINATE_LEAK, leak_map=links,
                       source_key=cloud_key(cloud))


def map_graphdraw(cloud: PointCloud, k: int = 32, alpha: float = 1.2,
                  grid: int = 16, seed: int = 0, max_iters: int = 50) -> MappedImage:
    """Full pipeline: cluster, triangulate both levels, embed, draw."""
    if cloud.n > MAX_CLOUD_POINTS:
        raise ValueError(f"cloud exceeds {MAX_CLOUD_POINTS} points")
    h = build_hierarchy(cloud, k=k, alpha=alpha, seed=seed, max_iters=max_iters)
    top_embed = grid_embed(h.top_edges, h.centers, grid_size=grid, seed=seed)
    within_embeds = []
    for i, mem in enumerate(h.members):
        if len(mem) == 0:
            within_embeds.append(GridEmbedding(grid, np.empty((0, 2), dtype=np.int64)))
            continue
        within_embeds.append(
            grid_embed(h.within_edges[i], cloud.points[mem], grid_size=grid, seed=seed + i + 1))
    return draw_image(cloud, h, top_embed, within_embeds)


def write_edge_list(graph: Graph, path) -> None:
    """Debug dump, one "u v" pair per line."""
    with open(path, "w") as fh:
        for u, v in graph.edges:
            fh.write(f"{u} {v}\n")
