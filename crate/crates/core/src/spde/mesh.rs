//! Triangular meshes: Bowyer-Watson Delaunay triangulation, a lattice mesh
//! with a coarse extension ring around the data domain, point location and
//! barycentric projection matrices.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::LocationTable;
use crate::linalg::CsrMatrix;

/// Minimum triangle area accepted in a mesh.
pub const MIN_AREA: f64 = 1e-12;
/// Below this target the mesh is built from the data hull alone.
pub const SMALL_MESH: usize = 16;
/// Extension ring width as a fraction of the data bounding-box diagonal.
pub const RING_FRACTION: f64 = 0.2;

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn circumcircle(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> ([f64; 2], f64) {
    let bx = b[0] - a[0];
    let by = b[1] - a[1];
    let cx = c[0] - a[0];
    let cy = c[1] - a[1];
    let d = 2.0 * (bx * cy - by * cx);
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    ([a[0] + ux, a[1] + uy], ux * ux + uy * uy)
}

struct Tri {
    v: [usize; 3],
    center: [f64; 2],
    r2: f64,
}

fn make_tri(pts: &[[f64; 2]], mut v: [usize; 3]) -> Tri {
    if orient(pts[v[0]], pts[v[1]], pts[v[2]]) < 0.0 {
        v.swap(1, 2);
    }
    let (center, r2) = circumcircle(pts[v[0]], pts[v[1]], pts[v[2]]);
    Tri { v, center, r2 }
}

/// Delaunay triangulation of `points` (counter-clockwise triangles).
pub fn delaunay(points: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Geometry("triangulation needs at least 3 points".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let span = (x1 - x0).max(y1 - y0);
    if !(span > 0.0) {
        return Err(Error::Geometry("all points coincide".into()));
    }
    let cx = 0.5 * (x0 + x1);
    let cy = 0.5 * (y0 + y1);
    let big = 100.0 * span;
    let mut pts = points.to_vec();
    pts.push([cx, cy + 2.0 * big]);
    pts.push([cx - 3f64.sqrt() * big, cy - big]);
    pts.push([cx + 3f64.sqrt() * big, cy - big]);
    let mut tris = vec![make_tri(&pts, [n, n + 1, n + 2])];

    // Insert in a cache-friendly serpentine order over a coarse grid.
    let cells = ((n as f64).sqrt() / 2.0).ceil().max(1.0);
    let mut order: Vec<usize> = (0..n).collect();
    let key = |i: usize| {
        let gx = (((points[i][0] - x0) / span * cells).floor() as i64).min(cells as i64 - 1);
        let gy = (((points[i][1] - y0) / span * cells).floor() as i64).min(cells as i64 - 1);
        let sx = if gy % 2 == 0 { gx } else { cells as i64 - 1 - gx };
        (gy, sx, i)
    };
    order.sort_by_key(|&i| key(i));

    for &p in &order {
        let q = pts[p];
        let bad: Vec<usize> = tris
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                let dx = q[0] - t.center[0];
                let dy = q[1] - t.center[1];
                dx * dx + dy * dy < t.r2 * (1.0 - 1e-12)
            })
            .map(|(i, _)| i)
            .collect();
        if bad.is_empty() {
            return Err(Error::Geometry(format!("point {p} duplicates an existing vertex")));
        }
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        let mut boundary: Vec<(usize, usize)> = Vec::new();
        for &b in &bad {
            let v = tris[b].v;
            for k in 0..3 {
                let e = (v[k], v[(k + 1) % 3]);
                let key = (e.0.min(e.1), e.0.max(e.1));
                *edges.entry(key).or_insert(0) += 1;
                boundary.push(e);
            }
        }
        boundary.retain(|e| edges[&(e.0.min(e.1), e.0.max(e.1))] == 1);
        let mut bad_sorted = bad;
        bad_sorted.sort_unstable_by(|a, b| b.cmp(a));
        for b in bad_sorted {
            tris.swap_remove(b);
        }
        for (a, b) in boundary {
            if orient(pts[a], pts[b], q) <= 0.0 {
                return Err(Error::Geometry(format!(
                    "degenerate configuration while inserting point {p}; points may be collinear or duplicated"
                )));
            }
            tris.push(make_tri(&pts, [a, b, p]));
        }
    }
    Ok(tris
        .into_iter()
        .filter(|t| t.v.iter().all(|&v| v < n))
        .map(|t| t.v)
        .collect())
}

/// Convex hull (counter-clockwise, no collinear points) by monotone chain.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then(points[a][1].total_cmp(&points[b][1]))
    });
    if idx.len() < 3 {
        return idx;
    }
    let mut lower: Vec<usize> = Vec::new();
    for &i in &idx {
        while lower.len() >= 2 && orient(points[lower[lower.len() - 2]], points[lower[lower.len() - 1]], points[i]) <= 0.0 {
            lower.pop();
        }
        lower.push(i);
    }
    let mut upper: Vec<usize> = Vec::new();
    for &i in idx.iter().rev() {
        while upper.len() >= 2 && orient(points[upper[upper.len() - 2]], points[upper[upper.len() - 1]], points[i]) <= 0.0 {
            upper.pop();
        }
        upper.push(i);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn polygon_area(points: &[[f64; 2]], ring: &[usize]) -> f64 {
    let mut s = 0.0;
    for k in 0..ring.len() {
        let a = points[ring[k]];
        let b = points[ring[(k + 1) % ring.len()]];
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s
}

/// Check that no three of `points` span a positive area.
pub fn is_collinear(points: &[[f64; 2]]) -> bool {
    if points.len() < 3 {
        return true;
    }
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return true;
    }
    let (x0, x1, y0, y1) = bounds(points);
    let scale = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).max(f64::MIN_POSITIVE);
    polygon_area(points, &hull).abs() <= 1e-12 * scale
}

fn bounds(points: &[[f64; 2]]) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        b.0 = b.0.min(p[0]);
        b.1 = b.1.max(p[0]);
        b.2 = b.2.min(p[1]);
        b.3 = b.3.max(p[1]);
    }
    b
}

#[derive(Debug, Clone)]
struct Locator {
    x0: f64,
    y0: f64,
    cw: f64,
    ch: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<usize>>,
}

/// Triangulated mesh with counter-clockwise triangles.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    locator: Locator,
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.triangles == other.triangles
    }
}

impl Mesh {
    /// Validate and index a triangulation.
    pub fn new(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let m = vertices.len();
        if triangles.is_empty() {
            return Err(Error::Geometry("mesh has no triangles".into()));
        }
        let mut tris = Vec::with_capacity(triangles.len());
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for (k, t) in triangles.into_iter().enumerate() {
            if t.iter().any(|&v| v >= m) || t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::Geometry(format!("triangle {k} has invalid vertex indices")));
            }
            let a = 0.5 * orient(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if a.abs() <= MIN_AREA {
                return Err(Error::Geometry(format!("triangle {k} is degenerate (area {a:.3e})")));
            }
            let t = if a < 0.0 { [t[0], t[2], t[1]] } else { t };
            for e in 0..3 {
                let (i, j) = (t[e], t[(e + 1) % 3]);
                *edge_count.entry((i.min(j), i.max(j))).or_insert(0) += 1;
            }
            tris.push(t);
        }
        let mut boundary = vec![false; m];
        for (&(i, j), &c) in &edge_count {
            if c > 2 {
                return Err(Error::Geometry(format!("edge ({i},{j}) is shared by {c} triangles")));
            }
            if c == 1 {
                boundary[i] = true;
                boundary[j] = true;
            }
        }
        let locator = build_locator(&vertices, &tris);
        Ok(Self {
            vertices,
            triangles: tris,
            boundary,
            locator,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * orient(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        bounds(&self.vertices)
    }

    /// Vertex adjacency lists (sorted).
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for t in &self.triangles {
            for e in 0..3 {
                let (i, j) = (t[e], t[(e + 1) % 3]);
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    /// Containing triangle and barycentric weights of `p`, if inside the mesh.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let l = &self.locator;
        let gx = ((p[0] - l.x0) / l.cw).floor();
        let gy = ((p[1] - l.y0) / l.ch).floor();
        if gx < -1.0 || gy < -1.0 || gx > l.nx as f64 || gy > l.ny as f64 {
            return None;
        }
        let gx = (gx.max(0.0) as usize).min(l.nx - 1);
        let gy = (gy.max(0.0) as usize).min(l.ny - 1);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in &l.cells[gy * l.nx + gx] {
            let w = self.barycentric(t, p);
            let worst = w[0].min(w[1]).min(w[2]);
            if best.as_ref().is_none_or(|b| worst > b.2) {
                best = Some((t, w, worst));
            }
        }
        match best {
            Some((t, w, worst)) if worst >= -1e-9 => {
                let mut w = w.map(|v| v.clamp(0.0, 1.0));
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
                Some((t, w))
            }
            _ => None,
        }
    }

    fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        let area = orient(a, b, c);
        [orient(p, b, c) / area, orient(a, p, c) / area, orient(a, b, p) / area]
    }

    /// Sparse `n x m` matrix of barycentric weights of `points`.
    pub fn projection(&self, points: &[[f64; 2]]) -> Result<CsrMatrix> {
        let mut t = Vec::with_capacity(3 * points.len());
        for (i, &p) in points.iter().enumerate() {
            let (tri, w) = self
                .locate(p)
                .ok_or_else(|| Error::Geometry(format!("location {i} at ({}, {}) lies outside the mesh", p[0], p[1])))?;
            for k in 0..3 {
                if w[k] > 0.0 {
                    t.push((i, self.triangles[tri][k], w[k]));
                }
            }
        }
        Ok(CsrMatrix::from_triplets(points.len(), self.vertices.len(), t))
    }

    /// The same mesh with vertex `perm[new] = old` renumbering.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let vertices = perm.iter().map(|&o| self.vertices[o]).collect();
        let triangles = self.triangles.iter().map(|t| t.map(|v| inv[v])).collect();
        Self::new(vertices, triangles)
    }

    /// Vertex CSV (`id,x,y,boundary`) and triangle CSV (`id,v0,v1,v2`).
    pub fn write(&self, vertices_path: impl AsRef<Path>, triangles_path: impl AsRef<Path>) -> Result<()> {
        let mut s = String::from("id,x,y,boundary\n");
        for (i, v) in self.vertices.iter().enumerate() {
            s.push_str(&format!("{i},{},{},{}\n", v[0], v[1], self.boundary[i] as u8));
        }
        let vp = vertices_path.as_ref();
        fs::write(vp, s).map_err(|e| Error::io(vp, e))?;
        let mut s = String::from("id,v0,v1,v2\n");
        for (i, t) in self.triangles.iter().enumerate() {
            s.push_str(&format!("{i},{},{},{}\n", t[0], t[1], t[2]));
        }
        let tp = triangles_path.as_ref();
        fs::write(tp, s).map_err(|e| Error::io(tp, e))
    }

    pub fn read(vertices_path: impl AsRef<Path>, triangles_path: impl AsRef<Path>) -> Result<Self> {
        let vp = vertices_path.as_ref();
        let text = fs::read_to_string(vp).map_err(|e| Error::io(vp, e))?;
        let mut vertices = Vec::new();
        for (row, line) in text.lines().enumerate().skip(1) {
            let c: Vec<&str> = line.split(',').collect();
            if c.len() < 3 {
                return Err(Error::schema(row, c.len(), "expected id,x,y,boundary"));
            }
            let x = c[1].trim().parse().map_err(|_| Error::schema(row, 1, "bad number"))?;
            let y = c[2].trim().parse().map_err(|_| Error::schema(row, 2, "bad number"))?;
            vertices.push([x, y]);
        }
        let tp = triangles_path.as_ref();
        let text = fs::read_to_string(tp).map_err(|e| Error::io(tp, e))?;
        let mut tris = Vec::new();
        for (row, line) in text.lines().enumerate().skip(1) {
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 4 {
                return Err(Error::schema(row, c.len(), "expected id,v0,v1,v2"));
            }
            let mut t = [0usize; 3];
            for k in 0..3 {
                t[k] = c[k + 1].trim().parse().map_err(|_| Error::schema(row, k + 1, "bad index"))?;
            }
            tris.push(t);
        }
        Self::new(vertices, tris)
    }
}

fn build_locator(vertices: &[[f64; 2]], tris: &[[usize; 3]]) -> Locator {
    let (x0, x1, y0, y1) = bounds(vertices);
    let side = (tris.len() as f64).sqrt().ceil().max(1.0) as usize;
    let nx = side;
    let ny = side;
    let cw = ((x1 - x0) / nx as f64).max(f64::MIN_POSITIVE);
    let ch = ((y1 - y0) / ny as f64).max(f64::MIN_POSITIVE);
    let mut cells = vec![Vec::new(); nx * ny];
    let cell_of = |v: f64, o: f64, w: f64, n: usize| (((v - o) / w).floor().max(0.0) as usize).min(n - 1);
    for (k, t) in tris.iter().enumerate() {
        let p = t.map(|v| vertices[v]);
        let tx0 = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
        let tx1 = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
        let ty0 = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
        let ty1 = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        // widen by a hair so points on shared cell borders find the triangle
        let ex = 1e-9 * (x1 - x0);
        let ey = 1e-9 * (y1 - y0);
        for gy in cell_of(ty0 - ey, y0, ch, ny)..=cell_of(ty1 + ey, y0, ch, ny) {
            for gx in cell_of(tx0 - ex, x0, cw, nx)..=cell_of(tx1 + ex, x0, cw, nx) {
                cells[gy * nx + gx].push(k);
            }
        }
    }
    Locator {
        x0,
        y0,
        cw,
        ch,
        nx,
        ny,
        cells,
    }
}

/// Deterministic offset in `[-1, 1)` for lattice index `i`.
fn jitter(i: u64) -> f64 {
    let mut z = i.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

fn lattice_points(dx0: f64, dx1: f64, dy0: f64, dy1: f64, h: f64, jit: f64, salt: u64, out: &mut Vec<[f64; 2]>, keep: impl Fn([f64; 2]) -> bool) {
    let nx = (((dx1 - dx0) / h).ceil() as usize).max(1) + 1;
    let ny = (((dy1 - dy0) / h).ceil() as usize).max(1) + 1;
    let sx = (dx1 - dx0) / (nx - 1) as f64;
    let sy = (dy1 - dy0) / (ny - 1) as f64;
    for j in 0..ny {
        for i in 0..nx {
            let p = [dx0 + i as f64 * sx, dy0 + j as f64 * sy];
            if !keep(p) {
                continue;
            }
            let on_edge = i == 0 || j == 0 || i == nx - 1 || j == ny - 1;
            let k = salt.wrapping_mul(1_000_003).wrapping_add((j * nx + i) as u64);
            let p = if on_edge && jit == 0.0 {
                p
            } else {
                [p[0] + jit * sx * jitter(2 * k), p[1] + jit * sy * jitter(2 * k + 1)]
            };
            out.push(p);
        }
    }
}

/// Mesh points for lattice spacing `h`: a fine lattice over the data box and
/// a coarse lattice (spacing `2h`) filling the extension ring.
fn mesh_points(b: (f64, f64, f64, f64), h: f64) -> Vec<[f64; 2]> {
    let (x0, x1, y0, y1) = b;
    let diag = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    let buf = (RING_FRACTION * diag).max(2.0 * h);
    let e = 0.5 * h;
    let mut pts = Vec::new();
    lattice_points(x0 - e, x1 + e, y0 - e, y1 + e, h, 1e-6, 1, &mut pts, |_| true);
    let big = 2.0 * h;
    let (ix0, ix1, iy0, iy1) = (x0 - e - 0.75 * big, x1 + e + 0.75 * big, y0 - e - 0.75 * big, y1 + e + 0.75 * big);
    let (ox0, ox1, oy0, oy1) = (x0 - buf, x1 + buf, y0 - buf, y1 + buf);
    // outer boundary stays exactly on the rectangle, interior coarse nodes are jittered
    let mut coarse = Vec::new();
    lattice_points(ox0, ox1, oy0, oy1, big, 0.0, 2, &mut coarse, |p| {
        !(p[0] > ix0 && p[0] < ix1 && p[1] > iy0 && p[1] < iy1)
    });
    let nxo = (((ox1 - ox0) / big).ceil() as usize).max(1) + 1;
    let sxo = (ox1 - ox0) / (nxo - 1) as f64;
    for (k, p) in coarse.iter_mut().enumerate() {
        let on_outer = (p[0] - ox0).abs() < 1e-12 * sxo
            || (p[0] - ox1).abs() < 1e-12 * sxo
            || (p[1] - oy0).abs() < 1e-12 * sxo
            || (p[1] - oy1).abs() < 1e-12 * sxo;
        if !on_outer {
            p[0] += 1e-6 * big * jitter(7_777_777 + 2 * k as u64);
            p[1] += 1e-6 * big * jitter(7_777_778 + 2 * k as u64);
        }
    }
    pts.extend(coarse);
    pts
}

/// Delaunay mesh covering `domain` with an extension ring, aiming at
/// `target_vertices` vertices (within 10%).
pub fn build_mesh(domain: &LocationTable, target_vertices: usize) -> Result<Mesh> {
    let data = domain.coords();
    if data.len() < 3 || is_collinear(data) {
        return Err(Error::Geometry("mesh construction needs at least 3 non-collinear locations".into()));
    }
    if target_vertices < SMALL_MESH {
        return small_mesh(data, target_vertices);
    }
    let b = bounds(data);
    let diag = ((b.1 - b.0).powi(2) + (b.3 - b.2).powi(2)).sqrt();
    let target = target_vertices as f64;
    let count = |h: f64| mesh_points(b, h).len() as f64;
    let (mut lo, mut hi) = (diag * 1e-4, diag);
    while count(lo) < target {
        lo *= 0.5;
    }
    let mut best = (f64::INFINITY, hi);
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        let c = count(mid);
        let err = (c - target).abs();
        if err < best.0 {
            best = (err, mid);
        }
        if c > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if err == 0.0 || hi / lo < 1.0 + 1e-9 {
            break;
        }
    }
    let pts = mesh_points(b, best.1);
    if ((pts.len() as f64) - target).abs() > 0.1 * target {
        return Err(Error::Geometry(format!(
            "could not reach {target_vertices} mesh vertices within 10% (closest {})",
            pts.len()
        )));
    }
    let tris = delaunay(&pts)?;
    let mesh = Mesh::new(pts, tris)?;
    check_coverage(&mesh)?;
    Ok(mesh)
}

fn check_coverage(mesh: &Mesh) -> Result<()> {
    let hull = convex_hull(mesh.vertices());
    let hull_area = polygon_area(mesh.vertices(), &hull);
    let tri_area: f64 = (0..mesh.n_triangles()).map(|t| mesh.area(t)).sum();
    if (tri_area - hull_area).abs() > 1e-9 * hull_area {
        return Err(Error::Geometry(format!(
            "triangulation covers area {tri_area} of hull area {hull_area}"
        )));
    }
    Ok(())
}

/// Hull vertices of the data plus greedily spread interior data points.
fn small_mesh(data: &[[f64; 2]], target: usize) -> Result<Mesh> {
    let hull = convex_hull(data);
    let mut chosen = hull.clone();
    let mut dmin: Vec<f64> = data
        .iter()
        .map(|p| {
            chosen
                .iter()
                .map(|&c| (p[0] - data[c][0]).hypot(p[1] - data[c][1]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    while chosen.len() < target {
        let (i, d) = dmin
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, &d)| (i, d))
            .unwrap();
        if d <= 0.0 {
            break;
        }
        chosen.push(i);
        for (j, p) in data.iter().enumerate() {
            dmin[j] = dmin[j].min((p[0] - data[i][0]).hypot(p[1] - data[i][1]));
        }
    }
    let pts: Vec<[f64; 2]> = chosen.iter().map(|&i| data[i]).collect();
    let tris = delaunay(&pts)?;
    let mesh = Mesh::new(pts, tris)?;
    check_coverage(&mesh)?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cloud(n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = crate::rng::rng_from(seed);
        (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
    }

    fn assert_delaunay(pts: &[[f64; 2]], tris: &[[usize; 3]], sample: usize) {
        let step = (tris.len() / sample).max(1);
        for t in tris.iter().step_by(step) {
            let (c, r2) = circumcircle(pts[t[0]], pts[t[1]], pts[t[2]]);
            for (i, p) in pts.iter().enumerate() {
                if t.contains(&i) {
                    continue;
                }
                let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                assert!(d2 >= r2 * (1.0 - 1e-9), "vertex {i} inside circumcircle of {t:?}");
            }
        }
    }

    #[test]
    fn square_corners_give_two_triangles() {
        let d = LocationTable::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        let m = build_mesh(&d, 4).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_triangles(), 2);
        assert!((0..2).all(|t| m.area(t) > 0.0));
        assert!((0..4).all(|v| m.is_boundary(v)));
        let a = m.projection(d.coords()).unwrap();
        for r in 0..4 {
            let s: f64 = a.row(r).map(|(_, v)| v).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_cloud_is_delaunay() {
        let pts = cloud(500, 1);
        let tris = delaunay(&pts).unwrap();
        // Euler: 2n - 2 - hull triangles
        let h = convex_hull(&pts).len();
        assert_eq!(tris.len(), 2 * pts.len() - 2 - h);
        assert!(tris.iter().all(|t| orient(pts[t[0]], pts[t[1]], pts[t[2]]) > 0.0));
        assert_delaunay(&pts, &tris, 100);
    }

    #[test]
    fn built_mesh_properties() {
        let d = LocationTable::new(cloud(500, 2)).unwrap();
        for target in [100, 400, 1200] {
            let m = build_mesh(&d, target).unwrap();
            let n = m.n_vertices() as f64;
            assert!((n - target as f64).abs() <= 0.1 * target as f64, "{n} vs {target}");
            assert!((0..m.n_triangles()).all(|t| m.area(t) > MIN_AREA));
            assert_delaunay(m.vertices(), m.triangles(), 100);
            let a = m.projection(d.coords()).unwrap();
            assert_eq!(a.nrows(), 500);
            for r in 0..500 {
                let w: Vec<f64> = a.row(r).map(|(_, v)| v).collect();
                assert!(w.len() <= 3 && w.iter().all(|&v| (0.0..=1.0).contains(&v)));
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            // the ring reaches at least 20% of the diagonal past the data
            let (x0, x1, y0, y1) = m.bbox();
            let diag = 2f64.sqrt() * 0.99;
            assert!(x0 < -0.19 * diag && y0 < -0.19 * diag && x1 > 1.0 + 0.18 * diag && y1 > 1.0 + 0.18 * diag);
            // boundary vertices sit on the outer rectangle
            for v in 0..m.n_vertices() {
                if m.is_boundary(v) {
                    let p = m.vertices()[v];
                    assert!(p[0] == x0 || p[0] == x1 || p[1] == y0 || p[1] == y1);
                }
            }
        }
    }

    #[test]
    fn collinear_rejected() {
        let d = LocationTable::new(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).unwrap();
        assert!(matches!(build_mesh(&d, 50), Err(Error::Geometry(_))));
    }

    #[test]
    fn projection_reproduces_linear_functions() {
        let d = LocationTable::new(cloud(200, 3)).unwrap();
        let m = build_mesh(&d, 300).unwrap();
        let f: Vec<f64> = m.vertices().iter().map(|p| 2.0 * p[0] - 3.0 * p[1] + 1.0).collect();
        let a = m.projection(d.coords()).unwrap();
        let v = a.mul_vec(&f);
        for (p, val) in d.coords().iter().zip(v) {
            assert!((val - (2.0 * p[0] - 3.0 * p[1] + 1.0)).abs() < 1e-9);
        }
        assert!(m.projection(&[[50.0, 50.0]]).is_err());
    }

    #[test]
    fn mesh_file_round_trip_and_permutation() {
        let d = LocationTable::new(cloud(50, 4)).unwrap();
        let m = build_mesh(&d, 80).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (vp, tp) = (dir.path().join("v.csv"), dir.path().join("t.csv"));
        m.write(&vp, &tp).unwrap();
        let r = Mesh::read(&vp, &tp).unwrap();
        assert_eq!(r.n_vertices(), m.n_vertices());
        assert_eq!(r.triangles(), m.triangles());
        let perm: Vec<usize> = (0..m.n_vertices()).rev().collect();
        let p = m.permuted(&perm).unwrap();
        assert_eq!(p.n_triangles(), m.n_triangles());
    }
}
