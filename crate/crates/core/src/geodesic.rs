//! Conductivity-weighted geodesic distances on a triangle mesh.
//!
//! Two backends compute single-source distances: Dijkstra on the edge graph
//! with direction-corrected edge lengths (exact for the graph metric, the
//! default), and a triangle-based fast marching solver driven by a scalar
//! per-vertex speed. [`GeodesicTable`] stores all-pairs distances together
//! with each row's vertices sorted by distance, so ball queries are a binary
//! search.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::mesh::{min_eigenvalue, Tensor, TriMesh, Vec3};

/// Largest vertex count for which an all-pairs table is built.
pub const MAX_TABLE_VERTICES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Dijkstra,
    FastMarching,
}

impl Backend {
    pub fn id(self) -> u32 {
        match self {
            Backend::Dijkstra => 0,
            Backend::FastMarching => 1,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        match id {
            0 => Some(Backend::Dijkstra),
            1 => Some(Backend::FastMarching),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Backend::Dijkstra => "dijkstra",
            Backend::FastMarching => "fmm",
        }
    }
}

/// Length of the edge `a → b` divided by the directional conductivity
/// correction `min(sqrt(eᵀσ_a e / eᵀe), sqrt(eᵀσ_b e / eᵀe))`, `e = b − a`.
pub fn edge_weight(pos_a: &Vec3, pos_b: &Vec3, sigma_a: &Tensor, sigma_b: &Tensor) -> Result<f64> {
    let e = pos_b - pos_a;
    let ee = e.dot(&e);
    if !(ee > 0.0) {
        return Err(Error::DegenerateEdge(0, 1));
    }
    let qa = e.dot(&(sigma_a * e)) / ee;
    let qb = e.dot(&(sigma_b * e)) / ee;
    let correction = libm::sqrt(qa).min(libm::sqrt(qb));
    Ok(libm::sqrt(ee) / correction)
}

/// Edge weights aligned with the mesh adjacency lists.
fn mesh_edge_weights(mesh: &TriMesh) -> Result<Vec<f64>> {
    let mut w = Vec::new();
    for a in 0..mesh.vertex_count() {
        let sa = mesh.conductivity(a);
        for &b in mesh.neighbors(a) {
            let weight = edge_weight(&mesh.vertex(a), &mesh.vertex(b), &sa, &mesh.conductivity(b))
                .map_err(|_| Error::DegenerateEdge(a, b))?;
            w.push(weight);
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    dist: f64,
    vertex: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // Reversed so the max-heap pops the smallest distance, then lowest index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

/// Single-source shortest paths on an arbitrary graph with nonnegative
/// weights. Unreachable vertices are left at `+∞`.
pub fn dijkstra_on_graph<F, I>(n: usize, source: usize, mut neighbors: F) -> Vec<f64>
where
    F: FnMut(usize) -> I,
    I: IntoIterator<Item = (usize, f64)>,
{
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry { dist: 0.0, vertex: source });
    while let Some(Entry { dist: d, vertex: u }) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        for (v, w) in neighbors(u) {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Entry { dist: nd, vertex: v });
            }
        }
    }
    dist
}

fn check_reachable(source: usize, dist: &[f64]) -> Result<()> {
    let mut unreachable = dist.iter().enumerate().filter(|(_, d)| !d.is_finite());
    if let Some((first, _)) = unreachable.next() {
        return Err(Error::Unreachable {
            source_vertex: source,
            count: 1 + unreachable.count(),
            first,
        });
    }
    Ok(())
}

fn check_source(mesh: &TriMesh, source: usize) -> Result<()> {
    if source >= mesh.vertex_count() {
        return Err(Error::IndexOutOfRange {
            index: source,
            len: mesh.vertex_count(),
        });
    }
    Ok(())
}

fn dijkstra_with_weights(mesh: &TriMesh, weights: &[f64], offsets: &[usize], source: usize) -> Vec<f64> {
    dijkstra_on_graph(mesh.vertex_count(), source, |u| {
        mesh.neighbors(u)
            .iter()
            .copied()
            .zip(weights[offsets[u]..offsets[u + 1]].iter().copied())
    })
}

fn adjacency_offsets(mesh: &TriMesh) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(mesh.vertex_count() + 1);
    offsets.push(0);
    for i in 0..mesh.vertex_count() {
        offsets.push(offsets[i] + mesh.neighbors(i).len());
    }
    offsets
}

/// Corrected-edge Dijkstra distances from `source` (mm).
pub fn dijkstra_distances(mesh: &TriMesh, source: usize) -> Result<Vec<f64>> {
    check_source(mesh, source)?;
    let weights = mesh_edge_weights(mesh)?;
    let offsets = adjacency_offsets(mesh);
    let dist = dijkstra_with_weights(mesh, &weights, &offsets, source);
    check_reachable(source, &dist)?;
    Ok(dist)
}

/// Per-vertex scalar speed used by fast marching: square root of the
/// smallest conductivity eigenvalue.
pub fn fmm_speeds(mesh: &TriMesh) -> Vec<f64> {
    (0..mesh.vertex_count())
        .map(|i| {
            if mesh.has_conductivity() {
                libm::sqrt(min_eigenvalue(&mesh.conductivity(i)))
            } else {
                1.0
            }
        })
        .collect()
}

struct FmmContext<'a> {
    mesh: &'a TriMesh,
    speeds: Vec<f64>,
    vertex_triangles: Vec<Vec<usize>>,
}

impl<'a> FmmContext<'a> {
    fn new(mesh: &'a TriMesh) -> Self {
        let mut vertex_triangles = vec![Vec::new(); mesh.vertex_count()];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            for &i in tri {
                vertex_triangles[i].push(t);
            }
        }
        FmmContext {
            mesh,
            speeds: fmm_speeds(mesh),
            vertex_triangles,
        }
    }

    /// Planar-front update of `c` from known `a` and `b`. `None` when the
    /// angle at `c` is obtuse, the quadratic has no admissible root, or the
    /// characteristic does not pass through edge `ab`.
    fn triangle_update(&self, c: usize, a: usize, b: usize, ta: f64, tb: f64) -> Option<f64> {
        let m = self.mesh;
        let ea = m.vertex(a) - m.vertex(c);
        let eb = m.vertex(b) - m.vertex(c);
        let g11 = ea.dot(&ea);
        let g22 = eb.dot(&eb);
        let g12 = ea.dot(&eb);
        if g12 < 0.0 {
            return None;
        }
        let det = g11 * g22 - g12 * g12;
        if !(det > 0.0) {
            return None;
        }
        // Q = G⁻¹
        let q11 = g22 / det;
        let q22 = g11 / det;
        let q12 = -g12 / det;
        let f = self.speeds[c].min(self.speeds[a]).min(self.speeds[b]);
        let slowness2 = 1.0 / (f * f);

        // (d − t·1)ᵀ Q (d − t·1) = 1/F²
        let q1 = q11 + 2.0 * q12 + q22;
        let qd = q11 * ta + q12 * (ta + tb) + q22 * tb;
        let dqd = q11 * ta * ta + 2.0 * q12 * ta * tb + q22 * tb * tb;
        let disc = qd * qd - q1 * (dqd - slowness2);
        if disc < 0.0 {
            return None;
        }
        let t = (qd + libm::sqrt(disc)) / q1;
        if !(t >= ta.max(tb)) {
            return None;
        }
        // Upwind direction −g = E(−Q δ) must be a nonnegative combination of ea, eb.
        let da = ta - t;
        let db = tb - t;
        let wa = q11 * da + q12 * db;
        let wb = q12 * da + q22 * db;
        if wa > 0.0 || wb > 0.0 {
            return None;
        }
        Some(t)
    }

    fn run(&self, source: usize) -> Vec<f64> {
        let m = self.mesh;
        let n = m.vertex_count();
        let mut t = vec![f64::INFINITY; n];
        let mut known = vec![false; n];
        let mut heap = BinaryHeap::new();
        t[source] = 0.0;
        heap.push(Entry { dist: 0.0, vertex: source });
        while let Some(Entry { dist, vertex: u }) = heap.pop() {
            if known[u] || dist > t[u] {
                continue;
            }
            known[u] = true;
            for &v in m.neighbors(u) {
                if known[v] {
                    continue;
                }
                let len = (m.vertex(v) - m.vertex(u)).norm();
                let mut best = t[u] + len / self.speeds[u].min(self.speeds[v]);
                for &tri_index in &self.vertex_triangles[v] {
                    let tri = m.triangles()[tri_index];
                    if !tri.contains(&u) {
                        continue;
                    }
                    let other = tri.iter().copied().find(|&x| x != u && x != v).unwrap();
                    if known[other] {
                        if let Some(c) = self.triangle_update(v, u, other, t[u], t[other]) {
                            best = best.min(c);
                        }
                    }
                }
                if best < t[v] {
                    t[v] = best;
                    heap.push(Entry { dist: best, vertex: v });
                }
            }
        }
        t
    }
}

/// First-arrival distances from `source` by triangle-based fast marching.
pub fn fmm_distances(mesh: &TriMesh, source: usize) -> Result<Vec<f64>> {
    check_source(mesh, source)?;
    let t = FmmContext::new(mesh).run(source);
    check_reachable(source, &t)?;
    Ok(t)
}

/// All-pairs geodesic distances for one metric, with per-row distance order.
#[derive(Debug, Clone)]
pub struct GeodesicTable {
    label: String,
    backend: Backend,
    m: usize,
    distances: Vec<f64>,
    order: Vec<u32>,
    mesh_checksum: u64,
}

impl GeodesicTable {
    /// Assemble a table from a row-major `m × m` distance matrix.
    pub fn from_distances(
        label: impl Into<String>,
        backend: Backend,
        mesh_checksum: u64,
        m: usize,
        distances: Vec<f64>,
    ) -> Result<Self> {
        if distances.len() != m * m {
            return Err(Error::DimensionMismatch {
                context: "geodesic table entries",
                expected: m * m,
                found: distances.len(),
            });
        }
        if let Some(bad) = distances.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(crate::error::invalid(
                "distances",
                format!("entry {bad} is negative or non-finite"),
            ));
        }
        let mut order = Vec::with_capacity(m * m);
        for i in 0..m {
            let row = &distances[i * m..(i + 1) * m];
            let mut idx: Vec<u32> = (0..m as u32).collect();
            idx.sort_by(|&a, &b| row[a as usize].total_cmp(&row[b as usize]).then(a.cmp(&b)));
            order.extend_from_slice(&idx);
        }
        Ok(GeodesicTable {
            label: label.into(),
            backend,
            m,
            distances,
            order,
            mesh_checksum,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn set_label(&mut self, label: impl Into<String>) {
        self.label = label.into();
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn vertex_count(&self) -> usize {
        self.m
    }

    pub fn mesh_checksum(&self) -> u64 {
        self.mesh_checksum
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    #[inline]
    pub fn row(&self, source: usize) -> &[f64] {
        &self.distances[source * self.m..(source + 1) * self.m]
    }

    #[inline]
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.distances[a * self.m + b]
    }

    /// Number of vertices within `radius` of `center`.
    pub fn ball_len(&self, center: usize, radius: f64) -> usize {
        let row = self.row(center);
        let order = &self.order[center * self.m..(center + 1) * self.m];
        order.partition_point(|&j| row[j as usize] <= radius).max(1)
    }

    /// The `k`-th closest vertex to `center` (ties broken by index).
    pub fn nth_closest(&self, center: usize, k: usize) -> usize {
        self.order[center * self.m + k] as usize
    }
}

/// All-sources distance table for `mesh`. Rows are computed independently
/// (in parallel with the `parallel` feature).
pub fn build_table(mesh: &TriMesh, backend: Backend) -> Result<GeodesicTable> {
    let m = mesh.vertex_count();
    if m > MAX_TABLE_VERTICES {
        return Err(Error::ResourceLimit(format!(
            "{m} vertices exceeds the all-pairs table limit of {MAX_TABLE_VERTICES}; compute rows on demand instead"
        )));
    }
    let rows: Vec<Vec<f64>> = match backend {
        Backend::Dijkstra => {
            let weights = mesh_edge_weights(mesh)?;
            let offsets = adjacency_offsets(mesh);
            crate::par::map_range(m, |s| dijkstra_with_weights(mesh, &weights, &offsets, s))
        }
        Backend::FastMarching => {
            let ctx = FmmContext::new(mesh);
            crate::par::map_range(m, |s| ctx.run(s))
        }
    };
    let mut distances = Vec::with_capacity(m * m);
    for (s, row) in rows.iter().enumerate() {
        check_reachable(s, row)?;
        distances.extend_from_slice(row);
    }
    GeodesicTable::from_distances(backend.name(), backend, mesh.checksum(), m, distances)
}

/// Vertices within geodesic distance `radius` of `center`, in distance order.
pub fn ball_vertices(table: &GeodesicTable, center: usize, radius: f64) -> Vec<usize> {
    let len = table.ball_len(center, radius.max(0.0));
    (0..len).map(|k| table.nth_closest(center, k)).collect()
}
