//! Triangle surface meshes, conductivity fields and electrode sets.
//!
//! A [`TriMesh`] is immutable once built: construction validates the
//! connectivity, derives outward vertex normals, lumped vertex areas and the
//! one-ring adjacency used by the geodesic solvers. Conductivity is attached
//! through [`set_conductivity`], which returns a new mesh.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Tensor = Matrix3<f64>;

/// Triangles with an area at or below this value (mm²) are rejected.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Largest icosphere subdivision level accepted by [`make_test_mesh`].
pub const MAX_SUBDIVISIONS: u32 = 6;

/// One failed mesh invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoVertices,
    NoTriangles,
    NonFiniteVertex { vertex: usize },
    IndexOutOfRange { triangle: usize, index: usize, len: usize },
    RepeatedVertex { triangle: usize },
    ZeroArea { triangle: usize, area: f64 },
    Disconnected { components: usize },
    NonSpdConductivity { vertex: usize, min_eigenvalue: f64 },
    ConductivityLength { expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoVertices => write!(f, "mesh has no vertices"),
            Violation::NoTriangles => write!(f, "mesh has no triangles"),
            Violation::NonFiniteVertex { vertex } => {
                write!(f, "vertex {vertex} has a non-finite coordinate")
            }
            Violation::IndexOutOfRange { triangle, index, len } => write!(
                f,
                "triangle {triangle} references vertex {index}, index out of range ({len} vertices)"
            ),
            Violation::RepeatedVertex { triangle } => {
                write!(f, "triangle {triangle} repeats a vertex")
            }
            Violation::ZeroArea { triangle, area } => {
                write!(f, "triangle {triangle} has zero area ({area:e} mm²)")
            }
            Violation::Disconnected { components } => {
                write!(f, "edge graph is disconnected ({components} components)")
            }
            Violation::NonSpdConductivity { vertex, min_eigenvalue } => write!(
                f,
                "conductivity at vertex {vertex} is not SPD (smallest eigenvalue {min_eigenvalue:e})"
            ),
            Violation::ConductivityLength { expected, found } => write!(
                f,
                "conductivity field has {found} tensors for {expected} vertices"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    conductivity: Option<Vec<Tensor>>,
    normals: Vec<Vec3>,
    areas: Vec<f64>,
    adj_offsets: Vec<usize>,
    adj: Vec<usize>,
    checksum: u64,
}

/// Enumerate every invariant violation of a candidate mesh.
pub fn validate(
    vertices: &[Vec3],
    triangles: &[[usize; 3]],
    conductivity: Option<&[Tensor]>,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if vertices.is_empty() {
        out.push(Violation::NoVertices);
    }
    if triangles.is_empty() {
        out.push(Violation::NoTriangles);
    }
    for (i, v) in vertices.iter().enumerate() {
        if !v.iter().all(|c| c.is_finite()) {
            out.push(Violation::NonFiniteVertex { vertex: i });
        }
    }
    let n = vertices.len();
    let mut indices_ok = true;
    for (t, tri) in triangles.iter().enumerate() {
        let mut bad = false;
        for &i in tri {
            if i >= n {
                out.push(Violation::IndexOutOfRange {
                    triangle: t,
                    index: i,
                    len: n,
                });
                bad = true;
            }
        }
        if bad {
            indices_ok = false;
            continue;
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            out.push(Violation::RepeatedVertex { triangle: t });
            continue;
        }
        let area = triangle_area(vertices, tri);
        if !(area > MIN_TRIANGLE_AREA) {
            out.push(Violation::ZeroArea { triangle: t, area });
        }
    }
    if indices_ok && n > 0 {
        let components = count_components(n, triangles);
        if components > 1 {
            out.push(Violation::Disconnected { components });
        }
    }
    if let Some(field) = conductivity {
        if field.len() != n {
            out.push(Violation::ConductivityLength {
                expected: n,
                found: field.len(),
            });
        } else {
            for (i, t) in field.iter().enumerate() {
                let min_eigenvalue = min_eigenvalue(t);
                if !is_symmetric(t) || !(min_eigenvalue > 0.0) {
                    out.push(Violation::NonSpdConductivity {
                        vertex: i,
                        min_eigenvalue,
                    });
                }
            }
        }
    }
    out
}

fn triangle_area(vertices: &[Vec3], tri: &[usize; 3]) -> f64 {
    let a = vertices[tri[0]];
    let b = vertices[tri[1]];
    let c = vertices[tri[2]];
    0.5 * (b - a).cross(&(c - a)).norm()
}

fn count_components(n: usize, triangles: &[[usize; 3]]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for tri in triangles {
        for k in 0..3 {
            let a = find(&mut parent, tri[k]);
            let b = find(&mut parent, tri[(k + 1) % 3]);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    // Isolated vertices (referenced by no triangle) count as their own component.
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

fn is_symmetric(t: &Tensor) -> bool {
    let scale = t.amax().max(1.0);
    (t - t.transpose()).amax() <= 1e-12 * scale
}

/// Smallest eigenvalue of the symmetric part of `t`.
pub fn min_eigenvalue(t: &Tensor) -> f64 {
    let sym = (t + t.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

impl TriMesh {
    /// Build and validate a mesh. Conductivity is left unset (identity).
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let violations = validate(&vertices, &triangles, None);
        if !violations.is_empty() {
            return Err(Error::InvalidMesh(violations));
        }
        let n = vertices.len();

        let mut normals = vec![Vec3::zeros(); n];
        let mut areas = vec![0.0; n];
        for tri in &triangles {
            let a = vertices[tri[0]];
            let b = vertices[tri[1]];
            let c = vertices[tri[2]];
            // |cross| is twice the area, so summing it area-weights the normals.
            let cross = (b - a).cross(&(c - a));
            let third = cross.norm() / 6.0;
            for &i in tri {
                normals[i] += cross;
                areas[i] += third;
            }
        }
        for nrm in &mut normals {
            let len = nrm.norm();
            if len > 0.0 {
                *nrm /= len;
            }
        }

        let mut neighbor_sets: Vec<Vec<usize>> = vec![Vec::new(); n];
        for tri in &triangles {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                neighbor_sets[a].push(b);
                neighbor_sets[b].push(a);
            }
        }
        let mut adj_offsets = Vec::with_capacity(n + 1);
        let mut adj = Vec::new();
        adj_offsets.push(0);
        for set in &mut neighbor_sets {
            set.sort_unstable();
            set.dedup();
            adj.extend_from_slice(set);
            adj_offsets.push(adj.len());
        }

        let checksum = checksum(&vertices, &triangles);
        Ok(TriMesh {
            vertices,
            triangles,
            conductivity: None,
            normals,
            areas,
            adj_offsets,
            adj,
            checksum,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> Vec3 {
        self.vertices[i]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn normal(&self, i: usize) -> Vec3 {
        self.normals[i]
    }

    /// Lumped vertex area: one third of the incident triangle areas.
    pub fn vertex_area(&self, i: usize) -> f64 {
        self.areas[i]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[self.adj_offsets[i]..self.adj_offsets[i + 1]]
    }

    /// Effective conductivity tensor at a vertex; identity when unset.
    pub fn conductivity(&self, i: usize) -> Tensor {
        match &self.conductivity {
            Some(field) => field[i],
            None => Tensor::identity(),
        }
    }

    pub fn conductivity_field(&self) -> Option<&[Tensor]> {
        self.conductivity.as_deref()
    }

    pub fn has_conductivity(&self) -> bool {
        self.conductivity.is_some()
    }

    /// Content hash over positions and connectivity (conductivity excluded).
    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self
            .vertices
            .iter()
            .fold(Vec3::zeros(), |acc, v| acc + v);
        sum / self.vertices.len() as f64
    }

    /// Unique undirected edges `(a, b)` with `a < b`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.vertex_count()).flat_map(move |a| {
            self.neighbors(a)
                .iter()
                .copied()
                .filter(move |&b| b > a)
                .map(move |b| (a, b))
        })
    }

    /// True when every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        let mut count: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        count.values().all(|&c| c == 2)
    }

    /// Signed solid angle subtended by the surface at `p`. Close to ±4π inside
    /// a closed surface and 0 outside.
    pub fn solid_angle(&self, p: &Vec3) -> f64 {
        self.triangles
            .iter()
            .map(|tri| {
                let a = self.vertices[tri[0]] - p;
                let b = self.vertices[tri[1]] - p;
                let c = self.vertices[tri[2]] - p;
                let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
                let num = a.dot(&b.cross(&c));
                let den = la * lb * lc + a.dot(&b) * lc + a.dot(&c) * lb + b.dot(&c) * la;
                2.0 * libm::atan2(num, den)
            })
            .sum()
    }

    /// Copy of the mesh with a per-vertex conductivity field.
    pub fn with_conductivity(&self, field: Vec<Tensor>) -> Result<Self> {
        let violations = validate(&self.vertices, &self.triangles, Some(&field));
        if !violations.is_empty() {
            return Err(Error::InvalidConductivity(format!(
                "{}",
                Error::InvalidMesh(violations)
            )));
        }
        let mut out = self.clone();
        out.conductivity = Some(field);
        Ok(out)
    }
}

fn checksum(vertices: &[Vec3], triangles: &[[usize; 3]]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |word: u64| {
        for byte in word.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(vertices.len() as u64);
    for v in vertices {
        for c in v.iter() {
            eat(c.to_bits());
        }
    }
    eat(triangles.len() as u64);
    for t in triangles {
        for &i in t {
            eat(i as u64);
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeshKind {
    Sphere,
    /// Sphere scaled per axis after projection.
    Ellipsoid { scales: [f64; 3] },
}

/// Icosphere of the given radius. Vertex ordering is nested: the vertices of
/// level `s` are a prefix of the vertices of level `s + 1`.
pub fn make_test_mesh(kind: MeshKind, radius_mm: f64, subdivisions: u32) -> Result<TriMesh> {
    if subdivisions > MAX_SUBDIVISIONS {
        return Err(Error::ResourceLimit(format!(
            "icosphere subdivision {subdivisions} exceeds the limit of {MAX_SUBDIVISIONS}"
        )));
    }
    if !(radius_mm > 0.0) || !radius_mm.is_finite() {
        return Err(crate::error::invalid("radius_mm", "must be positive and finite"));
    }
    let (mut verts, mut tris) = icosahedron();
    for _ in 0..subdivisions {
        let mut cache: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next = Vec::with_capacity(tris.len() * 4);
        for tri in &tris {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                mid[k] = *cache.entry(key).or_insert_with(|| {
                    let m = (verts[a] + verts[b]).normalize();
                    verts.push(m);
                    verts.len() - 1
                });
            }
            next.push([tri[0], mid[0], mid[2]]);
            next.push([tri[1], mid[1], mid[0]]);
            next.push([tri[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        tris = next;
    }
    let scales = match kind {
        MeshKind::Sphere => [1.0; 3],
        MeshKind::Ellipsoid { scales } => {
            if scales.iter().any(|s| !(*s > 0.0)) {
                return Err(crate::error::invalid("scales", "ellipsoid axis scales must be positive"));
            }
            scales
        }
    };
    let verts = verts
        .into_iter()
        .map(|v| Vec3::new(v.x * scales[0], v.y * scales[1], v.z * scales[2]) * radius_mm)
        .collect();
    TriMesh::new(verts, tris)
}

/// Unit icosahedron with poles on the z axis, counter-clockwise seen from outside.
fn icosahedron() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    use core::f64::consts::PI;
    let z = 1.0 / libm::sqrt(5.0);
    let rho = 2.0 * z;
    let mut v = Vec::with_capacity(12);
    v.push(Vec3::new(0.0, 0.0, 1.0));
    for k in 0..5 {
        let phi = 2.0 * PI * k as f64 / 5.0;
        v.push(Vec3::new(rho * libm::cos(phi), rho * libm::sin(phi), z));
    }
    for k in 0..5 {
        let phi = 2.0 * PI * k as f64 / 5.0 + PI / 5.0;
        v.push(Vec3::new(rho * libm::cos(phi), rho * libm::sin(phi), -z));
    }
    v.push(Vec3::new(0.0, 0.0, -1.0));
    let mut t = Vec::with_capacity(20);
    for k in 0..5 {
        let u0 = 1 + k;
        let u1 = 1 + (k + 1) % 5;
        let l0 = 6 + k;
        let l1 = 6 + (k + 1) % 5;
        t.push([0, u0, u1]);
        t.push([u0, l0, u1]);
        t.push([u1, l0, l1]);
        t.push([11, l1, l0]);
    }
    (v, t)
}

/// Spatial predicate selecting the vertices of a region.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    EuclideanBall { center: Vec3, radius: f64 },
    /// Vertices within `radius` of `center` under the metric of the base tensor.
    GeodesicBall { center: usize, radius: f64 },
    /// Slab of half-width `half_width` around the plane `normal · x = offset`,
    /// restricted to a Euclidean ball. Models a line of block on a surface.
    Band {
        normal: Vec3,
        offset: f64,
        half_width: f64,
        extent_center: Vec3,
        extent_radius: f64,
    },
    Empty,
}

/// Unit fibre direction at each vertex.
#[derive(Debug, Clone, PartialEq)]
pub enum DirectionField {
    Constant(Vec3),
    /// `axis × position`, i.e. circles of latitude around `axis`.
    Azimuthal { axis: Vec3 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConductivitySpec {
    /// `s · I` everywhere.
    Uniform(f64),
    /// `base` everywhere, multiplied by `factor` inside `region`.
    RegionScaled {
        base: Tensor,
        region: Region,
        factor: f64,
    },
    /// `t · I + (l − t) · f fᵀ` with `f` the local fibre direction.
    Anisotropic {
        direction: DirectionField,
        longitudinal: f64,
        transverse: f64,
    },
}

impl Region {
    /// Membership flags for every vertex of `mesh`, geodesic balls measured
    /// with the uniform conductivity `base`.
    pub fn members(&self, mesh: &TriMesh, base: &Tensor) -> Result<Vec<bool>> {
        let n = mesh.vertex_count();
        Ok(match self {
            Region::Empty => vec![false; n],
            Region::EuclideanBall { center, radius } => mesh
                .vertices()
                .iter()
                .map(|p| (p - center).norm() <= *radius)
                .collect(),
            Region::GeodesicBall { center, radius } => {
                if *center >= n {
                    return Err(Error::IndexOutOfRange { index: *center, len: n });
                }
                let uniform = mesh.with_conductivity(vec![*base; n])?;
                let d = crate::geodesic::dijkstra_distances(&uniform, *center)?;
                d.iter().map(|&x| x <= *radius).collect()
            }
            Region::Band {
                normal,
                offset,
                half_width,
                extent_center,
                extent_radius,
            } => {
                let unit = normal.normalize();
                mesh.vertices()
                    .iter()
                    .map(|p| {
                        libm::fabs(unit.dot(p) - offset) <= *half_width
                            && (p - extent_center).norm() <= *extent_radius
                    })
                    .collect()
            }
        })
    }
}

impl DirectionField {
    fn at(&self, p: &Vec3) -> Vec3 {
        match self {
            DirectionField::Constant(d) => d.normalize(),
            DirectionField::Azimuthal { axis } => {
                let t = axis.cross(p);
                if t.norm() > 1e-12 * (1.0 + p.norm()) {
                    t.normalize()
                } else {
                    // On the axis: any direction perpendicular to it.
                    let trial = if libm::fabs(axis.x) < 0.9 { Vec3::x() } else { Vec3::y() };
                    axis.cross(&trial).normalize()
                }
            }
        }
    }
}

/// Attach a conductivity field described by `spec`, replacing any existing one.
pub fn set_conductivity(mesh: &TriMesh, spec: &ConductivitySpec) -> Result<TriMesh> {
    let n = mesh.vertex_count();
    let field = match spec {
        ConductivitySpec::Uniform(s) => {
            if !(*s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidConductivity(format!(
                    "uniform conductivity must be positive, got {s}"
                )));
            }
            vec![Tensor::identity() * *s; n]
        }
        ConductivitySpec::RegionScaled { base, region, factor } => {
            if !(*factor > 0.0) || !factor.is_finite() {
                return Err(Error::InvalidConductivity(format!(
                    "region factor must be positive, got {factor}"
                )));
            }
            if !is_symmetric(base) || !(min_eigenvalue(base) > 0.0) {
                return Err(Error::InvalidConductivity(
                    "base tensor is not symmetric positive definite".into(),
                ));
            }
            let inside = region.members(mesh, base)?;
            inside
                .iter()
                .map(|&m| if m { base * *factor } else { *base })
                .collect()
        }
        ConductivitySpec::Anisotropic {
            direction,
            longitudinal,
            transverse,
        } => {
            if !(*longitudinal > 0.0) || !(*transverse > 0.0) {
                return Err(Error::InvalidConductivity(format!(
                    "anisotropic values must be positive, got longitudinal {longitudinal}, transverse {transverse}"
                )));
            }
            if let DirectionField::Constant(d) = direction {
                if !(d.norm() > 0.0) {
                    return Err(Error::InvalidConductivity("zero fibre direction".into()));
                }
            }
            mesh.vertices()
                .iter()
                .map(|p| {
                    let f = direction.at(p);
                    Tensor::identity() * *transverse + f * f.transpose() * (longitudinal - transverse)
                })
                .collect()
        }
    };
    mesh.with_conductivity(field)
}

/// Electrode positions outside the mesh surface.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeSet {
    positions: Vec<Vec3>,
}

impl ElectrodeSet {
    /// Validate electrodes against a mesh: at least one electrode, none on a
    /// vertex, and none enclosed by the surface when it is closed.
    pub fn new(positions: Vec<Vec3>, mesh: &TriMesh) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidElectrodes("at least one electrode is required".into()));
        }
        let closed = mesh.is_closed();
        for (e, p) in positions.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidElectrodes(format!("electrode {e} is not finite")));
            }
            let dmin = mesh
                .vertices()
                .iter()
                .map(|v| (v - p).norm())
                .fold(f64::INFINITY, f64::min);
            if !(dmin > 0.0) {
                return Err(Error::InvalidElectrodes(format!(
                    "electrode {e} coincides with a mesh vertex"
                )));
            }
            if closed && libm::fabs(mesh.solid_angle(p)) > 2.0 * core::f64::consts::PI {
                return Err(Error::InvalidElectrodes(format!(
                    "electrode {e} lies inside the mesh surface"
                )));
            }
        }
        Ok(ElectrodeSet { positions })
    }

    /// `count` electrodes spread on a sphere of `radius` around the mesh
    /// centroid (Fibonacci lattice).
    pub fn shell(mesh: &TriMesh, count: usize, radius: f64) -> Result<Self> {
        let c = mesh.centroid();
        let golden = core::f64::consts::PI * (3.0 - libm::sqrt(5.0));
        let positions = (0..count)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                let r = libm::sqrt(1.0 - z * z);
                let phi = golden * i as f64;
                c + Vec3::new(r * libm::cos(phi), r * libm::sin(phi), z) * radius
            })
            .collect();
        ElectrodeSet::new(positions, mesh)
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}
