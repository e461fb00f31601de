//! Readers and writers for meshes, tables, operators, observations, traces and maps.
//!
//! Text outputs start with a `# ecgi-sir config=<hash> seed=<seed>` line (the
//! VTK title line carries the same text). Binary files are little-endian.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ecgi_sir_core::filter::{mode_probability, Direction, Ensemble, FilterTrace, Particle, StepRecord};
use ecgi_sir_core::forward::Provenance;
use ecgi_sir_core::geodesic::Backend;
use ecgi_sir_core::maps::ActivationMap;
use ecgi_sir_core::mesh::{TriMesh, Vec3};
use ecgi_sir_core::synth::ObservationSeq;
use ecgi_sir_core::{GeodesicTable, TransferOperator};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

/// Provenance line embedded in every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn line(&self) -> String {
        format!("ecgi-sir config={} seed={}", self.config_hash, self.seed)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| AppError::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| AppError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        }
    }
    let file = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| AppError::io(path, e))
}

// ---- meshes ---------------------------------------------------------------

/// Load an ASCII OFF or OBJ surface; polygons are fan-triangulated.
pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    let text = read_text(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let (vertices, triangles) = match ext.as_str() {
        "off" => parse_off(&text, path)?,
        "obj" => parse_obj(&text, path)?,
        _ => return Err(AppError::Config(format!("{}: unknown mesh format (expected .off or .obj)", path.display()))),
    };
    Ok(TriMesh::new(vertices, triangles)?)
}

fn parse_f64(tok: &str, path: &Path, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| AppError::parse(path, line, format!("expected a number, found `{tok}`")))
}

fn fan(poly: &[usize], out: &mut Vec<[usize; 3]>) {
    for k in 1..poly.len() - 1 {
        out.push([poly[0], poly[k], poly[k + 1]]);
    }
}

pub fn parse_off(text: &str, path: &Path) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (ln, first) = lines.next().ok_or_else(|| AppError::parse(path, 1, "empty file"))?;
    let mut toks: Vec<&str> = first.split_whitespace().collect();
    if toks.first() != Some(&"OFF") {
        return Err(AppError::parse(path, ln, "missing OFF header"));
    }
    toks.remove(0);
    let (ln, counts) = if toks.is_empty() {
        let (ln, l) = lines.next().ok_or_else(|| AppError::parse(path, ln, "missing element counts"))?;
        (ln, l.split_whitespace().collect::<Vec<_>>())
    } else {
        (ln, toks)
    };
    if counts.len() < 2 {
        return Err(AppError::parse(path, ln, "expected vertex and face counts"));
    }
    let count = |t: &str| t.parse::<usize>().map_err(|_| AppError::parse(path, ln, format!("bad count `{t}`")));
    let (nv, nf) = (count(counts[0])?, count(counts[1])?);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| AppError::parse(path, ln, "unexpected end of file in vertex list"))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() < 3 {
            return Err(AppError::parse(path, ln, "vertex needs three coordinates"));
        }
        vertices.push(Vec3::new(parse_f64(t[0], path, ln)?, parse_f64(t[1], path, ln)?, parse_f64(t[2], path, ln)?));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| AppError::parse(path, ln, "unexpected end of file in face list"))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        let k = t.first().and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| AppError::parse(path, ln, "bad face size"))?;
        if k < 3 || t.len() < k + 1 {
            return Err(AppError::parse(path, ln, "face needs at least three vertex indices"));
        }
        let mut poly = Vec::with_capacity(k);
        for tok in &t[1..=k] {
            let i = tok.parse::<usize>().map_err(|_| AppError::parse(path, ln, format!("bad vertex index `{tok}`")))?;
            if i >= nv {
                return Err(AppError::parse(path, ln, format!("vertex index {i} out of range (have {nv})")));
            }
            poly.push(i);
        }
        fan(&poly, &mut triangles);
    }
    Ok((vertices, triangles))
}

pub fn parse_obj(text: &str, path: &Path) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces: Vec<(usize, Vec<i64>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        let mut t = l.split_whitespace();
        match t.next() {
            Some("v") => {
                let c: Vec<&str> = t.collect();
                if c.len() < 3 {
                    return Err(AppError::parse(path, ln, "vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(parse_f64(c[0], path, ln)?, parse_f64(c[1], path, ln)?, parse_f64(c[2], path, ln)?));
            }
            Some("f") => {
                let idx = t
                    .map(|tok| {
                        let head = tok.split('/').next().unwrap_or("");
                        head.parse::<i64>().map_err(|_| AppError::parse(path, ln, format!("bad face index `{tok}`")))
                    })
                    .collect::<Result<Vec<i64>>>()?;
                if idx.len() < 3 {
                    return Err(AppError::parse(path, ln, "face needs at least three vertex indices"));
                }
                faces.push((ln, idx));
            }
            _ => {}
        }
    }
    let n = vertices.len() as i64;
    let mut triangles = Vec::new();
    for (ln, idx) in faces {
        let poly = idx
            .iter()
            .map(|&i| {
                let j = if i < 0 { n + i } else { i - 1 };
                if j < 0 || j >= n {
                    Err(AppError::parse(path, ln, format!("vertex index {i} out of range (have {n})")))
                } else {
                    Ok(j as usize)
                }
            })
            .collect::<Result<Vec<usize>>>()?;
        fan(&poly, &mut triangles);
    }
    Ok((vertices, triangles))
}

/// Legacy ASCII VTK PolyData with per-vertex scalar arrays.
pub fn write_vtk(path: &Path, mesh: &TriMesh, scalars: &[(&str, &[f64])], stamp: &Stamp) -> Result<()> {
    let n = mesh.vertex_count();
    for (name, values) in scalars {
        if values.len() != n {
            return Err(AppError::Core(ecgi_sir_core::Error::DimensionMismatch {
                context: "vtk scalar length",
                expected: n,
                found: values.len(),
            }));
        }
        if name.chars().any(char::is_whitespace) {
            return Err(AppError::Config(format!("vtk array name `{name}` contains whitespace")));
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\n{}\nASCII\nDATASET POLYDATA", stamp.line());
    let _ = writeln!(s, "POINTS {n} double");
    for p in mesh.vertices() {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    let nt = mesh.triangle_count();
    let _ = writeln!(s, "POLYGONS {nt} {}", 4 * nt);
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    if !scalars.is_empty() {
        let _ = writeln!(s, "POINT_DATA {n}");
        for (name, values) in scalars {
            let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
            for v in values.iter() {
                let _ = writeln!(s, "{v}");
            }
        }
    }
    write_file(path, s.as_bytes())
}

// ---- electrodes -------------------------------------------------------------

/// `x,y,z` rows; a non-numeric first line is taken as a header.
pub fn load_electrodes(path: &Path) -> Result<Vec<Vec3>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let t: Vec<&str> = l.split(',').map(str::trim).collect();
        if out.is_empty() && t.first().is_some_and(|s| s.parse::<f64>().is_err()) {
            continue;
        }
        if t.len() != 3 {
            return Err(AppError::parse(path, i + 1, "expected x,y,z"));
        }
        out.push(Vec3::new(parse_f64(t[0], path, i + 1)?, parse_f64(t[1], path, i + 1)?, parse_f64(t[2], path, i + 1)?));
    }
    Ok(out)
}

// ---- binary matrices ---------------------------------------------------------

const TABLE_MAGIC: &[u8; 4] = b"EGTB";
const OPERATOR_MAGIC: &[u8; 4] = b"EGOP";
const OBSERVATION_MAGIC: &[u8; 4] = b"EGOB";

fn header(magic: &[u8; 4], a: u32, b: u32, c: u32) -> Vec<u8> {
    let mut h = Vec::with_capacity(16);
    h.extend_from_slice(magic);
    h.extend_from_slice(&a.to_le_bytes());
    h.extend_from_slice(&b.to_le_bytes());
    h.extend_from_slice(&c.to_le_bytes());
    h
}

fn read_header(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<[u32; 3]> {
    if bytes.len() < 16 || &bytes[..4] != magic {
        return Err(AppError::parse(path, 0, format!("not a {} file", String::from_utf8_lossy(magic))));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
    Ok([word(1), word(2), word(3)])
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| AppError::Config(format!("{what} {n} does not fit the file format")))
}

/// Header `EGTB, m, backend id, low 32 bits of the mesh checksum`, then
/// `m × m` f32 distances.
pub fn write_table(path: &Path, table: &GeodesicTable) -> Result<()> {
    let m = table.vertex_count();
    let mut bytes = header(TABLE_MAGIC, u32_of(m, "vertex count")?, table.backend().id(), table.mesh_checksum() as u32);
    bytes.reserve(4 * m * m);
    for d in table.distances() {
        bytes.extend_from_slice(&(*d as f32).to_le_bytes());
    }
    write_file(path, &bytes)
}

pub fn read_table(path: &Path, mesh: &TriMesh) -> Result<GeodesicTable> {
    let bytes = read_bytes(path)?;
    let [m, backend, checksum] = read_header(&bytes, TABLE_MAGIC, path)?;
    let m = m as usize;
    if checksum != mesh.checksum() as u32 || m != mesh.vertex_count() {
        return Err(AppError::Config(format!("{}: table was built for a different mesh", path.display())));
    }
    let backend = Backend::from_id(backend).ok_or_else(|| AppError::parse(path, 0, format!("unknown backend id {backend}")))?;
    if bytes.len() != 16 + 4 * m * m {
        return Err(AppError::parse(path, 0, "truncated table"));
    }
    let distances = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(GeodesicTable::from_distances(
        path.file_stem().and_then(|s| s.to_str()).unwrap_or("table"),
        backend,
        mesh.checksum(),
        m,
        distances,
    )?)
}

/// Header `EGOP, q, m, 0`, then `q × m` row-major f64.
pub fn write_operator(path: &Path, op: &TransferOperator) -> Result<()> {
    let (q, m) = (op.electrode_count(), op.vertex_count());
    let mut bytes = header(OPERATOR_MAGIC, u32_of(q, "electrode count")?, u32_of(m, "vertex count")?, 0);
    for x in op.to_row_major() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    write_file(path, &bytes)
}

pub fn read_operator(path: &Path, mesh: &TriMesh) -> Result<TransferOperator> {
    let bytes = read_bytes(path)?;
    let [q, m, _] = read_header(&bytes, OPERATOR_MAGIC, path)?;
    let (q, m) = (q as usize, m as usize);
    if m != mesh.vertex_count() {
        return Err(AppError::Config(format!(
            "{}: operator has {m} columns but the mesh has {} vertices",
            path.display(),
            mesh.vertex_count()
        )));
    }
    if bytes.len() != 16 + 8 * q * m {
        return Err(AppError::parse(path, 0, "truncated operator"));
    }
    let rows: Vec<f64> = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(TransferOperator::from_row_major(q, m, &rows, Provenance::Loaded, mesh.checksum())?)
}

// ---- observations ---------------------------------------------------------------

/// CSV with a `time_ms,e0,…` header row.
pub fn write_observations_csv(path: &Path, obs: &ObservationSeq, stamp: &Stamp) -> Result<()> {
    let mut s = format!("# {}\n", stamp.line());
    if let Some(n) = &obs.noise {
        let _ = writeln!(s, "# noise level={} std={} snr_db={}", n.level, n.std, n.snr_db);
    }
    s.push_str("time_ms");
    for e in 0..obs.electrode_count() {
        let _ = write!(s, ",e{e}");
    }
    s.push('\n');
    for (k, row) in obs.data.iter().enumerate() {
        let _ = write!(s, "{}", k as f64 * obs.dt_ms);
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    write_file(path, s.as_bytes())
}

pub fn read_observations_csv(path: &Path) -> Result<ObservationSeq> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    let mut times = Vec::new();
    let mut width = None;
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') || l.starts_with("time_ms") {
            continue;
        }
        let vals = l.split(',').map(|t| parse_f64(t.trim(), path, i + 1)).collect::<Result<Vec<f64>>>()?;
        if vals.len() < 2 {
            return Err(AppError::parse(path, i + 1, "expected time and at least one electrode"));
        }
        if *width.get_or_insert(vals.len()) != vals.len() {
            return Err(AppError::parse(path, i + 1, "row length differs from the first row"));
        }
        times.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    if rows.is_empty() {
        return Err(AppError::parse(path, 0, "no observation rows"));
    }
    let dt_ms = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
    Ok(ObservationSeq { data: rows, dt_ms, noise: None })
}

/// Header `EGOB, n, q, dt in µs`, then `n × q` row-major f64.
pub fn write_observations_bin(path: &Path, obs: &ObservationSeq) -> Result<()> {
    let q = obs.electrode_count();
    let dt_us = (obs.dt_ms * 1000.0).round() as u32;
    let mut bytes = header(OBSERVATION_MAGIC, u32_of(obs.len(), "step count")?, u32_of(q, "electrode count")?, dt_us);
    for row in &obs.data {
        for x in row {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    write_file(path, &bytes)
}

pub fn read_observations_bin(path: &Path) -> Result<ObservationSeq> {
    let bytes = read_bytes(path)?;
    let [n, q, dt_us] = read_header(&bytes, OBSERVATION_MAGIC, path)?;
    let (n, q) = (n as usize, q as usize);
    if bytes.len() != 16 + 8 * n * q {
        return Err(AppError::parse(path, 0, "truncated observation file"));
    }
    let flat: Vec<f64> = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(ObservationSeq {
        data: flat.chunks(q.max(1)).map(<[f64]>::to_vec).collect(),
        dt_ms: dt_us as f64 / 1000.0,
        noise: None,
    })
}

// ---- traces -----------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub direction: String,
    pub repetition: usize,
    pub n_particles: usize,
    pub centers_per_particle: usize,
    pub modes: Vec<String>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    pub obs_index: usize,
    pub direction: String,
    pub n_eff: f64,
    pub resampled: bool,
    pub underflow: bool,
    pub mode_probabilities: Vec<f64>,
}

pub fn direction_name(d: Direction) -> &'static str {
    d.name()
}

pub fn parse_direction(s: &str) -> Option<Direction> {
    match s {
        "forward" | "fwd" => Some(Direction::Forward),
        "backward" | "bwd" => Some(Direction::Backward),
        _ => None,
    }
}

/// One JSON header line then one summary line per step.
pub fn write_trace_jsonl(path: &Path, trace: &FilterTrace, header: &TraceHeader) -> Result<()> {
    let mut s = serde_json::to_string(header).expect("header serializes");
    s.push('\n');
    for r in &trace.steps {
        let line = StepSummary {
            step: r.step,
            obs_index: r.obs_index,
            direction: trace.direction.name().to_string(),
            n_eff: r.n_eff,
            resampled: r.resampled,
            underflow: r.underflow,
            mode_probabilities: r.mode_probabilities.clone(),
        };
        s.push_str(&serde_json::to_string(&line).expect("step serializes"));
        s.push('\n');
    }
    write_file(path, s.as_bytes())
}

pub fn read_trace_jsonl(path: &Path) -> Result<(TraceHeader, Vec<StepSummary>)> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| AppError::parse(path, 1, "empty trace"))?;
    let header: TraceHeader = serde_json::from_str(first).map_err(|e| AppError::parse(path, 1, e.to_string()))?;
    let steps = lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| AppError::parse(path, i + 1, e.to_string())))
        .collect::<Result<Vec<StepSummary>>>()?;
    Ok((header, steps))
}

const ENSEMBLE_MAGIC: &[u8; 8] = b"EGENSMB1";

/// Full per-step ensembles: magic, u32 header length, JSON header, then per
/// step `obs_index u32, n_eff f64, resampled u8, underflow u8` followed by
/// each particle as `mode u32, centers u32 × l, radii f64 × l, weight f64`.
pub fn write_trace_bin(path: &Path, trace: &FilterTrace, header: &TraceHeader) -> Result<()> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut b = Vec::new();
    b.extend_from_slice(ENSEMBLE_MAGIC);
    b.extend_from_slice(&u32_of(json.len(), "header length")?.to_le_bytes());
    b.extend_from_slice(&json);
    for r in &trace.steps {
        b.extend_from_slice(&u32_of(r.obs_index, "step index")?.to_le_bytes());
        b.extend_from_slice(&r.n_eff.to_le_bytes());
        b.push(r.resampled as u8);
        b.push(r.underflow as u8);
        for (p, w) in r.ensemble.particles.iter().zip(&r.ensemble.weights) {
            b.extend_from_slice(&u32_of(p.mode, "mode")?.to_le_bytes());
            for &c in &p.centers {
                b.extend_from_slice(&u32_of(c, "center")?.to_le_bytes());
            }
            for r in &p.radii {
                b.extend_from_slice(&r.to_le_bytes());
            }
            b.extend_from_slice(&w.to_le_bytes());
        }
    }
    write_file(path, &b)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(AppError::parse(self.path, 0, "truncated ensemble dump"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn read_trace_bin(path: &Path) -> Result<(TraceHeader, FilterTrace)> {
    let bytes = read_bytes(path)?;
    let mut c = Cursor { bytes: &bytes, pos: 0, path };
    if c.take(8)? != ENSEMBLE_MAGIC {
        return Err(AppError::parse(path, 0, "not an ensemble dump"));
    }
    let len = c.u32()? as usize;
    let header: TraceHeader = serde_json::from_slice(c.take(len)?).map_err(|e| AppError::parse(path, 0, e.to_string()))?;
    let direction = parse_direction(&header.direction)
        .ok_or_else(|| AppError::parse(path, 0, format!("unknown direction `{}`", header.direction)))?;
    let (n, l) = (header.n_particles, header.centers_per_particle);
    let mut steps = Vec::with_capacity(header.steps);
    for step in 0..header.steps {
        let obs_index = c.u32()? as usize;
        let n_eff = c.f64()?;
        let resampled = c.u8()? != 0;
        let underflow = c.u8()? != 0;
        let mut particles = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            let mode = c.u32()? as usize;
            let centers = (0..l).map(|_| c.u32().map(|x| x as usize)).collect::<Result<Vec<_>>>()?;
            let radii = (0..l).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
            particles.push(Particle { centers, radii, mode });
            weights.push(c.f64()?);
        }
        let ensemble = Ensemble { particles, weights, time_index: step + 1 };
        steps.push(StepRecord {
            step,
            obs_index,
            mode_probabilities: mode_probability(&ensemble, header.modes.len()),
            ensemble,
            n_eff,
            resampled,
            underflow,
        });
    }
    if c.pos != bytes.len() {
        return Err(AppError::parse(path, 0, "trailing bytes in ensemble dump"));
    }
    let trace = FilterTrace { direction, n_modes: header.modes.len(), centers_per_particle: l, steps };
    Ok((header, trace))
}

// ---- maps ------------------------------------------------------------------------------

/// `vertex_id,value`; NaN values are written as empty fields.
pub fn write_scalar_csv(path: &Path, values: &[f64], stamp: &Stamp) -> Result<()> {
    let mut s = format!("# {}\nvertex_id,value\n", stamp.line());
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            let _ = writeln!(s, "{i},");
        } else {
            let _ = writeln!(s, "{i},{v}");
        }
    }
    write_file(path, s.as_bytes())
}

pub fn read_scalar_csv(path: &Path) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') || l.starts_with("vertex_id") {
            continue;
        }
        let (id, v) = l.split_once(',').ok_or_else(|| AppError::parse(path, i + 1, "expected vertex_id,value"))?;
        if id.trim().parse::<usize>().ok() != Some(out.len()) {
            return Err(AppError::parse(path, i + 1, "vertex ids must be consecutive from 0"));
        }
        let v = v.trim();
        out.push(if v.is_empty() { f64::NAN } else { parse_f64(v, path, i + 1)? });
    }
    Ok(out)
}

pub fn activation_values(map: &ActivationMap) -> Vec<f64> {
    map.times.iter().map(|t| t.unwrap_or(f64::NAN)).collect()
}

pub fn activation_from_values(values: &[f64]) -> ActivationMap {
    ActivationMap { times: values.iter().map(|v| if v.is_nan() { None } else { Some(*v) }).collect() }
}

/// `time_ms,<mode>…`, one row per step.
pub fn write_mode_timeline(path: &Path, labels: &[String], timeline: &[Vec<f64>], dt_ms: f64, stamp: &Stamp) -> Result<()> {
    let mut s = format!("# {}\ntime_ms", stamp.line());
    for l in labels {
        let _ = write!(s, ",{l}");
    }
    s.push('\n');
    for (k, row) in timeline.iter().enumerate() {
        let _ = write!(s, "{}", k as f64 * dt_ms);
        for p in row {
            let _ = write!(s, ",{p}");
        }
        s.push('\n');
    }
    write_file(path, s.as_bytes())
}

pub fn read_mode_timeline(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = read_text(path)?;
    let mut labels = None;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        if labels.is_none() {
            let cols: Vec<String> = l.split(',').skip(1).map(|c| c.trim().to_string()).collect();
            labels = Some(cols);
            continue;
        }
        let vals = l.split(',').skip(1).map(|t| parse_f64(t.trim(), path, i + 1)).collect::<Result<Vec<f64>>>()?;
        rows.push(vals);
    }
    Ok((labels.ok_or_else(|| AppError::parse(path, 0, "missing header"))?, rows))
}

/// Plain text writer used for reports and correlation tables.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

pub fn join(dir: &Path, name: impl AsRef<Path>) -> PathBuf {
    dir.join(name)
}
