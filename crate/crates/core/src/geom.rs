//! Triangle-mesh container and the geometry helpers shared by registration,
//! attachment, rendering, and the synthetic generator.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Clone, Debug, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::Invalid(format!(
                    "face {i} references vertex out of range (V = {n})"
                )));
            }
        }
        Ok(TriMesh { vertices, faces })
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn centroid(&self) -> Vec3 {
        let mut c = Vec3::zeros();
        for v in &self.vertices {
            c += v;
        }
        c / self.vertices.len().max(1) as f64
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        let n = (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![Vec3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = *f;
            let n = (self.vertices[b] - self.vertices[a])
                .cross(&(self.vertices[c] - self.vertices[a]));
            normals[a] += n;
            normals[b] += n;
            normals[c] += n;
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Undirected vertex adjacency (one-rings) from the face list.
    pub fn vertex_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        let push = |adj: &mut Vec<Vec<usize>>, a: usize, b: usize| {
            if !adj[a].contains(&b) {
                adj[a].push(b);
            }
        };
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                push(&mut adj, a, b);
                push(&mut adj, b, a);
            }
        }
        for ring in &mut adj {
            ring.sort_unstable();
        }
        adj
    }
}

// ---------------------------------------------------------------------------
// rotations
// ---------------------------------------------------------------------------

/// Axis-angle (Rodrigues) rotation.
pub fn rotation_from_axis_angle(aa: &Vec3) -> Matrix3<f64> {
    Rotation3::from_scaled_axis(*aa).into_inner()
}

pub fn axis_angle_from_rotation(r: &Matrix3<f64>) -> Vec3 {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// Shortest-arc spherical interpolation between two axis-angle rotations.
pub fn slerp_axis_angle(a: &Vec3, b: &Vec3, t: f64) -> Vec3 {
    let qa = nalgebra::UnitQuaternion::from_scaled_axis(*a);
    let qb = nalgebra::UnitQuaternion::from_scaled_axis(*b);
    match qa.try_slerp(&qb, t, 1e-12) {
        Some(q) => q.scaled_axis(),
        None => qa.scaled_axis(), // antipodal; hold the first key
    }
}

// ---------------------------------------------------------------------------
// point-triangle queries
// ---------------------------------------------------------------------------

/// Closest point on triangle `(a, b, c)` to `p` with its barycentric
/// coordinates (Ericson, Real-Time Collision Detection).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Barycentric coordinates of the projection of `p` onto the plane of
/// `(a, b, c)`, unclamped. Degenerate triangles return `None`.
pub fn plane_barycentric(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<[f64; 3]> {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let denom = d00 * d11 - d01 * d01;
    if denom.abs() < 1e-18 {
        return None;
    }
    let v = (d11 * d20 - d01 * d21) / denom;
    let w = (d00 * d21 - d01 * d20) / denom;
    Some([1.0 - v - w, v, w])
}

/// Brute-force nearest neighbor indices from each query point into `points`.
pub fn nearest_neighbors(queries: &[Vec3], points: &[Vec3]) -> Vec<usize> {
    use rayon::prelude::*;
    queries
        .par_iter()
        .map(|q| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, p) in points.iter().enumerate() {
                let d = (q - p).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        })
        .collect()
}

// ---------------------------------------------------------------------------
// OBJ / PLY io
// ---------------------------------------------------------------------------

pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "obj" => load_obj(path),
        "ply" => load_ply(path),
        other => Err(Error::Invalid(format!("unsupported mesh format '{other}'"))),
    }
}

pub fn load_obj(path: &Path) -> Result<TriMesh> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for x in &mut xyz {
                    *x = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::Load(format!("bad vertex at line {}", lineno + 1)))?;
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| {
                        t.split('/')
                            .next()
                            .and_then(|s| s.parse::<isize>().ok())
                            .map(|i| {
                                if i < 0 {
                                    (vertices.len() as isize + i) as usize
                                } else {
                                    (i - 1) as usize
                                }
                            })
                            .ok_or_else(|| {
                                Error::Load(format!("bad face index at line {}", lineno + 1))
                            })
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(Error::Invalid(format!(
                        "non-triangular face ({} vertices) at line {}",
                        idx.len(),
                        lineno + 1
                    )));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    if vertices.is_empty() {
        return Err(Error::Invalid("empty mesh".into()));
    }
    TriMesh::new(vertices, faces)
}

pub fn save_obj(path: &Path, mesh: &TriMesh) -> Result<()> {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for f in &mesh.faces {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn load_ply(path: &Path) -> Result<TriMesh> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    // header is ascii terminated by "end_header"
    let header_end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| Error::Load("ply missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::Load("ply header not utf-8".into()))?;
    let mut body_start = header_end + 10;
    while body_start < bytes.len() && bytes[body_start] != b'\n' {
        body_start += 1;
    }
    body_start += 1;

    let mut format = "";
    let mut n_vertices = 0usize;
    let mut n_faces = 0usize;
    let mut vertex_props: Vec<(String, String)> = Vec::new();
    let mut in_vertex = false;
    for line in header.lines() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", f, _] => format = if *f == "ascii" { "ascii" } else { *f },
            ["element", "vertex", n] => {
                n_vertices = n.parse().map_err(|_| Error::Load("bad vertex count".into()))?;
                in_vertex = true;
            }
            ["element", "face", n] => {
                n_faces = n.parse().map_err(|_| Error::Load("bad face count".into()))?;
                in_vertex = false;
            }
            ["element", ..] => in_vertex = false,
            ["property", ty, name] if in_vertex => {
                vertex_props.push((ty.to_string(), name.to_string()));
            }
            _ => {}
        }
    }
    let binary = match format {
        "ascii" => false,
        "binary_little_endian" => true,
        other => {
            return Err(Error::Load(format!("unsupported ply format '{other}'")));
        }
    };

    let pos_of = |name: &str| vertex_props.iter().position(|(_, n)| n == name);
    let (ix, iy, iz) = match (pos_of("x"), pos_of("y"), pos_of("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::Load("ply vertex element missing x/y/z".into())),
    };

    let mut vertices = Vec::with_capacity(n_vertices);
    let mut faces = Vec::with_capacity(n_faces);

    if binary {
        fn scalar_size(ty: &str) -> Result<usize> {
            Ok(match ty {
                "char" | "uchar" | "int8" | "uint8" => 1,
                "short" | "ushort" | "int16" | "uint16" => 2,
                "int" | "uint" | "int32" | "uint32" | "float" | "float32" => 4,
                "double" | "float64" => 8,
                other => return Err(Error::Load(format!("ply scalar type '{other}'"))),
            })
        }
        fn read_scalar(bytes: &[u8], off: usize, ty: &str) -> Result<(f64, usize)> {
            let sz = scalar_size(ty)?;
            if off + sz > bytes.len() {
                return Err(Error::Load("truncated binary ply".into()));
            }
            let s = &bytes[off..off + sz];
            let v = match ty {
                "float" | "float32" => f32::from_le_bytes(s.try_into().unwrap()) as f64,
                "double" | "float64" => f64::from_le_bytes(s.try_into().unwrap()),
                "char" | "int8" => s[0] as i8 as f64,
                "uchar" | "uint8" => s[0] as f64,
                "short" | "int16" => i16::from_le_bytes(s.try_into().unwrap()) as f64,
                "ushort" | "uint16" => u16::from_le_bytes(s.try_into().unwrap()) as f64,
                "int" | "int32" => i32::from_le_bytes(s.try_into().unwrap()) as f64,
                "uint" | "uint32" => u32::from_le_bytes(s.try_into().unwrap()) as f64,
                _ => unreachable!(),
            };
            Ok((v, off + sz))
        }
        let mut off = body_start;
        for _ in 0..n_vertices {
            let mut vals = Vec::with_capacity(vertex_props.len());
            for (ty, _) in &vertex_props {
                let (v, next) = read_scalar(&bytes, off, ty)?;
                vals.push(v);
                off = next;
            }
            vertices.push(Vec3::new(vals[ix], vals[iy], vals[iz]));
        }
        for fi in 0..n_faces {
            let (count, next) = read_scalar(&bytes, off, "uchar")?;
            off = next;
            if count as usize != 3 {
                return Err(Error::Invalid(format!(
                    "non-triangular face ({count} vertices) at face {fi}"
                )));
            }
            let mut f = [0usize; 3];
            for slot in &mut f {
                let (v, next) = read_scalar(&bytes, off, "int")?;
                off = next;
                *slot = v as usize;
            }
            faces.push(f);
        }
    } else {
        let body = std::str::from_utf8(&bytes[body_start..])
            .map_err(|_| Error::Load("ascii ply body not utf-8".into()))?;
        let mut lines = body.lines().filter(|l| !l.trim().is_empty());
        for _ in 0..n_vertices {
            let line = lines.next().ok_or_else(|| Error::Load("truncated ply".into()))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().unwrap_or(f64::NAN))
                .collect();
            if vals.len() < vertex_props.len() {
                return Err(Error::Load("short ply vertex line".into()));
            }
            vertices.push(Vec3::new(vals[ix], vals[iy], vals[iz]));
        }
        for fi in 0..n_faces {
            let line = lines.next().ok_or_else(|| Error::Load("truncated ply".into()))?;
            let vals: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse().unwrap_or(usize::MAX))
                .collect();
            if vals.is_empty() || vals[0] != vals.len() - 1 {
                return Err(Error::Load(format!("bad ply face at {fi}")));
            }
            if vals[0] != 3 {
                return Err(Error::Invalid(format!(
                    "non-triangular face ({} vertices) at face {fi}",
                    vals[0]
                )));
            }
            faces.push([vals[1], vals[2], vals[3]]);
        }
    }
    if vertices.is_empty() {
        return Err(Error::Invalid("empty mesh".into()));
    }
    TriMesh::new(vertices, faces)
}

pub fn save_ply_ascii(path: &Path, mesh: &TriMesh) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let werr = |e| Error::io(path, e);
    writeln!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header",
        mesh.vertices.len(),
        mesh.faces.len()
    )
    .map_err(werr)?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} {}", v.x, v.y, v.z).map_err(werr)?;
    }
    for f in &mesh.faces {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2]).map_err(werr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closest_point_regions() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.0, 1.0, 0.0);
        // interior
        let (p, bary) = closest_point_on_triangle(&Vec3::new(0.25, 0.25, 1.0), &a, &b, &c);
        assert_relative_eq!(p, Vec3::new(0.25, 0.25, 0.0), epsilon = 1e-12);
        assert_relative_eq!(bary[0] + bary[1] + bary[2], 1.0, epsilon = 1e-12);
        // vertex region
        let (p, bary) = closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &a, &b, &c);
        assert_eq!(p, a);
        assert_eq!(bary, [1.0, 0.0, 0.0]);
        // edge region
        let (p, _) = closest_point_on_triangle(&Vec3::new(0.5, -1.0, 0.0), &a, &b, &c);
        assert_relative_eq!(p, Vec3::new(0.5, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn plane_bary_reconstructs() {
        let a = Vec3::new(0.1, 0.0, 0.3);
        let b = Vec3::new(1.0, 0.2, 0.0);
        let c = Vec3::new(0.0, 1.3, -0.2);
        let q = 0.2 * a + 0.5 * b + 0.3 * c;
        let bary = plane_barycentric(&q, &a, &b, &c).unwrap();
        assert_relative_eq!(bary[0], 0.2, epsilon = 1e-12);
        assert_relative_eq!(bary[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(bary[2], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn obj_round_trip_and_quad_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let p = dir.path().join("tri.obj");
        save_obj(&p, &mesh).unwrap();
        let loaded = load_obj(&p).unwrap();
        assert_eq!(loaded.vertices.len(), 3);
        assert_eq!(loaded.faces, vec![[0, 1, 2]]);

        let q = dir.path().join("quad.obj");
        std::fs::write(&q, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert!(matches!(load_obj(&q), Err(Error::Invalid(_))));
    }

    #[test]
    fn ply_ascii_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = TriMesh::new(
            vec![
                Vec3::new(0.5, -0.25, 2.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2], [1, 2, 3]],
        )
        .unwrap();
        let p = dir.path().join("mesh.ply");
        save_ply_ascii(&p, &mesh).unwrap();
        let loaded = load_mesh(&p).unwrap();
        assert_eq!(loaded.faces, mesh.faces);
        assert_relative_eq!(loaded.vertices[0], mesh.vertices[0], epsilon = 1e-6);
    }

    #[test]
    fn rotation_round_trip() {
        let aa = Vec3::new(0.3, -1.1, 0.4);
        let r = rotation_from_axis_angle(&aa);
        let back = axis_angle_from_rotation(&r);
        assert_relative_eq!(back, aa, epsilon = 1e-10);
    }
}
