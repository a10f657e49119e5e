//! STL (binary and ASCII) and OBJ import/export.
//!
//! Loading is strict: after welding duplicate records, dropping degenerate
//! faces and repairing a globally inverted orientation, the mesh must be a
//! closed manifold or the load fails with the offending edges.

use super::{weld_vertices, Mesh, MeshError, MeshResult, WELD_TOLERANCE};
use nalgebra::Point3;
use std::fs;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    StlBinary,
    StlAscii,
    Obj,
}

impl MeshFormat {
    /// Picks a format from the file extension; STL defaults to binary.
    pub fn from_path(path: &Path) -> MeshResult<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("stl") => Ok(MeshFormat::StlBinary),
            Some("obj") => Ok(MeshFormat::Obj),
            _ => Err(MeshError::UnknownFormat {
                path: path.display().to_string(),
            }),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> MeshError {
    MeshError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Loads and validates a mesh; the format is inferred from the extension
/// and, for STL, sniffed from the content.
pub fn load_mesh(path: impl AsRef<Path>) -> MeshResult<Mesh> {
    let path = path.as_ref();
    let format = MeshFormat::from_path(path)?;
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;

    let (mut vertices, mut faces) = match format {
        MeshFormat::Obj => parse_obj(path, &bytes)?,
        MeshFormat::StlBinary | MeshFormat::StlAscii => {
            if looks_like_ascii_stl(&bytes) {
                parse_stl_ascii(path, &bytes)?
            } else {
                parse_stl_binary(path, &bytes)?
            }
        }
    };

    let welded = weld_vertices(&mut vertices, &mut faces, WELD_TOLERANCE);
    let mut mesh = Mesh::from_vertices_faces(vertices, faces)?;
    if welded > 0 {
        mesh.warnings
            .push(format!("welded {welded} duplicate vertex record(s)"));
    }
    mesh.orient_outward();
    mesh.require_closed_manifold()?;
    Ok(mesh)
}

/// Writes a mesh in the requested format.
pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>, format: MeshFormat) -> MeshResult<()> {
    let path = path.as_ref();
    let bytes = match format {
        MeshFormat::StlBinary => encode_stl_binary(mesh),
        MeshFormat::StlAscii => encode_stl_ascii(mesh).into_bytes(),
        MeshFormat::Obj => encode_obj(mesh).into_bytes(),
    };
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&bytes).map_err(|e| io_err(path, e))
}

fn looks_like_ascii_stl(bytes: &[u8]) -> bool {
    // "solid" headers also appear in binary files; require a facet keyword.
    let head = &bytes[..bytes.len().min(512)];
    let text = String::from_utf8_lossy(head);
    text.trim_start().starts_with("solid")
        && (text.contains("facet") || String::from_utf8_lossy(bytes).contains("facet"))
}

fn parse_stl_binary(path: &Path, bytes: &[u8]) -> MeshResult<(Vec<Point3<f64>>, Vec<[usize; 3]>)> {
    if bytes.len() < 84 {
        return Err(parse_err(path, "binary STL shorter than the 84-byte preamble"));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let expected = 84 + count * 50;
    if bytes.len() < expected {
        return Err(parse_err(
            path,
            format!(
                "binary STL declares {count} triangles ({expected} bytes) but holds {}",
                bytes.len()
            ),
        ));
    }
    let mut vertices = Vec::with_capacity(count * 3);
    let mut faces = Vec::with_capacity(count);
    for t in 0..count {
        let rec = &bytes[84 + t * 50..84 + (t + 1) * 50];
        // Skip the stored normal; geometry defines orientation.
        for v in 0..3 {
            let off = 12 + v * 12;
            let mut c = [0.0f64; 3];
            for k in 0..3 {
                let raw: [u8; 4] = rec[off + 4 * k..off + 4 * (k + 1)].try_into().unwrap();
                c[k] = f32::from_le_bytes(raw) as f64;
            }
            vertices.push(Point3::new(c[0], c[1], c[2]));
        }
        faces.push([t * 3, t * 3 + 1, t * 3 + 2]);
    }
    Ok((vertices, faces))
}

fn parse_stl_ascii(path: &Path, bytes: &[u8]) -> MeshResult<(Vec<Point3<f64>>, Vec<[usize; 3]>)> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| parse_err(path, "ASCII STL contains invalid UTF-8"))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut pending: Vec<Point3<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("vertex") => {
                let mut c = [0.0f64; 3];
                for item in &mut c {
                    *item = tokens
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| {
                            parse_err(path, format!("line {}: malformed vertex", ln + 1))
                        })?;
                }
                pending.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("endfacet") => {
                if pending.len() != 3 {
                    return Err(parse_err(
                        path,
                        format!("line {}: facet with {} vertices", ln + 1, pending.len()),
                    ));
                }
                let base = vertices.len();
                vertices.append(&mut pending);
                faces.push([base, base + 1, base + 2]);
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(parse_err(path, "ASCII STL contains no facets"));
    }
    Ok((vertices, faces))
}

fn parse_obj(path: &Path, bytes: &[u8]) -> MeshResult<(Vec<Point3<f64>>, Vec<[usize; 3]>)> {
    let text =
        std::str::from_utf8(bytes).map_err(|_| parse_err(path, "OBJ contains invalid UTF-8"))?;
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut c = [0.0f64; 3];
                for item in &mut c {
                    *item = tokens
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| {
                            parse_err(path, format!("line {}: malformed v record", ln + 1))
                        })?;
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let corners: Vec<usize> = tokens
                    .map(|t| {
                        // "i", "i/t", "i//n" or "i/t/n"; 1-based.
                        let idx: i64 = t
                            .split('/')
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| {
                                parse_err(path, format!("line {}: malformed f record", ln + 1))
                            })?;
                        let resolved = if idx < 0 {
                            vertices.len() as i64 + idx
                        } else {
                            idx - 1
                        };
                        if resolved < 0 || resolved as usize >= vertices.len() {
                            return Err(parse_err(
                                path,
                                format!("line {}: face index {idx} out of range", ln + 1),
                            ));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<MeshResult<_>>()?;
                if corners.len() < 3 {
                    return Err(parse_err(
                        path,
                        format!("line {}: face with {} corners", ln + 1, corners.len()),
                    ));
                }
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(parse_err(path, "OBJ contains no faces"));
    }
    Ok((vertices, faces))
}

fn encode_stl_binary(mesh: &Mesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + mesh.face_count() * 50);
    let mut header = [0u8; 80];
    let tag = b"graspmorph binary STL";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.face_count() as u32).to_le_bytes());
    for f in 0..mesh.face_count() {
        let n = mesh.face_normal(f);
        for k in 0..3 {
            out.extend_from_slice(&(n[k] as f32).to_le_bytes());
        }
        for p in mesh.triangle(f) {
            for k in 0..3 {
                out.extend_from_slice(&(p[k] as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

fn encode_stl_ascii(mesh: &Mesh) -> String {
    let mut s = String::from("solid graspmorph\n");
    for f in 0..mesh.face_count() {
        let n = mesh.face_normal(f);
        s.push_str(&format!("  facet normal {} {} {}\n    outer loop\n", n.x, n.y, n.z));
        for p in mesh.triangle(f) {
            s.push_str(&format!("      vertex {} {} {}\n", p.x, p.y, p.z));
        }
        s.push_str("    endloop\n  endfacet\n");
    }
    s.push_str("endsolid graspmorph\n");
    s
}

fn encode_obj(mesh: &Mesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        s.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for f in &mesh.faces {
        s.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{icosphere, unit_cube};

    fn roundtrip(format: MeshFormat, ext: &str) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(format!("mesh.{ext}"));
        let original = icosphere(3.0, 1, Point3::new(0.5, -1.0, 2.0));
        save_mesh(&original, &path, format).unwrap();
        let loaded = load_mesh(&path).unwrap();
        assert_eq!(loaded.face_count(), original.face_count());
        let (a, b) = (original.measure().unwrap(), loaded.measure().unwrap());
        // STL stores f32 coordinates, so allow the quantization loss.
        assert!((a.volume - b.volume).abs() / a.volume < 1e-6);
        assert!((a.surface_area - b.surface_area).abs() / a.surface_area < 1e-6);
    }

    #[test]
    fn stl_binary_roundtrip_welds_shared_vertices() {
        roundtrip(MeshFormat::StlBinary, "stl");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.stl");
        save_mesh(&unit_cube(), &path, MeshFormat::StlBinary).unwrap();
        let loaded = load_mesh(&path).unwrap();
        // 36 stored corner records collapse back to 8 shared vertices.
        assert_eq!(loaded.vertex_count(), 8);
        assert!(loaded.warnings.iter().any(|w| w.contains("welded")));
    }

    #[test]
    fn stl_ascii_roundtrip() {
        roundtrip(MeshFormat::StlAscii, "stl");
    }

    #[test]
    fn obj_roundtrip_preserves_indices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.obj");
        save_mesh(&unit_cube(), &path, MeshFormat::Obj).unwrap();
        let loaded = load_mesh(&path).unwrap();
        assert_eq!(loaded.vertex_count(), 8);
        assert_eq!(loaded.face_count(), 12);
        assert!((loaded.signed_volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn open_stl_fails_validation_with_edge_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("open.stl");
        let mut cube = unit_cube();
        cube.faces.pop();
        let open = Mesh::from_vertices_faces(cube.vertices, cube.faces).unwrap();
        // Bypass validation on save; loading must reject it.
        save_mesh(&open, &path, MeshFormat::StlBinary).unwrap();
        match load_mesh(&path) {
            Err(MeshError::NotClosedManifold { boundary, .. }) => assert_eq!(boundary, 3),
            other => panic!("expected manifold failure, got {other:?}"),
        }
    }

    #[test]
    fn inverted_stl_is_reoriented_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inv.stl");
        let mut cube = unit_cube();
        for f in &mut cube.faces {
            f.swap(0, 1);
        }
        save_mesh(&cube, &path, MeshFormat::StlBinary).unwrap();
        let loaded = load_mesh(&path).unwrap();
        assert!(loaded.signed_volume() > 0.0);
        assert!(loaded.warnings.iter().any(|w| w.contains("flipped")));
    }

    #[test]
    fn unknown_extension_is_rejected() {
        match load_mesh("/tmp/shape.ply") {
            Err(MeshError::UnknownFormat { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn quad_obj_faces_are_fan_triangulated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("quad.obj");
        std::fs::write(
            &path,
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0.5 0.5 1\n\
             f 4 3 2 1\nf 1 2 5\nf 2 3 5\nf 3 4 5\nf 4 1 5\n",
        )
        .unwrap();
        let mesh = load_mesh(&path).unwrap();
        assert_eq!(mesh.face_count(), 6);
        assert!(mesh.signed_volume() > 0.0);
    }
}
