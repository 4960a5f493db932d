//! ASCII OFF and PLY triangle-mesh parsing.
//!
//! Both parsers fan-triangulate polygonal faces and report errors with the
//! byte offset of the offending line. The OFF reader accepts the header
//! variant where the counts share the first line with the `OFF` keyword
//! (`OFF1234 2456 0`), which is common in CAD model collections.

use thiserror::Error;

/// File format accepted by [`parse_mesh`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Ply,
}

impl MeshFormat {
    /// Guesses the format from a file extension.
    pub fn from_extension(path: &str) -> Option<MeshFormat> {
        let ext = path.rsplit('.').next()?.to_ascii_lowercase();
        match ext.as_str() {
            "off" => Some(MeshFormat::Off),
            "ply" => Some(MeshFormat::Ply),
            _ => None,
        }
    }
}

/// Indexed triangle soup in the source model's units.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    /// Vertex count declared by the file header.
    pub declared_vertices: usize,
    /// Face-record count declared by the file header (before fan
    /// triangulation, so `faces.len() >= declared_faces` for polygonal input).
    pub declared_faces: usize,
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("malformed header at byte {offset} (line {line}): {reason}")]
    MalformedHeader { offset: usize, line: usize, reason: String },
    #[error("bad vertex at byte {offset} (line {line}): {reason}")]
    BadVertex { offset: usize, line: usize, reason: String },
    #[error("bad face at byte {offset} (line {line}): {reason}")]
    BadFace { offset: usize, line: usize, reason: String },
    #[error("vertex index {index} out of range (mesh has {vertices} vertices) at byte {offset} (line {line})")]
    IndexOutOfRange { index: usize, vertices: usize, offset: usize, line: usize },
    #[error("count mismatch at byte {offset}: header declares {declared} {what}, file provides {found}")]
    CountMismatch { what: &'static str, declared: usize, found: usize, offset: usize },
    #[error("not valid utf-8 input")]
    NotText,
}

/// Parses raw bytes that claim the given format.
pub fn parse_mesh(bytes: &[u8], format: MeshFormat) -> Result<TriangleMesh, MeshError> {
    let text = std::str::from_utf8(bytes).map_err(|_| MeshError::NotText)?;
    match format {
        MeshFormat::Off => parse_off(text),
        MeshFormat::Ply => parse_ply(text),
    }
}

/// Line iterator that keeps byte offsets and skips blanks and `#` comments.
struct Lines<'a> {
    text: &'a str,
    cursor: usize,
    line: usize,
}

struct Line<'a> {
    content: &'a str,
    offset: usize,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines { text, cursor: 0, line: 0 }
    }

    fn next_content(&mut self) -> Option<Line<'a>> {
        while self.cursor < self.text.len() {
            let start = self.cursor;
            let rest = &self.text[start..];
            let end = rest.find('\n').map(|i| start + i).unwrap_or(self.text.len());
            self.cursor = end + 1;
            self.line += 1;
            let raw = &self.text[start..end];
            let content = raw.trim_end_matches('\r').trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            return Some(Line { content, offset: start, line: self.line });
        }
        None
    }
}

fn parse_usize(tok: &str, at: &Line, what: &'static str) -> Result<usize, MeshError> {
    tok.parse::<usize>().map_err(|_| MeshError::MalformedHeader {
        offset: at.offset,
        line: at.line,
        reason: format!("expected {what} count, found {tok:?}"),
    })
}

fn parse_off(text: &str) -> Result<TriangleMesh, MeshError> {
    let mut lines = Lines::new(text);
    let header = lines.next_content().ok_or(MeshError::MalformedHeader {
        offset: 0,
        line: 1,
        reason: "empty file".into(),
    })?;
    if !header.content.starts_with("OFF") {
        return Err(MeshError::MalformedHeader {
            offset: header.offset,
            line: header.line,
            reason: format!("expected OFF keyword, found {:?}", header.content),
        });
    }

    // Counts either trail the keyword on the same line ("OFF8 6 0" or
    // "OFF 8 6 0") or live on the next content line.
    let after_keyword = header.content[3..].trim();
    let counts_line;
    let counts: Vec<&str>;
    if after_keyword.is_empty() {
        counts_line = lines.next_content().ok_or(MeshError::MalformedHeader {
            offset: header.offset,
            line: header.line,
            reason: "missing counts line".into(),
        })?;
        counts = counts_line.content.split_whitespace().collect();
    } else {
        counts = after_keyword.split_whitespace().collect();
        counts_line = header;
    }
    if counts.len() < 2 {
        return Err(MeshError::MalformedHeader {
            offset: counts_line.offset,
            line: counts_line.line,
            reason: format!("expected 'vertices faces [edges]', found {:?}", counts_line.content),
        });
    }
    let nv = parse_usize(counts[0], &counts_line, "vertex")?;
    let nf = parse_usize(counts[1], &counts_line, "face")?;

    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let Some(line) = lines.next_content() else {
            return Err(MeshError::CountMismatch {
                what: "vertices",
                declared: nv,
                found: i,
                offset: text.len(),
            });
        };
        let toks: Vec<&str> = line.content.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(MeshError::BadVertex {
                offset: line.offset,
                line: line.line,
                reason: format!("expected 3 coordinates, found {}", toks.len()),
            });
        }
        let mut v = [0.0f64; 3];
        for (k, item) in v.iter_mut().enumerate() {
            *item = toks[k].parse::<f64>().map_err(|_| MeshError::BadVertex {
                offset: line.offset,
                line: line.line,
                reason: format!("bad coordinate {:?}", toks[k]),
            })?;
        }
        // A face-count-looking line here means the file is short on vertices.
        vertices.push(v);
    }

    let mut faces = Vec::with_capacity(nf);
    for i in 0..nf {
        let Some(line) = lines.next_content() else {
            return Err(MeshError::CountMismatch {
                what: "faces",
                declared: nf,
                found: i,
                offset: text.len(),
            });
        };
        push_face_record(line, &vertices, &mut faces)?;
    }

    Ok(TriangleMesh { vertices, faces, declared_vertices: nv, declared_faces: nf })
}

/// Parses one polygon record `m i0 i1 ... i(m-1) [colors...]` and
/// fan-triangulates it.
fn push_face_record(
    line: Line<'_>,
    vertices: &[[f64; 3]],
    faces: &mut Vec<[usize; 3]>,
) -> Result<(), MeshError> {
    let toks: Vec<&str> = line.content.split_whitespace().collect();
    let m = toks[0].parse::<usize>().map_err(|_| MeshError::BadFace {
        offset: line.offset,
        line: line.line,
        reason: format!("bad vertex-count token {:?}", toks[0]),
    })?;
    if m < 3 {
        return Err(MeshError::BadFace {
            offset: line.offset,
            line: line.line,
            reason: format!("face with {m} vertices"),
        });
    }
    if toks.len() < 1 + m {
        return Err(MeshError::BadFace {
            offset: line.offset,
            line: line.line,
            reason: format!("face lists {m} vertices but provides {}", toks.len() - 1),
        });
    }
    let mut idx = Vec::with_capacity(m);
    for tok in &toks[1..=m] {
        let i = tok.parse::<usize>().map_err(|_| MeshError::BadFace {
            offset: line.offset,
            line: line.line,
            reason: format!("bad vertex index {tok:?}"),
        })?;
        if i >= vertices.len() {
            return Err(MeshError::IndexOutOfRange {
                index: i,
                vertices: vertices.len(),
                offset: line.offset,
                line: line.line,
            });
        }
        idx.push(i);
    }
    for t in 1..m - 1 {
        faces.push([idx[0], idx[t], idx[t + 1]]);
    }
    Ok(())
}

fn parse_ply(text: &str) -> Result<TriangleMesh, MeshError> {
    let mut lines = Lines::new(text);
    let magic = lines.next_content().ok_or(MeshError::MalformedHeader {
        offset: 0,
        line: 1,
        reason: "empty file".into(),
    })?;
    if magic.content != "ply" {
        return Err(MeshError::MalformedHeader {
            offset: magic.offset,
            line: magic.line,
            reason: format!("expected 'ply', found {:?}", magic.content),
        });
    }

    let mut nv: Option<usize> = None;
    let mut nf: Option<usize> = None;
    // (element, property-name) pairs, in declaration order, to locate x/y/z.
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current_element = String::new();
    loop {
        let line = lines.next_content().ok_or(MeshError::MalformedHeader {
            offset: text.len(),
            line: 0,
            reason: "missing end_header".into(),
        })?;
        let toks: Vec<&str> = line.content.split_whitespace().collect();
        match toks[0] {
            "format" => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(MeshError::MalformedHeader {
                        offset: line.offset,
                        line: line.line,
                        reason: "only ascii ply is supported".into(),
                    });
                }
            }
            "comment" | "obj_info" => {}
            "element" => {
                if toks.len() < 3 {
                    return Err(MeshError::MalformedHeader {
                        offset: line.offset,
                        line: line.line,
                        reason: "bad element declaration".into(),
                    });
                }
                current_element = toks[1].to_string();
                let count = parse_usize(toks[2], &line, "element")?;
                match toks[1] {
                    "vertex" => nv = Some(count),
                    "face" => nf = Some(count),
                    _ => {
                        return Err(MeshError::MalformedHeader {
                            offset: line.offset,
                            line: line.line,
                            reason: format!("unsupported element {:?}", toks[1]),
                        })
                    }
                }
            }
            "property" => {
                if current_element == "vertex" {
                    if let Some(name) = toks.last() {
                        vertex_props.push((*name).to_string());
                    }
                }
            }
            "end_header" => break,
            other => {
                return Err(MeshError::MalformedHeader {
                    offset: line.offset,
                    line: line.line,
                    reason: format!("unexpected header token {other:?}"),
                })
            }
        }
    }
    let nv = nv.ok_or(MeshError::MalformedHeader {
        offset: 0,
        line: 1,
        reason: "no vertex element".into(),
    })?;
    let nf = nf.ok_or(MeshError::MalformedHeader {
        offset: 0,
        line: 1,
        reason: "no face element".into(),
    })?;
    let coord_cols: Vec<usize> = ["x", "y", "z"]
        .iter()
        .map(|axis| vertex_props.iter().position(|p| p == axis))
        .collect::<Option<Vec<_>>>()
        .ok_or(MeshError::MalformedHeader {
            offset: 0,
            line: 1,
            reason: "vertex element lacks x/y/z properties".into(),
        })?;

    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let Some(line) = lines.next_content() else {
            return Err(MeshError::CountMismatch {
                what: "vertices",
                declared: nv,
                found: i,
                offset: text.len(),
            });
        };
        let toks: Vec<&str> = line.content.split_whitespace().collect();
        let mut v = [0.0f64; 3];
        for (k, &col) in coord_cols.iter().enumerate() {
            let tok = toks.get(col).ok_or(MeshError::BadVertex {
                offset: line.offset,
                line: line.line,
                reason: format!("missing property column {col}"),
            })?;
            v[k] = tok.parse::<f64>().map_err(|_| MeshError::BadVertex {
                offset: line.offset,
                line: line.line,
                reason: format!("bad coordinate {tok:?}"),
            })?;
        }
        vertices.push(v);
    }

    let mut faces = Vec::with_capacity(nf);
    for i in 0..nf {
        let Some(line) = lines.next_content() else {
            return Err(MeshError::CountMismatch {
                what: "faces",
                declared: nf,
                found: i,
                offset: text.len(),
            });
        };
        push_face_record(line, &vertices, &mut faces)?;
    }

    Ok(TriangleMesh { vertices, faces, declared_vertices: nv, declared_faces: nf })
}

impl TriangleMesh {
    /// Twice-signed-area-free triangle area via the cross product.
    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face];
        let (p0, p1, p2) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let u = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
        let v = [p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]];
        let n = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Serializes the mesh as an ASCII OFF document.
    pub fn to_off(&self) -> String {
        let mut out = String::with_capacity(32 + 32 * (self.vertices.len() + self.faces.len()));
        out.push_str("OFF\n");
        out.push_str(&format!("{} {} 0\n", self.vertices.len(), self.faces.len()));
        for v in &self.vertices {
            out.push_str(&format!("{} {} {}\n", v[0], v[1], v[2]));
        }
        for f in &self.faces {
            out.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
        }
        out
    }
}

#[cfg(test)]
pub(crate) const UNIT_CUBE_OFF: &str = "OFF\n8 12 0\n\
    0 0 0\n1 0 0\n1 1 0\n0 1 0\n0 0 1\n1 0 1\n1 1 1\n0 1 1\n\
    3 0 1 2\n3 0 2 3\n3 4 6 5\n3 4 7 6\n3 0 4 5\n3 0 5 1\n\
    3 1 5 6\n3 1 6 2\n3 2 6 7\n3 2 7 3\n3 3 7 4\n3 3 4 0\n";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_unit_cube() {
        let mesh = parse_mesh(UNIT_CUBE_OFF.as_bytes(), MeshFormat::Off).unwrap();
        assert_eq!(mesh.vertices.len(), 8);
        assert_eq!(mesh.faces.len(), 12);
        assert_eq!(mesh.declared_vertices, 8);
        assert_eq!(mesh.declared_faces, 12);
        assert!((mesh.total_area() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn parses_counts_glued_to_keyword() {
        let text = "OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let mesh = parse_mesh(text.as_bytes(), MeshFormat::Off).unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.faces.len(), 1);
    }

    #[test]
    fn vertex_shortfall_is_count_mismatch() {
        // Declares 8 vertices but provides 7 (and no faces at all).
        let mut text = String::from("OFF\n8 1 0\n");
        for _ in 0..7 {
            text.push_str("0 0 0\n");
        }
        let err = parse_mesh(text.as_bytes(), MeshFormat::Off).unwrap_err();
        match err {
            MeshError::CountMismatch { what, declared, found, .. } => {
                assert_eq!(what, "vertices");
                assert_eq!(declared, 8);
                assert_eq!(found, 7);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn face_index_out_of_range_reports_offset() {
        let text = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n";
        let err = parse_mesh(text.as_bytes(), MeshFormat::Off).unwrap_err();
        match err {
            MeshError::IndexOutOfRange { index, vertices, offset, .. } => {
                assert_eq!(index, 9);
                assert_eq!(vertices, 3);
                assert_eq!(offset, text.find("3 0 1 9").unwrap());
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn quad_faces_fan_triangulate() {
        let text = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let mesh = parse_mesh(text.as_bytes(), MeshFormat::Off).unwrap();
        assert_eq!(mesh.declared_faces, 1);
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn wrong_keyword_is_malformed_header() {
        let err = parse_mesh(b"PLY\n1 0 0\n", MeshFormat::Off).unwrap_err();
        assert!(matches!(err, MeshError::MalformedHeader { .. }));
    }

    #[test]
    fn parses_ascii_ply_with_extra_vertex_properties() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\n\
            element vertex 3\nproperty float x\nproperty float y\nproperty float z\n\
            property uchar red\n\
            element face 1\nproperty list uchar int vertex_indices\nend_header\n\
            0 0 0 255\n2 0 0 255\n0 2 0 255\n3 0 1 2\n";
        let mesh = parse_mesh(text.as_bytes(), MeshFormat::Ply).unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.faces.len(), 1);
        assert!((mesh.total_area() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ply_binary_format_rejected() {
        let text = "ply\nformat binary_little_endian 1.0\nend_header\n";
        let err = parse_mesh(text.as_bytes(), MeshFormat::Ply).unwrap_err();
        assert!(matches!(err, MeshError::MalformedHeader { .. }));
    }

    #[test]
    fn off_roundtrips_through_to_off() {
        let mesh = parse_mesh(UNIT_CUBE_OFF.as_bytes(), MeshFormat::Off).unwrap();
        let again = parse_mesh(mesh.to_off().as_bytes(), MeshFormat::Off).unwrap();
        assert_eq!(again.vertices, mesh.vertices);
        assert_eq!(again.faces, mesh.faces);
    }

    /// Independent token-stream reference parser: no line tracking, no
    /// comment/format tolerance beyond whitespace splitting. Used to
    /// cross-check vertex/face counts from a second implementation path.
    pub(crate) fn reference_off_counts(text: &str) -> (usize, usize) {
        let cleaned: String = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .collect::<Vec<_>>()
            .join(" ");
        let stripped = cleaned.trim_start();
        let stripped = stripped.strip_prefix("OFF").expect("reference: OFF keyword");
        let mut toks = stripped.split_whitespace();
        let nv: usize = toks.next().unwrap().parse().unwrap();
        let nf: usize = toks.next().unwrap().parse().unwrap();
        let _ne: usize = toks.next().unwrap().parse().unwrap();
        let mut read = 0usize;
        while read < 3 * nv {
            toks.next().expect("reference: vertex scalar");
            read += 1;
        }
        let mut face_records = 0usize;
        while face_records < nf {
            let m: usize = toks.next().expect("reference: face arity").parse().unwrap();
            for _ in 0..m {
                toks.next().expect("reference: face index");
            }
            face_records += 1;
        }
        (nv, face_records)
    }

    #[test]
    fn counts_match_reference_parser_on_generated_models() {
        // Cross-check against the independent reference parser over a spread
        // of procedurally generated models.
        for seed in 0..8u64 {
            let mesh = crate::synth::blob_mesh_for_code(&crate::synth::class_code("probe", seed), seed, 6, 8);
            let text = mesh.to_off();
            let parsed = parse_mesh(text.as_bytes(), MeshFormat::Off).unwrap();
            let (rv, rf) = reference_off_counts(&text);
            assert_eq!(parsed.declared_vertices, rv);
            assert_eq!(parsed.declared_faces, rf);
            assert_eq!(parsed.vertices.len(), rv);
        }
    }
}
