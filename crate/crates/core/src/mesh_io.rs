//! OFF and OBJ triangle mesh ingestion.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{CalcError, Result};

pub type TriangleMesh = (Vec<[f64; 3]>, Vec<[usize; 3]>);

pub fn read_triangle_mesh(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CalcError::Io { path: path.display().to_string(), source })?;
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "off" => parse_off(&text),
        Some(ext) if ext == "obj" => parse_obj(&text),
        _ if text.trim_start().starts_with("OFF") => parse_off(&text),
        _ => parse_obj(&text),
    }
}

pub fn parse_off(text: &str) -> Result<TriangleMesh> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    let bad = |m: &str| CalcError::MeshFormat(format!("OFF: {m}"));
    if tokens.next() != Some("OFF") {
        return Err(bad("missing OFF header"));
    }
    let mut next_num = |what: &str| -> Result<f64> {
        tokens
            .next()
            .ok_or_else(|| bad(&format!("unexpected end of file reading {what}")))?
            .parse::<f64>()
            .map_err(|_| bad(&format!("cannot parse {what}")))
    };
    let nv = next_num("vertex count")? as usize;
    let nf = next_num("face count")? as usize;
    let _ne = next_num("edge count")?;
    let mut pts = Vec::with_capacity(nv);
    for _ in 0..nv {
        pts.push([next_num("x")?, next_num("y")?, next_num("z")?]);
    }
    let mut faces = Vec::with_capacity(nf);
    for f in 0..nf {
        let k = next_num("face size")? as usize;
        if k != 3 {
            return Err(bad(&format!("face {f} has {k} vertices; only triangles are supported")));
        }
        let tri = [next_num("index")? as usize, next_num("index")? as usize, next_num("index")? as usize];
        faces.push(tri);
    }
    Ok((pts, faces))
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut pts = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        let bad = |m: &str| CalcError::MeshFormat(format!("OBJ line {}: {m}", lineno + 1));
        match it.next() {
            Some("v") => {
                let xs: Vec<f64> = it.take(3).map(|t| t.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad coordinate"))?;
                if xs.len() != 3 {
                    return Err(bad("vertex needs three coordinates"));
                }
                pts.push([xs[0], xs[1], xs[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| bad("bad face index"))?;
                        let n = pts.len() as i64;
                        let i = if i < 0 { n + i } else { i - 1 };
                        if i < 0 {
                            return Err(bad("face index out of range"));
                        }
                        Ok(i as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(bad("only triangular faces are supported"));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    Ok((pts, faces))
}

/// Rejects meshes with repeated corners or edges shared by more than two faces.
pub fn check_manifold(nv: usize, faces: &[[usize; 3]]) -> Result<()> {
    let mut undirected: HashMap<(usize, usize), usize> = HashMap::new();
    for (k, f) in faces.iter().enumerate() {
        if f.iter().any(|&v| v >= nv) {
            return Err(CalcError::MeshFormat(format!("face {k} references a missing vertex")));
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(CalcError::NonManifold(format!("face {k} repeats a vertex")));
        }
        for i in 0..3 {
            let (a, b) = (f[i], f[(i + 1) % 3]);
            let n = undirected.entry((a.min(b), a.max(b))).or_default();
            *n += 1;
            if *n > 2 {
                return Err(CalcError::NonManifold(format!("edge ({a},{b}) is shared by more than two faces")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA_OFF: &str = "OFF\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";

    #[test]
    fn parses_off_and_obj_alike() {
        let (p, f) = parse_off(TETRA_OFF).unwrap();
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2/1 3/1 4/1\n";
        let (q, g) = parse_obj(obj).unwrap();
        assert_eq!(p, q);
        assert_eq!(f, g);
        check_manifold(p.len(), &f).unwrap();
    }

    #[test]
    fn rejects_fin_edges() {
        let faces = [[0, 1, 2], [0, 1, 3], [0, 1, 4]];
        assert!(matches!(check_manifold(5, &faces), Err(CalcError::NonManifold(_))));
    }

    #[test]
    fn rejects_quads() {
        assert!(parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").is_err());
    }
}
