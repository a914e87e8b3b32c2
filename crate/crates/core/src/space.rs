//! Finite models of metric measure spaces.
//!
//! A [`DiscreteSpace`] is a simplicial complex of triangles and segments.
//! Every cell carries an orthonormal frame, the coordinates of its vertices
//! in that frame, and a measure weight; vertices receive one share of the
//! mass of each incident cell so that total masses agree exactly.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CalcError, Result};
use crate::mesh_io;

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

/// A triangle (`dim == 2`) or segment (`dim == 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub verts: [usize; 3],
    pub dim: usize,
}

impl Cell {
    pub fn vertices(&self) -> &[usize] {
        &self.verts[..self.dim + 1]
    }
}

/// Intrinsic geometry of one cell in its own orthonormal frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellGeometry {
    /// Vertex coordinates in the cell frame.
    pub local: [Vec2; 3],
    /// Frame coefficients of the gradients of the barycentric coordinates.
    pub grads: [Vec2; 3],
    /// Riemannian volume (area or length) before the measure density is applied.
    pub volume: f64,
}

/// One input cell for [`DiscreteSpace::assemble`].
#[derive(Clone, Debug)]
pub(crate) struct RawCell {
    pub cell: Cell,
    pub local: [Vec2; 3],
    pub density: f64,
    pub tag: u32,
}

#[derive(Clone, Debug)]
pub struct DiscreteSpace {
    descriptor: String,
    n_vertices: usize,
    cells: Vec<Cell>,
    geometry: Vec<CellGeometry>,
    cell_mass: Vec<f64>,
    vertex_mass: Vec<f64>,
    metric: Vec<Mat2>,
    ambient_dim: usize,
    ambient: Vec<f64>,
    chart: Option<Vec<Vec2>>,
    chart_tags: Vec<u32>,
    kappa: f64,
    edges: Vec<[usize; 2]>,
    edge_length: Vec<f64>,
    component: Vec<usize>,
    n_components: usize,
    vertex_cells: Vec<Vec<usize>>,
}

/// Cells of one local dimension inside one connected component.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimensionClass {
    pub component: usize,
    pub dim: usize,
    pub cells: usize,
    pub mass: f64,
}

impl DiscreteSpace {
    pub(crate) fn assemble(
        descriptor: String,
        n_vertices: usize,
        raw: Vec<RawCell>,
        ambient_dim: usize,
        ambient: Vec<f64>,
        chart: Option<Vec<Vec2>>,
        kappa: f64,
    ) -> Result<Self> {
        assert_eq!(ambient.len(), n_vertices * ambient_dim);
        let mut cells = Vec::with_capacity(raw.len());
        let mut geometry = Vec::with_capacity(raw.len());
        let mut cell_mass = Vec::with_capacity(raw.len());
        let mut chart_tags = Vec::with_capacity(raw.len());
        for (c, r) in raw.iter().enumerate() {
            for &v in r.cell.vertices() {
                if v >= n_vertices {
                    return Err(CalcError::MeshFormat(format!("cell {c} references vertex {v}")));
                }
            }
            let g = cell_geometry(&r.cell, &r.local).ok_or_else(|| {
                CalcError::NonPositiveWeight(format!("cell {c} is degenerate or negatively oriented"))
            })?;
            let m = g.volume * r.density;
            if !(m > 0.0) || !m.is_finite() {
                return Err(CalcError::NonPositiveWeight(format!("cell {c} has mass {m}")));
            }
            cells.push(r.cell);
            geometry.push(g);
            cell_mass.push(m);
            chart_tags.push(r.tag);
        }
        let mut vertex_mass = vec![0.0; n_vertices];
        let mut vertex_cells = vec![Vec::new(); n_vertices];
        for (c, cell) in cells.iter().enumerate() {
            let share = cell_mass[c] / (cell.dim + 1) as f64;
            for &v in cell.vertices() {
                vertex_mass[v] += share;
                vertex_cells[v].push(c);
            }
        }
        if let Some(v) = vertex_mass.iter().position(|&m| !(m > 0.0)) {
            return Err(CalcError::NonPositiveWeight(format!("vertex {v} belongs to no cell")));
        }

        let mut edge_map: BTreeMap<[usize; 2], f64> = BTreeMap::new();
        for (c, cell) in cells.iter().enumerate() {
            let vs = cell.vertices();
            for a in 0..vs.len() {
                for b in a + 1..vs.len() {
                    let key = if vs[a] < vs[b] { [vs[a], vs[b]] } else { [vs[b], vs[a]] };
                    let p = geometry[c].local[a];
                    let q = geometry[c].local[b];
                    let len = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                    edge_map.entry(key).or_insert(len);
                }
            }
        }
        let edges: Vec<[usize; 2]> = edge_map.keys().copied().collect();
        let edge_length: Vec<f64> = edge_map.values().copied().collect();

        let mut parent: Vec<usize> = (0..n_vertices).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &edges {
            let (a, b) = (find(&mut parent, e[0]), find(&mut parent, e[1]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut label = HashMap::new();
        let mut vcomp = vec![0usize; n_vertices];
        for v in 0..n_vertices {
            let r = find(&mut parent, v);
            let next = label.len();
            vcomp[v] = *label.entry(r).or_insert(next);
        }
        let component: Vec<usize> = cells.iter().map(|c| vcomp[c.verts[0]]).collect();
        let n_cells = cells.len();
        Ok(DiscreteSpace {
            descriptor,
            n_vertices,
            cells,
            geometry,
            cell_mass,
            vertex_mass,
            metric: vec![IDENTITY; n_cells],
            ambient_dim,
            ambient,
            chart,
            chart_tags,
            kappa,
            edges,
            edge_length,
            component,
            n_components: label.len(),
            vertex_cells,
        })
    }

    /// Builds a space from a generator descriptor such as `flat_torus:n=16,side=2pi`
    /// or `icosphere:subdiv=3`. Several descriptors joined by `+` give a disjoint union.
    pub fn build(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split('+').map(str::trim).collect();
        if parts.len() > 1 {
            let spaces = parts.iter().map(|p| Self::build(p)).collect::<Result<Vec<_>>>()?;
            return Self::disjoint_union(&spaces);
        }
        let (kind, params) = match spec.split_once(':') {
            Some((k, p)) => (k.trim(), p.trim()),
            None => (spec.trim(), ""),
        };
        if kind == "mesh" {
            if params.is_empty() {
                return Err(CalcError::Descriptor("mesh needs a path, e.g. mesh:bunny.off".into()));
            }
            return Self::from_mesh_file(params);
        }
        let args = Params::parse(params)?;
        let space = match kind {
            "flat_torus" | "torus" => {
                args.only(&["n", "side"])?;
                Self::flat_torus(args.usize("n", 16)?, args.f64("side", 2.0 * PI)?)
            }
            "icosphere" | "sphere" => {
                args.only(&["subdiv", "radius"])?;
                Self::icosphere(args.usize("subdiv", 3)?, args.f64("radius", 1.0)?)
            }
            "cone" => {
                args.only(&["angle", "n"])?;
                Self::cone(args.f64("angle", PI)?, args.usize("n", 8)?)
            }
            "weighted_grid" => {
                args.only(&["n", "a"])?;
                Self::weighted_grid(args.usize("n", 16)?, args.f64("a", 0.5)?)
            }
            "interval" => {
                args.only(&["n", "length"])?;
                Self::interval(args.usize("n", 16)?, args.f64("length", 1.0)?)
            }
            other => return Err(CalcError::Descriptor(format!("unknown generator '{other}'"))),
        }?;
        Ok(space)
    }

    /// Flat torus `[0,side)²` triangulated by an `n × n` grid with two
    /// triangles per square. Ambient coordinates are the Clifford embedding.
    pub fn flat_torus(n: usize, side: f64) -> Result<Self> {
        Self::torus_grid(format!("flat_torus:n={n},side={}", fmt_num(side)), n, side, |_, _| 1.0, 0.0)
    }

    /// Torus `[0,2π)²` with measure `e^{-V} dx`, `V = a (cos x + cos y)`.
    /// The declared curvature bound is the smallest eigenvalue of `Hess V`, namely `-|a|`.
    pub fn weighted_grid(n: usize, a: f64) -> Result<Self> {
        let w = move |x: f64, y: f64| (-a * (x.cos() + y.cos())).exp();
        Self::torus_grid(format!("weighted_grid:n={n},a={}", fmt_num(a)), n, 2.0 * PI, w, -a.abs())
    }

    fn torus_grid(descriptor: String, n: usize, side: f64, weight: impl Fn(f64, f64) -> f64, kappa: f64) -> Result<Self> {
        if n < 3 {
            return Err(CalcError::Descriptor("torus grids need n >= 3".into()));
        }
        if !(side > 0.0) {
            return Err(CalcError::Descriptor("side must be positive".into()));
        }
        let h = side / n as f64;
        let idx = |i: usize, j: usize| (j % n) * n + (i % n);
        let mut chart = Vec::with_capacity(n * n);
        let mut ambient = Vec::with_capacity(4 * n * n);
        let r = side / (2.0 * PI);
        for j in 0..n {
            for i in 0..n {
                let (x, y) = (i as f64 * h, j as f64 * h);
                chart.push([x, y]);
                let (ax, ay) = (x / r, y / r);
                ambient.extend_from_slice(&[r * ax.cos(), r * ax.sin(), r * ay.cos(), r * ay.sin()]);
            }
        }
        let mut raw = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let corners = [
                    ([idx(i, j), idx(i + 1, j), idx(i, j + 1)], [[0.0, 0.0], [h, 0.0], [0.0, h]]),
                    ([idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)], [[h, 0.0], [h, h], [0.0, h]]),
                ];
                for (verts, pts) in corners {
                    let base = [i as f64 * h, j as f64 * h];
                    let w: f64 = pts.iter().map(|p| weight(base[0] + p[0], base[1] + p[1])).sum::<f64>() / 3.0;
                    let o = pts[0];
                    let local = pts.map(|p| [p[0] - o[0], p[1] - o[1]]);
                    raw.push(RawCell { cell: Cell { verts, dim: 2 }, local, density: w, tag: 0 });
                }
            }
        }
        Self::assemble(descriptor, n * n, raw, 4, ambient, Some(chart), kappa)
    }

    /// Geodesic icosahedron obtained by `subdiv` rounds of midpoint
    /// subdivision projected to the sphere of the given radius.
    pub fn icosphere(subdiv: usize, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(CalcError::Descriptor("radius must be positive".into()));
        }
        if subdiv > 7 {
            return Err(CalcError::Descriptor("subdiv above 7 is not supported".into()));
        }
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut pts: Vec<[f64; 3]> = vec![
            [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
            [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
            [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
        ];
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        let normalize = |p: [f64; 3]| {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            [p[0] / n, p[1] / n, p[2] / n]
        };
        pts.iter_mut().for_each(|p| *p = normalize(*p));
        for _ in 0..subdiv {
            let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            for f in &faces {
                let mut m = [0usize; 3];
                for k in 0..3 {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    let key = (a.min(b), a.max(b));
                    m[k] = *mid.entry(key).or_insert_with(|| {
                        let (p, q) = (pts[a], pts[b]);
                        pts.push(normalize([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                        pts.len() - 1
                    });
                }
                next.push([f[0], m[0], m[2]]);
                next.push([f[1], m[1], m[0]]);
                next.push([f[2], m[2], m[1]]);
                next.push([m[0], m[1], m[2]]);
            }
            faces = next;
        }
        for f in faces.iter_mut() {
            let (a, b, c) = (pts[f[0]], pts[f[1]], pts[f[2]]);
            let n = cross(sub3(b, a), sub3(c, a));
            if dot3(n, a) < 0.0 {
                f.swap(1, 2);
            }
        }
        let pts: Vec<[f64; 3]> = pts.iter().map(|p| [radius * p[0], radius * p[1], radius * p[2]]).collect();
        let desc = format!("icosphere:subdiv={subdiv},radius={}", fmt_num(radius));
        Self::from_embedded_triangles(desc, &pts, &faces, 1.0 / (radius * radius))
    }

    /// Cone of total angle `angle` and slant length 1 with `n` radial rings.
    pub fn cone(angle: f64, n: usize) -> Result<Self> {
        if !(angle > 0.0 && angle <= 2.0 * PI) {
            return Err(CalcError::Descriptor("cone angle must lie in (0, 2π]".into()));
        }
        if n < 1 {
            return Err(CalcError::Descriptor("cone needs n >= 1".into()));
        }
        let sectors = ((angle * n as f64).ceil() as usize).max(6);
        let sin_b = angle / (2.0 * PI);
        let cos_b = (1.0 - sin_b * sin_b).max(0.0).sqrt();
        let mut pts = vec![[0.0, 0.0, 0.0]];
        let mut chart = vec![[0.0, 0.0]];
        for i in 1..=n {
            let r = i as f64 / n as f64;
            for j in 0..sectors {
                let theta = angle * j as f64 / sectors as f64;
                let phi = 2.0 * PI * j as f64 / sectors as f64;
                pts.push([r * sin_b * phi.cos(), r * sin_b * phi.sin(), -r * cos_b]);
                chart.push([r, theta]);
            }
        }
        let ring = |i: usize, j: usize| 1 + (i - 1) * sectors + (j % sectors);
        let mut faces = Vec::new();
        for j in 0..sectors {
            faces.push([0, ring(1, j), ring(1, j + 1)]);
        }
        for i in 1..n {
            for j in 0..sectors {
                faces.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
                faces.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
            }
        }
        let mut s = Self::from_embedded_triangles(format!("cone:angle={},n={n}", fmt_num(angle)), &pts, &faces, 0.0)?;
        s.chart = Some(chart);
        Ok(s)
    }

    /// Path graph of `n` segments, a one-dimensional space.
    pub fn interval(n: usize, length: f64) -> Result<Self> {
        if n < 1 || !(length > 0.0) {
            return Err(CalcError::Descriptor("interval needs n >= 1 and positive length".into()));
        }
        let h = length / n as f64;
        let mut ambient = Vec::with_capacity(3 * (n + 1));
        let mut chart = Vec::with_capacity(n + 1);
        for i in 0..=n {
            ambient.extend_from_slice(&[i as f64 * h, 0.0, 0.0]);
            chart.push([i as f64 * h, 0.0]);
        }
        let raw = (0..n)
            .map(|i| RawCell {
                cell: Cell { verts: [i, i + 1, i + 1], dim: 1 },
                local: [[0.0, 0.0], [h, 0.0], [0.0, 0.0]],
                density: 1.0,
                tag: 0,
            })
            .collect();
        Self::assemble(format!("interval:n={n},length={}", fmt_num(length)), n + 1, raw, 3, ambient, Some(chart), 0.0)
    }

    /// Reads an OFF or OBJ triangle mesh.
    pub fn from_mesh_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (pts, faces) = mesh_io::read_triangle_mesh(path)?;
        mesh_io::check_manifold(pts.len(), &faces)?;
        Self::from_embedded_triangles(format!("mesh:{}", path.display()), &pts, &faces, 0.0)
    }

    /// Space of triangles embedded in R³, each given its own intrinsic frame.
    pub fn from_embedded_triangles(descriptor: String, pts: &[[f64; 3]], faces: &[[usize; 3]], kappa: f64) -> Result<Self> {
        let mut raw = Vec::with_capacity(faces.len());
        for (k, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= pts.len()) {
                return Err(CalcError::MeshFormat(format!("face {k} references a missing vertex")));
            }
            let (a, b, c) = (pts[f[0]], pts[f[1]], pts[f[2]]);
            let e1 = sub3(b, a);
            let l1 = norm3(e1);
            let u = sub3(c, a);
            if !(l1 > 0.0) {
                return Err(CalcError::NonPositiveWeight(format!("face {k} is degenerate")));
            }
            let e1n = [e1[0] / l1, e1[1] / l1, e1[2] / l1];
            let x = dot3(u, e1n);
            let perp = [u[0] - x * e1n[0], u[1] - x * e1n[1], u[2] - x * e1n[2]];
            let y = norm3(perp);
            raw.push(RawCell {
                cell: Cell { verts: *f, dim: 2 },
                local: [[0.0, 0.0], [l1, 0.0], [x, y]],
                density: 1.0,
                tag: 0,
            });
        }
        let ambient = pts.iter().flat_map(|p| p.iter().copied()).collect();
        Self::assemble(descriptor, pts.len(), raw, 3, ambient, None, kappa)
    }

    /// Disjoint union; ambient coordinates are padded with zeros to a common dimension
    /// and the declared curvature bound is the smallest of the parts.
    pub fn disjoint_union(parts: &[DiscreteSpace]) -> Result<Self> {
        if parts.is_empty() {
            return Err(CalcError::Descriptor("empty union".into()));
        }
        let dim = parts.iter().map(|p| p.ambient_dim).max().unwrap_or(0);
        let mut raw = Vec::new();
        let mut ambient = Vec::new();
        let mut offset = 0;
        let mut chart = Vec::new();
        let all_charts = parts.iter().all(|p| p.chart.is_some());
        for (k, p) in parts.iter().enumerate() {
            for (c, cell) in p.cells.iter().enumerate() {
                let mut verts = cell.verts;
                verts.iter_mut().for_each(|v| *v += offset);
                raw.push(RawCell {
                    cell: Cell { verts, dim: cell.dim },
                    local: p.geometry[c].local,
                    density: p.cell_mass[c] / p.geometry[c].volume,
                    tag: k as u32,
                });
            }
            for v in 0..p.n_vertices {
                let a = p.ambient_coords(v);
                ambient.extend_from_slice(a);
                ambient.extend(std::iter::repeat_n(0.0, dim - a.len()));
                if let Some(ch) = &p.chart {
                    chart.push(ch[v]);
                }
            }
            offset += p.n_vertices;
        }
        let desc = parts.iter().map(|p| p.descriptor.as_str()).collect::<Vec<_>>().join("+");
        let kappa = parts.iter().map(|p| p.kappa).fold(f64::INFINITY, f64::min);
        Self::assemble(desc, offset, raw, dim, ambient, all_charts.then_some(chart), kappa)
    }

    /// Returns a copy whose cell `c` uses the Gram matrix `g` for its frame.
    /// Calculus operators require orthonormal frames; this is meant for
    /// pointwise module algebra only.
    pub fn with_cell_metric(&self, c: usize, g: Mat2) -> Result<Self> {
        let sym = (g[0][1] - g[1][0]).abs() <= 1e-14 * (g[0][0].abs() + g[1][1].abs());
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        let dim = self.cells[c].dim;
        let pd = if dim == 1 { g[0][0] > 0.0 } else { g[0][0] > 0.0 && det > 0.0 };
        if !sym || !pd {
            return Err(CalcError::InvalidArgument("cell metric must be symmetric positive definite".into()));
        }
        let mut out = self.clone();
        out.metric[c] = g;
        Ok(out)
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, c: usize) -> &Cell {
        &self.cells[c]
    }

    pub fn geometry(&self, c: usize) -> &CellGeometry {
        &self.geometry[c]
    }

    pub fn cell_mass(&self) -> &[f64] {
        &self.cell_mass
    }

    pub fn vertex_mass(&self) -> &[f64] {
        &self.vertex_mass
    }

    pub fn total_mass(&self) -> f64 {
        self.cell_mass.iter().sum()
    }

    pub fn metric(&self, c: usize) -> &Mat2 {
        &self.metric[c]
    }

    /// True when every cell frame is orthonormal.
    pub fn is_orthonormal(&self) -> bool {
        self.metric.iter().all(|g| *g == IDENTITY)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn ambient_coords(&self, v: usize) -> &[f64] {
        &self.ambient[v * self.ambient_dim..(v + 1) * self.ambient_dim]
    }

    /// Chart coordinates of the vertices, when the generator has a global chart.
    pub fn chart(&self) -> Option<&[Vec2]> {
        self.chart.as_deref()
    }

    pub fn chart_tags(&self) -> &[u32] {
        &self.chart_tags
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn edge_length(&self) -> &[f64] {
        &self.edge_length
    }

    /// Index of the edge joining `a` and `b`.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let key = if a < b { [a, b] } else { [b, a] };
        self.edges.binary_search(&key).ok()
    }

    /// Mesh size: the longest edge.
    pub fn h(&self) -> f64 {
        self.edge_length.iter().copied().fold(0.0, f64::max)
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    /// Component index of each cell.
    pub fn cell_component(&self) -> &[usize] {
        &self.component
    }

    /// Component index of each vertex.
    pub fn vertex_component(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_vertices];
        for (c, cell) in self.cells.iter().enumerate() {
            for &v in cell.vertices() {
                out[v] = self.component[c];
            }
        }
        out
    }

    pub fn vertex_cells(&self, v: usize) -> &[usize] {
        &self.vertex_cells[v]
    }

    /// Largest cell dimension.
    pub fn max_dim(&self) -> usize {
        self.cells.iter().map(|c| c.dim).max().unwrap_or(0)
    }

    /// Vertices lying on an edge that belongs to exactly one triangle.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut count: HashMap<[usize; 2], usize> = HashMap::new();
        for cell in self.cells.iter().filter(|c| c.dim == 2) {
            for k in 0..3 {
                let (a, b) = (cell.verts[k], cell.verts[(k + 1) % 3]);
                *count.entry([a.min(b), a.max(b)]).or_default() += 1;
            }
        }
        let mut out = vec![false; self.n_vertices];
        for (e, n) in count {
            if n == 1 {
                out[e[0]] = true;
                out[e[1]] = true;
            }
        }
        out
    }

    /// Partition of the cells by component and local dimension. Classes
    /// without cells never appear.
    pub fn local_dimension(&self) -> Vec<DimensionClass> {
        let mut map: BTreeMap<(usize, usize), (usize, f64)> = BTreeMap::new();
        for (c, cell) in self.cells.iter().enumerate() {
            let e = map.entry((self.component[c], cell.dim)).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += self.cell_mass[c];
        }
        map.into_iter()
            .map(|((component, dim), (cells, mass))| DimensionClass { component, dim, cells, mass })
            .collect()
    }

    /// Vertex-averaged position of a cell in chart coordinates, unwrapped
    /// through the cell frame. Only meaningful for chart-aligned frames.
    pub fn cell_chart_centroid(&self, c: usize) -> Option<Vec2> {
        let chart = self.chart.as_ref()?;
        let cell = &self.cells[c];
        let g = &self.geometry[c];
        let k = (cell.dim + 1) as f64;
        let base = chart[cell.verts[0]];
        let (mut x, mut y) = (0.0, 0.0);
        for i in 0..=cell.dim {
            x += g.local[i][0] - g.local[0][0];
            y += g.local[i][1] - g.local[0][1];
        }
        Some([base[0] + x / k, base[1] + y / k])
    }

    /// SHA-256 of the combinatorics, geometry and measure, as lowercase hex.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_vertices as u64).to_le_bytes());
        for (c, cell) in self.cells.iter().enumerate() {
            h.update((cell.dim as u64).to_le_bytes());
            for &v in cell.vertices() {
                h.update((v as u64).to_le_bytes());
            }
            for p in &self.geometry[c].local {
                h.update(p[0].to_bits().to_le_bytes());
                h.update(p[1].to_bits().to_le_bytes());
            }
            h.update(self.cell_mass[c].to_bits().to_le_bytes());
            for row in &self.metric[c] {
                for v in row {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        h.update(self.kappa.to_bits().to_le_bytes());
        let digest = h.finalize();
        let mut s = String::with_capacity(64);
        for b in digest.iter() {
            let _ = write!(s, "{b:02x}");
        }
        s
    }

    /// Summary used by the command line `space` subcommand.
    pub fn summary(&self) -> SpaceSummary {
        SpaceSummary {
            descriptor: self.descriptor.clone(),
            space_hash: self.hash(),
            vertices: self.n_vertices,
            edges: self.edges.len(),
            cells: self.cells.len(),
            components: self.n_components,
            total_mass: self.total_mass(),
            h: self.h(),
            kappa: self.kappa,
            dimensions: self.local_dimension(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpaceSummary {
    pub descriptor: String,
    pub space_hash: String,
    pub vertices: usize,
    pub edges: usize,
    pub cells: usize,
    pub components: usize,
    pub total_mass: f64,
    pub h: f64,
    pub kappa: f64,
    pub dimensions: Vec<DimensionClass>,
}

fn cell_geometry(cell: &Cell, local: &[Vec2; 3]) -> Option<CellGeometry> {
    match cell.dim {
        1 => {
            let d = [local[1][0] - local[0][0], local[1][1] - local[0][1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if !(len > 0.0) || d[1] != 0.0 || d[0] < 0.0 {
                return None;
            }
            Some(CellGeometry { local: *local, grads: [[-1.0 / len, 0.0], [1.0 / len, 0.0], [0.0, 0.0]], volume: len })
        }
        2 => {
            let e1 = [local[1][0] - local[0][0], local[1][1] - local[0][1]];
            let e2 = [local[2][0] - local[0][0], local[2][1] - local[0][1]];
            let twice = e1[0] * e2[1] - e1[1] * e2[0];
            if !(twice > 0.0) {
                return None;
            }
            let mut grads = [[0.0; 2]; 3];
            for (i, g) in grads.iter_mut().enumerate() {
                let p = local[(i + 1) % 3];
                let q = local[(i + 2) % 3];
                *g = [-(q[1] - p[1]) / twice, (q[0] - p[0]) / twice];
            }
            Some(CellGeometry { local: *local, grads, volume: 0.5 * twice })
        }
        _ => None,
    }
}

pub(crate) fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x}");
    s
}

/// `key=value` list of a generator descriptor.
struct Params(BTreeMap<String, String>);

impl Params {
    fn parse(s: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CalcError::Descriptor(format!("expected key=value, got '{item}'")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Params(map))
    }

    fn only(&self, allowed: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(CalcError::Descriptor(format!("unknown parameter '{k}' (expected one of {allowed:?})"))),
            None => Ok(()),
        }
    }

    fn usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| CalcError::Descriptor(format!("{key} must be a non-negative integer"))),
        }
    }

    fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => parse_real(v).ok_or_else(|| CalcError::Descriptor(format!("{key}: cannot parse '{v}'"))),
        }
    }
}

/// Parses a real number, also accepting multiples of π such as `2pi` or `pi/2`.
pub fn parse_real(s: &str) -> Option<f64> {
    let s = s.trim().to_ascii_lowercase().replace('π', "pi");
    if let Ok(x) = s.parse::<f64>() {
        return Some(x);
    }
    let (num, den) = match s.split_once('/') {
        Some((a, b)) => (a.to_string(), b.trim().parse::<f64>().ok()?),
        None => (s.clone(), 1.0),
    };
    let coef = num.trim().strip_suffix("pi")?.trim().trim_end_matches('*');
    let c = if coef.is_empty() { 1.0 } else { coef.parse::<f64>().ok()? };
    Some(c * PI / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle_area_oracle(s: &DiscreteSpace) -> f64 {
        let d = s.ambient_dim();
        (0..s.n_cells())
            .map(|c| {
                let v = s.cell(c).verts;
                let p: Vec<Vec<f64>> = v.iter().map(|&i| s.ambient_coords(i).to_vec()).collect();
                let a: Vec<f64> = (0..d).map(|k| p[1][k] - p[0][k]).collect();
                let b: Vec<f64> = (0..d).map(|k| p[2][k] - p[0][k]).collect();
                let aa: f64 = a.iter().map(|x| x * x).sum();
                let bb: f64 = b.iter().map(|x| x * x).sum();
                let ab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
                0.5 * (aa * bb - ab * ab).max(0.0).sqrt()
            })
            .sum()
    }

    #[test]
    fn torus_counts_and_mass() {
        let s = DiscreteSpace::build("flat_torus:n=4,side=2pi").unwrap();
        assert_eq!(s.n_vertices(), 16);
        assert_eq!(s.n_cells(), 32);
        assert!(s.cells().iter().all(|c| c.dim == 2));
        let four_pi_sq = 4.0 * PI * PI;
        assert!((s.total_mass() - four_pi_sq).abs() < 1e-12 * four_pi_sq);
        let vm: f64 = s.vertex_mass().iter().sum();
        assert!((vm - s.total_mass()).abs() < 1e-12 * s.total_mass());
        assert_eq!(s.n_edges(), 48);
    }

    #[test]
    fn icosahedron_mass_close_to_sphere() {
        let s = DiscreteSpace::build("icosphere:subdiv=0,radius=1").unwrap();
        assert_eq!((s.n_vertices(), s.n_cells()), (12, 20));
        let oracle = triangle_area_oracle(&s);
        assert!((s.total_mass() - oracle).abs() < 1e-12);
        // Inscribed icosahedron with unit circumradius: 20·(√3/4)·a², a = 4/√(10+2√5).
        let a = 4.0 / (10.0 + 2.0 * 5f64.sqrt()).sqrt();
        assert!((s.total_mass() - 5.0 * 3f64.sqrt() * a * a).abs() < 1e-12);
        let mut prev = (s.total_mass() - 4.0 * PI).abs();
        for k in 1..4 {
            let sk = DiscreteSpace::icosphere(k, 1.0).unwrap();
            let gap = (sk.total_mass() - 4.0 * PI).abs();
            assert!(gap < prev && gap < 0.15 * 4.0 * PI);
            prev = gap;
        }
    }

    #[test]
    fn cone_mass_matches_triangle_areas() {
        let s = DiscreteSpace::build("cone:angle=pi,n=6").unwrap();
        let oracle = triangle_area_oracle(&s);
        assert!((s.total_mass() - oracle).abs() < 1e-12 * oracle);
        // The smooth cone of slant 1 and angle π has area π/2.
        assert!((oracle - PI / 2.0).abs() < 0.05);
    }

    #[test]
    fn generator_is_deterministic() {
        let a = DiscreteSpace::build("icosphere:subdiv=2").unwrap();
        let b = DiscreteSpace::build("icosphere:subdiv=2").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = DiscreteSpace::build("icosphere:subdiv=2,radius=2").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn union_dimension_classes() {
        let s = DiscreteSpace::build("flat_torus:n=4+interval:n=5").unwrap();
        let classes = s.local_dimension();
        assert_eq!(classes.len(), 2);
        assert_eq!((classes[0].dim, classes[0].cells), (2, 32));
        assert_eq!((classes[1].dim, classes[1].cells), (1, 5));
        assert!(classes.iter().all(|c| c.mass > 0.0));
        assert_eq!(s.n_components(), 2);
    }

    #[test]
    fn rejects_bad_descriptors() {
        assert!(DiscreteSpace::build("klein_bottle:n=3").is_err());
        assert!(DiscreteSpace::build("flat_torus:n=2").is_err());
        assert!(DiscreteSpace::build("flat_torus:m=4").is_err());
        assert!(DiscreteSpace::build("cone:angle=7").is_err());
    }

    #[test]
    fn parses_multiples_of_pi() {
        assert!((parse_real("2pi").unwrap() - 2.0 * PI).abs() < 1e-15);
        assert!((parse_real("pi/2").unwrap() - PI / 2.0).abs() < 1e-15);
        assert_eq!(parse_real("1.5"), Some(1.5));
        assert!(parse_real("abc").is_none());
    }

    #[test]
    fn barycentric_gradients_sum_to_zero() {
        let s = DiscreteSpace::build("icosphere:subdiv=1").unwrap();
        for c in 0..s.n_cells() {
            let g = s.geometry(c).grads;
            for k in 0..2 {
                assert!((g[0][k] + g[1][k] + g[2][k]).abs() < 1e-12);
            }
        }
    }
}
