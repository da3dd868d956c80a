//! Simplicial meshes and the shape-function gradient operator.
//!
//! A mesh is a set of `d`-simplices (triangles for `d = 2`, tetrahedra for
//! `d = 3`) over a vertex array. Boundary vertices are not read from input:
//! a vertex is on the boundary iff it belongs to a facet that is incident to
//! exactly one element. Interior vertices are numbered `0..n` in ascending
//! global id, and those numbers are the columns of every system matrix.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra_sparse::CsrMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Relative volume threshold below which an element counts as degenerate.
pub const DEGENERATE_TOL: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    coords: Vec<f64>,
    cells: Vec<usize>,
    volumes: Vec<f64>,
    boundary: Vec<bool>,
    interior_ids: Vec<usize>,
    column_of: Vec<Option<usize>>,
    fingerprint: [u8; 32],
}

impl Mesh {
    /// Builds a validated mesh from flat coordinate (`nv * dim`) and
    /// connectivity (`k * (dim + 1)`) arrays. The fingerprint is the SHA-256
    /// of the canonical text serialization.
    pub fn new(dim: usize, coords: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        let mut mesh = Self::build(dim, coords, cells)?;
        mesh.fingerprint = Sha256::digest(mesh.to_text().as_bytes()).into();
        Ok(mesh)
    }

    fn build(dim: usize, coords: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidMesh(format!("dimension must be 2 or 3, got {dim}")));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidMesh("coordinate array length not a multiple of d".into()));
        }
        let nodes = dim + 1;
        if cells.is_empty() || !cells.len().is_multiple_of(nodes) {
            return Err(Error::InvalidMesh("connectivity array empty or ragged".into()));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        let nv = coords.len() / dim;
        let k = cells.len() / nodes;

        let mut referenced = vec![false; nv];
        for (e, cell) in cells.chunks_exact(nodes).enumerate() {
            for (a, &v) in cell.iter().enumerate() {
                if v >= nv {
                    return Err(Error::InvalidMesh(format!(
                        "element {e} references vertex {v} but only {nv} vertices exist"
                    )));
                }
                if cell[..a].contains(&v) {
                    return Err(Error::InvalidMesh(format!("element {e} repeats vertex {v}")));
                }
                referenced[v] = true;
            }
        }
        if let Some(v) = referenced.iter().position(|r| !r) {
            return Err(Error::InvalidMesh(format!("vertex {v} belongs to no element")));
        }

        let threshold = DEGENERATE_TOL * bounding_diagonal(dim, &coords).powi(dim as i32);
        let mut volumes = Vec::with_capacity(k);
        for (e, cell) in cells.chunks_exact(nodes).enumerate() {
            let vol = simplex_volume(dim, &coords, cell);
            if !(vol > threshold) {
                return Err(Error::DegenerateElement {
                    element: e,
                    volume: vol,
                    threshold,
                });
            }
            volumes.push(vol);
        }

        let boundary = classify_boundary(dim, nv, &cells)?;
        let mut column_of = vec![None; nv];
        let mut interior_ids = Vec::new();
        for v in 0..nv {
            if !boundary[v] {
                column_of[v] = Some(interior_ids.len());
                interior_ids.push(v);
            }
        }

        Ok(Self {
            dim,
            coords,
            cells,
            volumes,
            boundary,
            interior_ids,
            column_of,
            fingerprint: [0; 32],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn num_elements(&self) -> usize {
        self.volumes.len()
    }

    /// Number of interior (free) vertices `n`.
    pub fn num_interior(&self) -> usize {
        self.interior_ids.len()
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.coords[v * self.dim..(v + 1) * self.dim]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let nodes = self.dim + 1;
        &self.cells[e * nodes..(e + 1) * nodes]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.cells.chunks_exact(self.dim + 1)
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    /// Global ids of interior vertices, ascending; position = matrix column.
    pub fn interior_ids(&self) -> &[usize] {
        &self.interior_ids
    }

    /// Matrix column of a vertex, `None` for boundary vertices.
    pub fn interior_column(&self, v: usize) -> Option<usize> {
        self.column_of[v]
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn centroid(&self, e: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for &v in self.element(e) {
            for (ci, xi) in c.iter_mut().zip(self.vertex(v)) {
                *ci += xi;
            }
        }
        let s = 1.0 / (self.dim + 1) as f64;
        c.iter_mut().for_each(|x| *x *= s);
        c
    }

    pub fn centroids(&self) -> Vec<Vec<f64>> {
        (0..self.num_elements()).map(|e| self.centroid(e)).collect()
    }

    /// Serializes to the mesh text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.dim, self.num_vertices(), self.num_elements());
        for v in 0..self.num_vertices() {
            let line: Vec<String> = self.vertex(v).iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        for cell in self.elements() {
            let line: Vec<String> = cell.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a mesh file. The fingerprint is the SHA-256 of the
/// raw file bytes.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::Parse {
        line: 0,
        message: "file is not valid UTF-8".into(),
    })?;
    let (dim, coords, cells) = parse_mesh_text(text)?;
    let mut mesh = Mesh::build(dim, coords, cells)?;
    mesh.fingerprint = Sha256::digest(&bytes).into();
    Ok(mesh)
}

/// Parses mesh text into `(d, coords, cells)` without validation.
pub fn parse_mesh_text(text: &str) -> Result<(usize, Vec<f64>, Vec<usize>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 0,
        message: "empty file".into(),
    })?;
    let head: Vec<usize> = parse_fields(hline, header)?;
    let [dim, nv, k] = head[..] else {
        return Err(Error::Parse {
            line: hline,
            message: format!("header must be `d nv k`, found {} fields", head.len()),
        });
    };
    if dim != 2 && dim != 3 {
        return Err(Error::Parse {
            line: hline,
            message: format!("dimension must be 2 or 3, got {dim}"),
        });
    }

    let mut coords = Vec::with_capacity(nv * dim);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or(Error::Parse {
            line: 0,
            message: format!("unexpected end of file: expected {nv} vertex lines"),
        })?;
        let xs: Vec<f64> = parse_fields(ln, l)?;
        if xs.len() != dim {
            return Err(Error::Parse {
                line: ln,
                message: format!("expected {dim} coordinates, found {}", xs.len()),
            });
        }
        coords.extend(xs);
    }
    let mut cells = Vec::with_capacity(k * (dim + 1));
    for _ in 0..k {
        let (ln, l) = lines.next().ok_or(Error::Parse {
            line: 0,
            message: format!("unexpected end of file: expected {k} element lines"),
        })?;
        let ids: Vec<usize> = parse_fields(ln, l)?;
        if ids.len() != dim + 1 {
            return Err(Error::Parse {
                line: ln,
                message: format!("expected {} vertex ids, found {}", dim + 1, ids.len()),
            });
        }
        cells.extend(ids);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::Parse {
            line: ln,
            message: "trailing data after last element".into(),
        });
    }
    Ok((dim, coords, cells))
}

fn parse_fields<T: std::str::FromStr>(line: usize, text: &str) -> Result<Vec<T>> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<T>().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse `{tok}`"),
            })
        })
        .collect()
}

fn bounding_diagonal(dim: usize, coords: &[f64]) -> f64 {
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for x in coords.chunks_exact(dim) {
        for a in 0..dim {
            lo[a] = lo[a].min(x[a]);
            hi[a] = hi[a].max(x[a]);
        }
    }
    lo.iter().zip(&hi).map(|(l, h)| (h - l) * (h - l)).sum::<f64>().sqrt()
}

/// Edge-vector matrix `[x1 - x0, ..., xd - x0]` as rows.
fn edge_matrix(dim: usize, coords: &[f64], cell: &[usize]) -> [[f64; 3]; 3] {
    let x0 = &coords[cell[0] * dim..cell[0] * dim + dim];
    let mut e = [[0.0; 3]; 3];
    for i in 0..dim {
        let xi = &coords[cell[i + 1] * dim..cell[i + 1] * dim + dim];
        for a in 0..dim {
            e[i][a] = xi[a] - x0[a];
        }
    }
    e
}

fn det(dim: usize, e: &[[f64; 3]; 3]) -> f64 {
    match dim {
        2 => e[0][0] * e[1][1] - e[0][1] * e[1][0],
        _ => {
            e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1]) - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0])
                + e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0])
        }
    }
}

fn simplex_volume(dim: usize, coords: &[f64], cell: &[usize]) -> f64 {
    let fact = if dim == 2 { 2.0 } else { 6.0 };
    det(dim, &edge_matrix(dim, coords, cell)).abs() / fact
}

fn classify_boundary(dim: usize, nv: usize, cells: &[usize]) -> Result<Vec<bool>> {
    let nodes = dim + 1;
    let mut facets: HashMap<[usize; 3], u32> = HashMap::with_capacity(cells.len());
    for cell in cells.chunks_exact(nodes) {
        for skip in 0..nodes {
            let mut f = [usize::MAX; 3];
            let mut j = 0;
            for (a, &v) in cell.iter().enumerate() {
                if a != skip {
                    f[j] = v;
                    j += 1;
                }
            }
            f[..dim].sort_unstable();
            *facets.entry(f).or_insert(0) += 1;
        }
    }
    let mut boundary = vec![false; nv];
    for (f, count) in facets {
        match count {
            1 => f[..dim].iter().for_each(|&v| boundary[v] = true),
            2 => {}
            _ => {
                return Err(Error::InvalidMesh(format!(
                    "facet {:?} is shared by {count} elements",
                    &f[..dim]
                )))
            }
        }
    }
    Ok(boundary)
}

/// Volumes `|Ω_ℓ|` of every element.
pub fn element_volumes(mesh: &Mesh) -> Vec<f64> {
    mesh.volumes.clone()
}

/// Sparse gradient operator: row `ℓ·d + a` holds `∂φ_i/∂x_a` on element `ℓ`
/// for each vertex `i` of that element.
#[derive(Clone, Debug)]
pub struct GradientOperator {
    dim: usize,
    full: CsrMatrix<f64>,
    interior: CsrMatrix<f64>,
    volumes: Vec<f64>,
}

impl GradientOperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_elements(&self) -> usize {
        self.volumes.len()
    }

    /// Number of rows `k·d`.
    pub fn num_rows(&self) -> usize {
        self.full.nrows()
    }

    /// Number of interior columns `n`.
    pub fn num_interior(&self) -> usize {
        self.interior.ncols()
    }

    /// `D_full`, over all vertices.
    pub fn full(&self) -> &CsrMatrix<f64> {
        &self.full
    }

    /// `D`, restricted to interior columns.
    pub fn interior(&self) -> &CsrMatrix<f64> {
        &self.interior
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Element owning a given row.
    pub fn element_of_row(&self, row: usize) -> usize {
        row / self.dim
    }

    /// Interior-restricted row as `(columns, values)`.
    pub fn row(&self, row: usize) -> (&[usize], &[f64]) {
        let offs = self.interior.row_offsets();
        let (a, b) = (offs[row], offs[row + 1]);
        (&self.interior.col_indices()[a..b], &self.interior.values()[a..b])
    }
}

/// Computes the gradients of the linear shape functions on every element.
pub fn gradient_operator(mesh: &Mesh) -> Result<GradientOperator> {
    let dim = mesh.dim;
    let nodes = dim + 1;
    let k = mesh.num_elements();
    let nv = mesh.num_vertices();

    let mut full_offsets = Vec::with_capacity(k * dim + 1);
    let mut full_cols = Vec::with_capacity(k * dim * nodes);
    let mut full_vals = Vec::with_capacity(k * dim * nodes);
    let mut int_offsets = Vec::with_capacity(k * dim + 1);
    let mut int_cols = Vec::new();
    let mut int_vals = Vec::new();
    full_offsets.push(0);
    int_offsets.push(0);

    for (e, cell) in mesh.elements().enumerate() {
        let grads = element_gradients(dim, &mesh.coords, cell).ok_or(Error::DegenerateElement {
            element: e,
            volume: mesh.volumes[e],
            threshold: 0.0,
        })?;
        let mut order: Vec<usize> = (0..nodes).collect();
        order.sort_unstable_by_key(|&a| cell[a]);
        for comp in 0..dim {
            for &a in &order {
                let g = grads[a][comp];
                full_cols.push(cell[a]);
                full_vals.push(g);
                if let Some(col) = mesh.column_of[cell[a]] {
                    int_cols.push(col);
                    int_vals.push(g);
                }
            }
            full_offsets.push(full_cols.len());
            int_offsets.push(int_cols.len());
        }
    }

    let full = CsrMatrix::try_from_csr_data(k * dim, nv, full_offsets, full_cols, full_vals)
        .map_err(|e| Error::InvalidMesh(format!("gradient operator: {e}")))?;
    let interior = CsrMatrix::try_from_csr_data(k * dim, mesh.num_interior(), int_offsets, int_cols, int_vals)
        .map_err(|e| Error::InvalidMesh(format!("gradient operator: {e}")))?;

    Ok(GradientOperator {
        dim,
        full,
        interior,
        volumes: mesh.volumes.clone(),
    })
}

/// Gradients of the `d + 1` barycentric coordinates, in element vertex order.
/// `None` when the edge matrix is singular.
fn element_gradients(dim: usize, coords: &[f64], cell: &[usize]) -> Option<[[f64; 3]; 4]> {
    let e = edge_matrix(dim, coords, cell);
    let det = det(dim, &e);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    // Rows of E hold edge vectors, so grad λ_i (i >= 1) is column i-1 of E⁻¹.
    let mut inv = [[0.0; 3]; 3];
    match dim {
        2 => {
            inv[0][0] = e[1][1] / det;
            inv[0][1] = -e[0][1] / det;
            inv[1][0] = -e[1][0] / det;
            inv[1][1] = e[0][0] / det;
        }
        _ => {
            for i in 0..3 {
                for j in 0..3 {
                    let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                    let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                    inv[i][j] = (e[r0][c0] * e[r1][c1] - e[r0][c1] * e[r1][c0]) / det;
                }
            }
        }
    }
    let mut g = [[0.0; 3]; 4];
    for i in 1..=dim {
        for a in 0..dim {
            g[i][a] = inv[a][i - 1];
            g[0][a] -= g[i][a];
        }
    }
    Some(g)
}
