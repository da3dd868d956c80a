//! Built-in meshes used by the tests, the `verify` command and the benches.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::Result;
use crate::mesh::Mesh;
use crate::sampling::rng_stream;

/// Structured triangulation of `[lo, hi]²` with `cells` squares per side,
/// each cut along its `(i, j)–(i+1, j+1)` diagonal.
pub fn square(cells: usize, lo: f64, hi: f64) -> Result<Mesh> {
    let np = cells + 1;
    let h = (hi - lo) / cells as f64;
    let mut coords = Vec::with_capacity(np * np * 2);
    for j in 0..np {
        for i in 0..np {
            coords.push(lo + i as f64 * h);
            coords.push(lo + j as f64 * h);
        }
    }
    let id = |i: usize, j: usize| j * np + i;
    let mut tris = Vec::with_capacity(cells * cells * 6);
    for j in 0..cells {
        for i in 0..cells {
            tris.extend([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            tris.extend([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    Mesh::new(2, coords, tris)
}

/// Unit square `[0, 1]²`.
pub fn unit_square(cells: usize) -> Result<Mesh> {
    square(cells, 0.0, 1.0)
}

/// Disk of radius `radius` centred at the origin, built from `rings`
/// concentric rings; ring `j` carries `6j` vertices on radius `j·radius/rings`.
/// The outer ring lies on the circle. Vertices: `1 + 3L(L+1)`, triangles: `6L²`.
pub fn disk(rings: usize, radius: f64) -> Result<Mesh> {
    let mut coords = vec![0.0, 0.0];
    let mut start = vec![0usize];
    for j in 1..=rings {
        start.push(coords.len() / 2);
        let r = radius * j as f64 / rings as f64;
        for i in 0..6 * j {
            let t = 2.0 * PI * i as f64 / (6 * j) as f64;
            coords.push(r * t.cos());
            coords.push(r * t.sin());
        }
    }
    let mut tris = Vec::with_capacity(6 * rings * rings * 3);
    for j in 1..=rings {
        let outer = 6 * j;
        let o = |i: usize| start[j] + i % outer;
        if j == 1 {
            for i in 0..outer {
                tris.extend([0, o(i), o(i + 1)]);
            }
            continue;
        }
        let inner = 6 * (j - 1);
        let p = |i: usize| start[j - 1] + i % inner;
        // Zip the two rings together by angle; each step advances one ring.
        let (mut a, mut b) = (0usize, 0usize);
        while a < inner || b < outer {
            let next_inner = (a + 1) as f64 / inner as f64;
            let next_outer = (b + 1) as f64 / outer as f64;
            if b < outer && (a == inner || next_outer < next_inner) {
                tris.extend([p(a), o(b), o(b + 1)]);
                b += 1;
            } else {
                tris.extend([p(a), o(b), p(a + 1)]);
                a += 1;
            }
        }
    }
    Mesh::new(2, coords, tris)
}

/// Structured tetrahedral mesh of `[lo, hi]³`; each cube is split into six
/// tetrahedra sharing its main diagonal.
pub fn cube(cells: usize, lo: f64, hi: f64) -> Result<Mesh> {
    let np = cells + 1;
    let h = (hi - lo) / cells as f64;
    let mut coords = Vec::with_capacity(np * np * np * 3);
    for k in 0..np {
        for j in 0..np {
            for i in 0..np {
                coords.extend([lo + i as f64 * h, lo + j as f64 * h, lo + k as f64 * h]);
            }
        }
    }
    let id = |i: usize, j: usize, k: usize| (k * np + j) * np + i;
    // Monotone lattice paths from (0,0,0) to (1,1,1): the Kuhn subdivision.
    const PATHS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(cells.pow(3) * 24);
    for k in 0..cells {
        for j in 0..cells {
            for i in 0..cells {
                for path in PATHS {
                    let mut p = [i, j, k];
                    tets.push(id(p[0], p[1], p[2]));
                    for axis in path {
                        p[axis] += 1;
                        tets.push(id(p[0], p[1], p[2]));
                    }
                }
            }
        }
    }
    Mesh::new(3, coords, tets)
}

/// Moves every interior vertex by a uniform random offset of at most
/// `amplitude` times the shortest incident edge in each coordinate.
/// Boundary vertices stay fixed, so the domain does not change.
pub fn jitter(mesh: &Mesh, amplitude: f64, seed: u64) -> Result<Mesh> {
    let dim = mesh.dim();
    let nv = mesh.num_vertices();
    let mut min_edge = vec![f64::INFINITY; nv];
    for cell in mesh.elements() {
        for (a, &u) in cell.iter().enumerate() {
            for &v in &cell[a + 1..] {
                let len = dist(mesh.vertex(u), mesh.vertex(v));
                min_edge[u] = min_edge[u].min(len);
                min_edge[v] = min_edge[v].min(len);
            }
        }
    }
    let mut rng = rng_stream(seed, 7);
    let mut coords = Vec::with_capacity(nv * dim);
    for v in 0..nv {
        for &x in mesh.vertex(v) {
            let shift = if mesh.is_boundary(v) {
                0.0
            } else {
                amplitude * min_edge[v] * rng.random_range(-1.0..1.0)
            };
            coords.push(x + shift);
        }
    }
    let cells: Vec<usize> = mesh.elements().flatten().copied().collect();
    Mesh::new(dim, coords, cells)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_counts() {
        let m = unit_square(4).unwrap();
        assert_eq!(m.num_vertices(), 25);
        assert_eq!(m.num_elements(), 32);
        assert_eq!(m.num_interior(), 9);
        let area: f64 = m.volumes().iter().sum();
        assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disk_counts_and_area() {
        for rings in [1, 2, 5] {
            let m = disk(rings, 1.0).unwrap();
            assert_eq!(m.num_vertices(), 1 + 3 * rings * (rings + 1));
            assert_eq!(m.num_elements(), 6 * rings * rings);
            assert_eq!(m.num_interior(), 1 + 3 * rings * (rings - 1));
            // Inscribed polygon with 6L sides.
            let sides = (6 * rings) as f64;
            let polygon = 0.5 * sides * (2.0 * PI / sides).sin();
            let area: f64 = m.volumes().iter().sum();
            assert!((area - polygon).abs() < 1e-12, "{area} vs {polygon}");
        }
    }

    #[test]
    fn cube_counts_and_volume() {
        let m = cube(3, -1.0, 1.0).unwrap();
        assert_eq!(m.num_elements(), 6 * 27);
        assert_eq!(m.num_interior(), 8);
        let vol: f64 = m.volumes().iter().sum();
        assert!((vol - 8.0).abs() < 1e-12);
    }

    #[test]
    fn jitter_keeps_boundary_and_area() {
        let m = square(6, -1.0, 1.0).unwrap();
        let j = jitter(&m, 0.25, 3).unwrap();
        assert_eq!(j.num_interior(), m.num_interior());
        let area: f64 = j.volumes().iter().sum();
        assert!((area - 4.0).abs() < 1e-12);
    }
}
