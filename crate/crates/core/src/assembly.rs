//! Stiffness matrix `A = Dᵀ diag(z ⊗ 1_d) D` and load vector assembly.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::pattern::SparsityPattern;
use nalgebra_sparse::CsrMatrix;

use crate::error::{Error, Result};
use crate::mesh::{GradientOperator, Mesh};

/// Element-average coefficients `p` and the scaling `z_ℓ = |Ω_ℓ| p_ℓ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterField {
    pub p: Vec<f64>,
    pub z: Vec<f64>,
}

impl ParameterField {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Diagonal of `Z²`, one entry per row of `D` (length `k·d`).
    pub fn expanded(&self, dim: usize) -> Vec<f64> {
        self.z.iter().flat_map(|&z| std::iter::repeat_n(z, dim)).collect()
    }
}

/// Builds the scaling from volumes and coefficients; rejects any entry that
/// is not strictly positive and finite.
pub fn scaling_vector(volumes: &[f64], p: &[f64]) -> Result<ParameterField> {
    if p.len() != volumes.len() {
        return Err(Error::DimensionMismatch {
            context: "parameter vector",
            expected: volumes.len(),
            actual: p.len(),
        });
    }
    check_admissible(p)?;
    let z = volumes.iter().zip(p).map(|(v, p)| v * p).collect();
    Ok(ParameterField { p: p.to_vec(), z })
}

pub(crate) fn check_admissible(p: &[f64]) -> Result<()> {
    match p.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        Some(index) => Err(Error::Inadmissible { index, value: p[index] }),
        None => Ok(()),
    }
}

/// Reusable assembler: the sparsity pattern of `A` and the scatter map from
/// row-pair products of `D` into it are computed once per mesh, so each new
/// parameter only costs one pass over the nonzeros.
#[derive(Clone, Debug)]
pub struct StiffnessAssembler {
    dim: usize,
    num_rows: usize,
    pattern: SparsityPattern,
    /// For every row of `D`, the offset into `scatter` of its first pair.
    pair_offsets: Vec<usize>,
    /// `(target value index, D value index p, D value index q)` per pair.
    scatter: Vec<(usize, usize, usize)>,
    d_values: Vec<f64>,
}

impl StiffnessAssembler {
    pub fn new(d: &GradientOperator) -> Self {
        let di = d.interior();
        let n = di.ncols();
        let offs = di.row_offsets();
        let cols = di.col_indices();

        let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); n];
        for r in 0..di.nrows() {
            for p in offs[r]..offs[r + 1] {
                for q in offs[r]..offs[r + 1] {
                    rows_of[cols[p]].push(cols[q]);
                }
            }
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for list in &mut rows_of {
            list.sort_unstable();
            list.dedup();
            col_indices.extend_from_slice(list);
            row_offsets.push(col_indices.len());
        }
        let pattern = SparsityPattern::try_from_offsets_and_indices(n, n, row_offsets, col_indices)
            .expect("pattern built sorted and deduplicated");

        let mut pair_offsets = Vec::with_capacity(di.nrows() + 1);
        let mut scatter = Vec::new();
        pair_offsets.push(0);
        for r in 0..di.nrows() {
            for p in offs[r]..offs[r + 1] {
                let (i, lane) = (cols[p], pattern.lane(cols[p]));
                let base = pattern.major_offsets()[i];
                for q in offs[r]..offs[r + 1] {
                    let pos = base + lane.binary_search(&cols[q]).expect("entry in pattern");
                    scatter.push((pos, p, q));
                }
            }
            pair_offsets.push(scatter.len());
        }

        Self {
            dim: d.dim(),
            num_rows: di.nrows(),
            pattern,
            pair_offsets,
            scatter,
            d_values: di.values().to_vec(),
        }
    }

    /// `A = Σ_r w_r D_(r)ᵀ D_(r)` with `w_r = z_{r / d}`. Row-wise
    /// accumulation makes `A` exactly symmetric.
    pub fn assemble(&self, z: &[f64]) -> Result<CsrMatrix<f64>> {
        if z.len() * self.dim != self.num_rows {
            return Err(Error::DimensionMismatch {
                context: "stiffness scaling",
                expected: self.num_rows / self.dim,
                actual: z.len(),
            });
        }
        let mut values = vec![0.0; self.pattern.nnz()];
        for r in 0..self.num_rows {
            let w = z[r / self.dim];
            for &(pos, p, q) in &self.scatter[self.pair_offsets[r]..self.pair_offsets[r + 1]] {
                values[pos] += w * (self.d_values[p] * self.d_values[q]);
            }
        }
        Ok(CsrMatrix::try_from_pattern_and_values(self.pattern.clone(), values).expect("values match pattern"))
    }
}

/// One-shot stiffness assembly for a parameter field.
pub fn assemble_stiffness(d: &GradientOperator, field: &ParameterField) -> Result<CsrMatrix<f64>> {
    if field.z.len() != d.num_elements() {
        return Err(Error::DimensionMismatch {
            context: "parameter field",
            expected: d.num_elements(),
            actual: field.z.len(),
        });
    }
    StiffnessAssembler::new(d).assemble(&field.z)
}

/// Load vector over interior vertices plus the element forcing it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadVector {
    pub b: Vec<f64>,
    pub f: Vec<f64>,
}

/// Unrestricted contributions `Σ_{ℓ ∋ i} f_ℓ |Ω_ℓ| / (d+1)` for every vertex.
pub fn vertex_loads(mesh: &Mesh, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != mesh.num_elements() {
        return Err(Error::DimensionMismatch {
            context: "forcing vector",
            expected: mesh.num_elements(),
            actual: f.len(),
        });
    }
    if let Some(i) = f.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("forcing entry {i} is not finite")));
    }
    let share = 1.0 / (mesh.dim() + 1) as f64;
    let mut loads = vec![0.0; mesh.num_vertices()];
    for (e, cell) in mesh.elements().enumerate() {
        let c = f[e] * mesh.volumes()[e] * share;
        for &v in cell {
            loads[v] += c;
        }
    }
    Ok(loads)
}

/// Load vector restricted to interior vertices (homogeneous Dirichlet data).
pub fn assemble_load(mesh: &Mesh, f: &[f64]) -> Result<LoadVector> {
    let loads = vertex_loads(mesh, f)?;
    let b = mesh.interior_ids().iter().map(|&v| loads[v]).collect();
    Ok(LoadVector { b, f: f.to_vec() })
}

/// `Ψᵀ b`.
pub fn reduced_load(psi: &DMatrix<f64>, b: &[f64]) -> Result<DVector<f64>> {
    if psi.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "reduced load",
            expected: psi.nrows(),
            actual: b.len(),
        });
    }
    Ok(psi.tr_mul(&DVector::from_column_slice(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::csr_to_dense;
    use crate::mesh::gradient_operator;
    use crate::meshgen::{jitter, unit_square};
    use crate::sampling::rng_stream;
    use rand::Rng;

    /// Independent element-loop assembly of `Σ_ℓ z_ℓ G_ℓᵀ G_ℓ`.
    fn element_loop(mesh: &Mesh, d: &GradientOperator, z: &[f64]) -> DMatrix<f64> {
        let n = mesh.num_interior();
        let full = csr_to_dense(d.full());
        let mut a = DMatrix::zeros(n, n);
        let dim = mesh.dim();
        for (e, cell) in mesh.elements().enumerate() {
            for &u in cell {
                for &v in cell {
                    let (Some(i), Some(j)) = (mesh.interior_column(u), mesh.interior_column(v)) else {
                        continue;
                    };
                    let mut s = 0.0;
                    for comp in 0..dim {
                        s += full[(e * dim + comp, u)] * full[(e * dim + comp, v)];
                    }
                    a[(i, j)] += z[e] * s;
                }
            }
        }
        a
    }

    #[test]
    fn scaling_examples() {
        let mesh = unit_square(4).unwrap();
        let ones = vec![1.0; mesh.num_elements()];
        assert_eq!(scaling_vector(mesh.volumes(), &ones).unwrap().z, mesh.volumes());
        let field = scaling_vector(&[0.5], &[4.0]).unwrap();
        assert_eq!(field.z, vec![2.0]);
        assert_eq!(field.expanded(2), vec![2.0, 2.0]);
        assert!(matches!(
            scaling_vector(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::Inadmissible { index: 1, .. })
        ));
        assert!(scaling_vector(&[0.5], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn triple_product_matches_element_loop() {
        let mesh = jitter(&unit_square(4).unwrap(), 0.2, 1).unwrap();
        let d = gradient_operator(&mesh).unwrap();
        let mut rng = rng_stream(8, 0);
        let p: Vec<f64> = (0..mesh.num_elements()).map(|_| rng.random_range(0.1..10.0)).collect();
        let field = scaling_vector(mesh.volumes(), &p).unwrap();
        let a = csr_to_dense(&assemble_stiffness(&d, &field).unwrap());
        let oracle = element_loop(&mesh, &d, &field.z);
        assert!((&a - &oracle).amax() < 1e-12);
        assert_eq!(a, a.transpose());
    }

    #[test]
    fn five_point_stencil_on_structured_square() {
        let mesh = unit_square(4).unwrap();
        let d = gradient_operator(&mesh).unwrap();
        let field = scaling_vector(mesh.volumes(), &vec![1.0; mesh.num_elements()]).unwrap();
        let a = csr_to_dense(&assemble_stiffness(&d, &field).unwrap());
        // Centre vertex (2,2) has id 12; its grid neighbours are 7, 11, 13, 17.
        let col = |v| mesh.interior_column(v).unwrap();
        let c = col(12);
        assert!((a[(c, c)] - 4.0).abs() < 1e-12);
        for nb in [7, 11, 13, 17] {
            assert!((a[(c, col(nb))] + 1.0).abs() < 1e-12);
        }
        for diag in [6, 8, 16, 18] {
            assert!(a[(c, col(diag))].abs() < 1e-12);
        }
    }

    #[test]
    fn load_examples() {
        let mesh = unit_square(4).unwrap();
        let zero = assemble_load(&mesh, &vec![0.0; mesh.num_elements()]).unwrap();
        assert!(zero.b.iter().all(|&x| x == 0.0));
        let total: f64 = vertex_loads(&mesh, &vec![1.0; mesh.num_elements()])
            .unwrap()
            .iter()
            .sum();
        assert!((total - 1.0).abs() < 1e-12);

        let tri = Mesh::new(2, vec![0., 0., 1., 0., 0., 1.], vec![0, 1, 2]).unwrap();
        let loads = vertex_loads(&tri, &[1.0]).unwrap();
        assert!(loads.iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn reduced_load_examples() {
        let psi = DMatrix::<f64>::identity(5, 3);
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(reduced_load(&psi, &b).unwrap().as_slice(), &[1.0, 2.0, 3.0]);
        assert!(reduced_load(&psi, &[0.0; 5]).unwrap().iter().all(|&x| x == 0.0));
        assert!(reduced_load(&psi, &[0.0; 4]).is_err());
    }
}
