//! The stencil of `-∇·A∇` for edge conductances or a constant matrix.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::coefficients::CoefficientField;
use crate::lattice::{Grid, NeighborTable, ScalarField, VectorField, MAX_DIM, NONE};
use crate::{reduce, Error, Result};

/// The coefficient of an elliptic operator.
#[derive(Clone, Copy, Debug)]
pub enum Medium<'a> {
    /// Heterogeneous edge conductances on a torus, extended periodically.
    Field(&'a CoefficientField),
    /// Constant symmetric matrix acting on the forward gradient at each site.
    Constant { dim: usize, matrix: [[f64; MAX_DIM]; MAX_DIM] },
}

impl<'a> Medium<'a> {
    /// Constant medium from a `d×d` matrix; the matrix is symmetrized.
    pub fn constant(a: &DMatrix<f64>) -> Result<Medium<'static>> {
        let d = a.nrows();
        if a.ncols() != d || !(2..=MAX_DIM).contains(&d) {
            return Err(Error::InvalidArgument(format!(
                "constant medium needs a square 2x2 or 3x3 matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        for j in 0..d {
            for l in 0..d {
                m[j][l] = 0.5 * (a[(j, l)] + a[(l, j)]);
            }
        }
        Ok(Medium::Constant { dim: d, matrix: m })
    }

    pub fn identity(dim: usize) -> Medium<'static> {
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        for (j, row) in m.iter_mut().enumerate().take(dim) {
            row[j] = 1.0;
        }
        Medium::Constant { dim, matrix: m }
    }

    pub fn dim(&self) -> usize {
        match self {
            Medium::Field(a) => a.dim(),
            Medium::Constant { dim, .. } => *dim,
        }
    }

    /// Lower ellipticity bound of the medium.
    pub fn lambda(&self) -> f64 {
        match self {
            Medium::Field(a) => a.lambda(),
            Medium::Constant { dim, matrix } => {
                let m = DMatrix::from_fn(*dim, *dim, |i, j| matrix[i][j]);
                m.symmetric_eigenvalues().min()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Coeff {
    Edge(Vec<f64>),
    Matrix([[f64; MAX_DIM]; MAX_DIM]),
}

/// Assembled operator on a grid. Rows of non-unknown sites (the frame of a
/// Dirichlet box) are identically zero.
pub struct Operator {
    grid: Grid,
    coeff: Coeff,
    unknown: Option<Vec<bool>>,
    nb: NeighborTable,
}

impl Operator {
    pub(crate) fn new(medium: Medium<'_>, grid: Grid, unknown: Option<Vec<bool>>) -> Result<Operator> {
        if medium.dim() != grid.dim() {
            return Err(Error::GridMismatch(format!(
                "medium dimension {} vs grid dimension {}",
                medium.dim(),
                grid.dim()
            )));
        }
        if let Some(mask) = &unknown {
            if mask.len() != grid.len() {
                return Err(Error::GridMismatch("unknown mask length".into()));
            }
        }
        let d = grid.dim();
        let coeff = match medium {
            Medium::Field(a) => {
                if grid.is_periodic() {
                    grid.ensure_same(a.grid(), "operator grid vs medium")?;
                    Coeff::Edge(a.conductances().to_vec())
                } else {
                    let c = (0..grid.len() * d)
                        .into_par_iter()
                        .map(|n| {
                            let (i, j) = (n / d, n % d);
                            if grid.neighbor(i, j, 1).is_some() {
                                a.at(grid.site(i), j)
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    Coeff::Edge(c)
                }
            }
            Medium::Constant { matrix, .. } => Coeff::Matrix(matrix),
        };
        let nb = grid.neighbor_table();
        Ok(Operator { grid, coeff, unknown, nb })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub(crate) fn is_unknown(&self, i: usize) -> bool {
        self.unknown.as_ref().is_none_or(|m| m[i])
    }

    pub(crate) fn unknown_mask(&self) -> Option<&[bool]> {
        self.unknown.as_deref()
    }

    /// Conductance used for the edge `(x, x+e_j)` by graph-based preconditioners.
    pub(crate) fn edge_weight(&self, i: usize, j: usize) -> f64 {
        if self.nb.plus[j][i] == NONE {
            return 0.0;
        }
        match &self.coeff {
            Coeff::Edge(c) => c[i * self.grid.dim() + j],
            Coeff::Matrix(m) => m[j][j],
        }
    }

    #[inline]
    fn grad_at(&self, u: &[f64], i: usize, j: usize) -> f64 {
        let p = self.nb.plus[j][i];
        if p == NONE {
            0.0
        } else {
            u[p as usize] - u[i]
        }
    }

    /// `(A∇u)_j` at site `i`.
    #[inline]
    fn flux_at(&self, u: &[f64], i: usize, j: usize) -> f64 {
        match &self.coeff {
            Coeff::Edge(c) => c[i * self.grid.dim() + j] * self.grad_at(u, i, j),
            Coeff::Matrix(m) => (0..self.grid.dim()).map(|l| m[j][l] * self.grad_at(u, i, l)).sum(),
        }
    }

    #[inline]
    fn row(&self, u: &[f64], i: usize) -> f64 {
        let mut s = 0.0;
        for j in 0..self.grid.dim() {
            s -= self.flux_at(u, i, j);
            let m = self.nb.minus[j][i];
            if m != NONE {
                s += self.flux_at(u, m as usize, j);
            }
        }
        s
    }

    /// `out = -∇·A∇u` on unknown rows, zero elsewhere.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            *o = if self.is_unknown(i) { self.row(u, i) } else { 0.0 };
        });
    }

    pub fn apply_field(&self, u: &ScalarField) -> ScalarField {
        let mut out = vec![0.0; self.grid.len()];
        self.apply(u.values(), &mut out);
        ScalarField::new(self.grid, out).unwrap()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let d = self.grid.dim();
        (0..self.grid.len())
            .map(|i| {
                if !self.is_unknown(i) {
                    return 1.0;
                }
                let mut s = 0.0;
                for j in 0..d {
                    match &self.coeff {
                        Coeff::Edge(c) => {
                            s += c[i * d + j];
                            let m = self.nb.minus[j][i];
                            if m != NONE {
                                s += c[m as usize * d + j];
                            }
                        }
                        Coeff::Matrix(mat) => {
                            s += mat[j][j] + (0..d).map(|l| mat[j][l]).sum::<f64>();
                        }
                    }
                }
                s
            })
            .collect()
    }

    /// Flux field `A∇u`, component `j` placed on the edge `(x, x+e_j)`.
    pub fn flux(&self, u: &ScalarField) -> VectorField {
        let d = self.grid.dim();
        let vals = (0..self.grid.len() * d)
            .into_par_iter()
            .map(|n| self.flux_at(u.values(), n / d, n % d))
            .collect();
        VectorField::new(self.grid, vals).unwrap()
    }

    /// `B(p, q) = Σ_x ∇p(x) · A ∇q(x)`.
    pub fn bilinear(&self, p: &[f64], q: &[f64]) -> f64 {
        let d = self.grid.dim();
        let terms: Vec<f64> = (0..self.grid.len())
            .into_par_iter()
            .map(|i| (0..d).map(|j| self.grad_at(p, i, j) * self.flux_at(q, i, j)).sum())
            .collect();
        reduce::sum(&terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{make_constant, sample, EnsembleSpec, Family};
    use crate::lattice::{div, grad, Site};

    #[test]
    fn matches_minus_div_a_grad() {
        let g = Grid::torus(2, 6).unwrap();
        let spec = EnsembleSpec::new(
            0.2,
            Family::Checkerboard { values: [0.2, 1.0], probability: 0.5 },
        );
        let a = sample(&spec, 1, g).unwrap();
        let u = ScalarField::from_fn(g, |x| ((x.0[0] * 7 + x.0[1] * 3) as f64).sin());
        let op = Operator::new(Medium::Field(&a), g, None).unwrap();
        let lhs = op.apply_field(&u);
        let mut flux = grad(&u);
        for (v, c) in flux.values_mut().iter_mut().zip(a.conductances()) {
            *v *= c;
        }
        let rhs = div(&flux);
        for (x, y) in lhs.values().iter().zip(rhs.values()) {
            assert!((x + y).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_constant_matrix_agrees_with_edges() {
        let g = Grid::torus(3, 5).unwrap();
        let a = make_constant(g, 0.2, &[0.3, 0.7, 1.0]).unwrap();
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.3, 0.7, 1.0]));
        let e = Operator::new(Medium::Field(&a), g, None).unwrap();
        let c = Operator::new(Medium::constant(&m).unwrap(), g, None).unwrap();
        let u = ScalarField::from_fn(g, |x| (x.0[0] * x.0[1] - x.0[2]) as f64);
        let (p, q) = (e.apply_field(&u), c.apply_field(&u));
        for (x, y) in p.values().iter().zip(q.values()) {
            assert!((x - y).abs() < 1e-13);
        }
        assert_eq!(e.diagonal(), c.diagonal());
    }

    #[test]
    fn full_matrix_operator_is_symmetric() {
        let g = Grid::window(2, Site::new(&[-3, -3]), 7).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[0.8, 0.15, 0.15, 0.5]);
        let mask: Vec<bool> = (0..g.len())
            .map(|i| {
                let x = g.site(i);
                x.0[..2].iter().all(|c| c.abs() < 3)
            })
            .collect();
        let op = Operator::new(Medium::constant(&m).unwrap(), g, Some(mask.clone())).unwrap();
        let n = g.len();
        let mut mat = vec![vec![0.0; n]; n];
        for k in 0..n {
            if !mask[k] {
                continue;
            }
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let mut col = vec![0.0; n];
            op.apply(&e, &mut col);
            for i in 0..n {
                mat[i][k] = col[i];
            }
        }
        let diag = op.diagonal();
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            assert!((mat[i][i] - diag[i]).abs() < 1e-14);
            for k in 0..n {
                if mask[k] {
                    assert!((mat[i][k] - mat[k][i]).abs() < 1e-14);
                }
            }
        }
    }
}
