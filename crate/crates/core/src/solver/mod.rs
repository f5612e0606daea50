//! Preconditioned conjugate gradients for `-∇·A∇u = ∇·g + f`.
//!
//! Two domains are supported. On the torus the operator is singular; the
//! right-hand side must sum to zero and the iteration runs on the mean-zero
//! subspace. On a Dirichlet box the unknowns are the interior sites and the
//! one-site frame around them carries prescribed values (zero by default); the
//! medium is the periodic extension of the torus field, so boxes may exceed
//! the torus.

mod multigrid;
mod operator;

use std::time::Instant;

pub use operator::{Medium, Operator};

use multigrid::Multigrid;

use crate::coefficients::CoefficientField;
use crate::lattice::{div, Grid, ScalarField, Site, VectorField};
use crate::{reduce, Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 50_000;

/// Relative imbalance tolerated in a periodic right-hand side before rejecting it.
const COMPATIBILITY_RTOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Preconditioner {
    #[default]
    Jacobi,
    Multigrid,
}

impl std::str::FromStr for Preconditioner {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "jacobi" => Ok(Preconditioner::Jacobi),
            "multigrid" | "mg" => Ok(Preconditioner::Multigrid),
            other => Err(format!("unknown preconditioner '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    /// Target relative residual `‖b - Au‖ / ‖b‖`.
    pub tol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            preconditioner: Preconditioner::Jacobi,
        }
    }
}

impl SolverSettings {
    pub fn with_tol(tol: f64) -> SolverSettings {
        SolverSettings { tol, ..Default::default() }
    }

    pub fn multigrid(mut self) -> SolverSettings {
        self.preconditioner = Preconditioner::Multigrid;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub wall_time: f64,
    pub converged: bool,
}

/// Cube of interior sites `corner + {0..side-1}^d`, surrounded by a one-site frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoxDomain {
    dim: usize,
    corner: Site,
    side: usize,
}

impl BoxDomain {
    pub fn new(dim: usize, corner: Site, side: usize) -> Result<BoxDomain> {
        if side == 0 {
            return Err(Error::InvalidArgument("box side must be positive".into()));
        }
        Grid::window(dim, corner, side + 2)?;
        Ok(BoxDomain { dim, corner, side })
    }

    /// Interior `{x : max_j |x_j - c_j| ≤ half}`.
    pub fn centered(dim: usize, center: Site, half: usize) -> Result<BoxDomain> {
        let corner = center.minus(Site::new(&vec![half as i64; dim]));
        BoxDomain::new(dim, corner, 2 * half + 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn corner(&self) -> Site {
        self.corner
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Window holding the interior plus its frame.
    pub fn frame_grid(&self) -> Grid {
        let origin = self.corner.minus(Site::new(&vec![1; self.dim]));
        Grid::window(self.dim, origin, self.side + 2).expect("validated at construction")
    }

    pub fn is_interior(&self, x: Site) -> bool {
        (0..self.dim).all(|j| {
            let t = x.0[j] - self.corner.0[j];
            t >= 0 && t < self.side as i64
        })
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        let g = self.frame_grid();
        (0..g.len()).map(|i| self.is_interior(g.site(i))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Domain {
    Torus(Grid),
    Box(BoxDomain),
}

impl Domain {
    pub fn grid(&self) -> Grid {
        match self {
            Domain::Torus(g) => *g,
            Domain::Box(b) => b.frame_grid(),
        }
    }

    /// Smallest nonzero eigenvalue of the unit-coefficient operator (Poincaré constant⁻²).
    pub fn spectral_gap(&self) -> f64 {
        match self {
            Domain::Torus(g) => 4.0 * (std::f64::consts::PI / g.side() as f64).sin().powi(2),
            Domain::Box(b) => {
                let s = (std::f64::consts::PI / (2.0 * (b.side + 1) as f64)).sin();
                4.0 * b.dim as f64 * s * s
            }
        }
    }
}

/// A single solve request.
#[derive(Clone, Copy, Debug)]
pub struct SolveRequest<'a> {
    pub medium: Medium<'a>,
    pub rhs_g: Option<&'a VectorField>,
    pub rhs_f: Option<&'a ScalarField>,
    /// Dirichlet values on the frame of a box (ignored on the interior).
    pub boundary: Option<&'a ScalarField>,
    pub domain: Domain,
    pub settings: SolverSettings,
}

enum Precond {
    Jacobi(Vec<f64>),
    Multigrid(Box<Multigrid>),
}

/// An assembled operator with its preconditioner, reusable across right-hand sides.
pub struct Solver {
    op: Operator,
    precond: Precond,
    domain: Domain,
    settings: SolverSettings,
    lambda: f64,
}

impl Solver {
    pub fn new(medium: Medium<'_>, domain: Domain, settings: SolverSettings) -> Result<Solver> {
        if !(settings.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive ({})", settings.tol)));
        }
        let grid = domain.grid();
        let mask = match &domain {
            Domain::Torus(_) => None,
            Domain::Box(b) => {
                if b.dim != medium.dim() {
                    return Err(Error::GridMismatch("box and medium dimensions differ".into()));
                }
                Some(b.interior_mask())
            }
        };
        let op = Operator::new(medium, grid, mask)?;
        let precond = match settings.preconditioner {
            Preconditioner::Jacobi => Precond::Jacobi(op.diagonal()),
            Preconditioner::Multigrid => Precond::Multigrid(Box::new(Multigrid::new(&op))),
        };
        Ok(Solver { op, precond, domain, settings, lambda: medium.lambda() })
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    pub fn grid(&self) -> &Grid {
        self.op.grid()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    fn periodic(&self) -> bool {
        matches!(self.domain, Domain::Torus(_))
    }

    /// `‖∇u‖ ≤ λ⁻¹ (‖g‖ + μ^{-1/2} ‖f‖)`, μ the spectral gap of the domain.
    pub fn energy_bound(&self, g: Option<&VectorField>, f: Option<&ScalarField>) -> f64 {
        let gn = g.map_or(0.0, |g| g.norm());
        let fnorm = f.map_or(0.0, |f| f.norm());
        (gn + fnorm / self.domain.spectral_gap().sqrt()) / self.lambda
    }

    /// Assembles `∇·g + f` (interior rows only on a box) and lifts boundary data.
    fn assemble(
        &self,
        g: Option<&VectorField>,
        f: Option<&ScalarField>,
        boundary: Option<&ScalarField>,
    ) -> Result<Vec<f64>> {
        let grid = *self.grid();
        let mut b = vec![0.0; grid.len()];
        if let Some(g) = g {
            grid.ensure_same(g.grid(), "rhs_g")?;
            for (x, v) in b.iter_mut().zip(div(g).values()) {
                *x += v;
            }
        }
        if let Some(f) = f {
            grid.ensure_same(f.grid(), "rhs_f")?;
            for (x, v) in b.iter_mut().zip(f.values()) {
                *x += v;
            }
        }
        if let Some(bd) = boundary {
            if self.periodic() {
                return Err(Error::InvalidArgument("boundary data on a torus".into()));
            }
            grid.ensure_same(bd.grid(), "boundary")?;
            let lift: Vec<f64> = (0..grid.len())
                .map(|i| if self.op.is_unknown(i) { 0.0 } else { bd.values()[i] })
                .collect();
            let mut a_lift = vec![0.0; grid.len()];
            self.op.apply(&lift, &mut a_lift);
            for (x, v) in b.iter_mut().zip(&a_lift) {
                *x -= v;
            }
        }
        for (i, x) in b.iter_mut().enumerate() {
            if !self.op.is_unknown(i) {
                *x = 0.0;
            }
        }
        if self.periodic() {
            let s = reduce::sum(&b);
            let scale: f64 = b.iter().map(|v| v.abs()).sum();
            if s.abs() > COMPATIBILITY_RTOL * scale {
                return Err(Error::NonCompatibleRhs { sum: s });
            }
            let mean = s / b.len() as f64;
            b.iter_mut().for_each(|v| *v -= mean);
        }
        Ok(b)
    }

    pub fn solve(
        &self,
        g: Option<&VectorField>,
        f: Option<&ScalarField>,
        boundary: Option<&ScalarField>,
    ) -> Result<(ScalarField, SolveReport)> {
        let start = Instant::now();
        let b = self.assemble(g, f, boundary)?;
        let (mut x, iterations, rel, converged) = self.pcg(&b);
        if let Some(bd) = boundary {
            for (i, v) in x.iter_mut().enumerate() {
                if !self.op.is_unknown(i) {
                    *v = bd.values()[i];
                }
            }
        }
        let report = SolveReport {
            iterations,
            relative_residual: rel,
            wall_time: start.elapsed().as_secs_f64(),
            converged,
        };
        let u = ScalarField::new(*self.grid(), x)?;
        if converged {
            Ok((u, report))
        } else {
            Err(Error::MaxIterExceeded { best: Box::new((u, report)) })
        }
    }

    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        match &self.precond {
            Precond::Jacobi(diag) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(diag) {
                    *zi = ri / di;
                }
                for (i, zi) in z.iter_mut().enumerate() {
                    if !self.op.is_unknown(i) {
                        *zi = 0.0;
                    }
                }
            }
            Precond::Multigrid(mg) => mg.apply(r, z),
        }
        if self.periodic() {
            project_mean(z);
        }
    }

    fn true_residual(&self, b: &[f64], x: &[f64], r: &mut [f64]) {
        self.op.apply(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        if self.periodic() {
            project_mean(r);
        }
    }

    /// Returns `(x, iterations, relative residual, converged)`.
    fn pcg(&self, b: &[f64]) -> (Vec<f64>, usize, f64, bool) {
        let n = b.len();
        let bnorm = reduce::norm(b);
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return (x, 0, 0.0, true);
        }
        let target = self.settings.tol * bnorm;
        let mut r = b.to_vec();
        let mut z = vec![0.0; n];
        let mut q = vec![0.0; n];
        let mut iterations = 0;
        // outer loop restarts from the true residual if the recurrence drifted
        loop {
            self.precondition(&r, &mut z);
            let mut p = z.clone();
            let mut rz = reduce::dot(&r, &z);
            while iterations < self.settings.max_iter {
                if reduce::norm(&r) <= 0.5 * target || rz == 0.0 {
                    break;
                }
                self.op.apply(&p, &mut q);
                let pq = reduce::dot(&p, &q);
                if !(pq > 0.0) {
                    break;
                }
                let alpha = rz / pq;
                x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
                r.iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= alpha * qi);
                self.precondition(&r, &mut z);
                let rz_new = reduce::dot(&r, &z);
                let beta = rz_new / rz;
                rz = rz_new;
                p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
                iterations += 1;
            }
            if self.periodic() {
                project_mean(&mut x);
            }
            self.true_residual(b, &x, &mut r);
            let rel = reduce::norm(&r) / bnorm;
            if rel <= self.settings.tol {
                return (x, iterations, rel, true);
            }
            if iterations >= self.settings.max_iter {
                return (x, iterations, rel, false);
            }
            // stagnation guard: a restart that cannot improve ends the solve
            if rz == 0.0 {
                return (x, iterations, rel, false);
            }
        }
    }
}

fn project_mean(v: &mut [f64]) {
    let mean = reduce::sum(v) / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Solves a single request; see [`Solver`] for repeated solves with one operator.
pub fn solve(req: &SolveRequest<'_>) -> Result<(ScalarField, SolveReport)> {
    if let (Medium::Field(a), Domain::Torus(g)) = (&req.medium, &req.domain) {
        g.ensure_same(a.grid(), "torus domain vs medium")?;
    }
    let solver = Solver::new(req.medium, req.domain, req.settings)?;
    solver.solve(req.rhs_g, req.rhs_f, req.boundary)
}

/// `-∇·(a ⊙ ∇u)` on the torus.
pub fn apply_operator(a: &CoefficientField, u: &ScalarField) -> Result<ScalarField> {
    a.grid().ensure_same(u.grid(), "apply_operator")?;
    let op = Operator::new(Medium::Field(a), *a.grid(), None)?;
    Ok(op.apply_field(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{make_constant, sample, EnsembleSpec, Family};
    use crate::lattice::grad;

    fn checkerboard(l: usize, seed: u64) -> CoefficientField {
        let spec = EnsembleSpec::new(
            0.25,
            Family::Checkerboard { values: [0.25, 1.0], probability: 0.5 },
        );
        sample(&spec, seed, Grid::torus(2, l).unwrap()).unwrap()
    }

    fn point_dipole(g: Grid, at: Site, j: usize) -> VectorField {
        let k = g.index(at).unwrap();
        let mut v = VectorField::zeros(g);
        v.set(k, j, 1.0);
        v
    }

    #[test]
    fn laplacian_column() {
        let g = Grid::torus(2, 5).unwrap();
        let a = make_constant(g, 0.5, &[1.0, 1.0]).unwrap();
        let u = ScalarField::from_fn(g, |x| if x == Site::ORIGIN { 1.0 } else { 0.0 });
        let au = apply_operator(&a, &u).unwrap();
        for i in 0..g.len() {
            let d = g.distance(g.site(i), Site::ORIGIN);
            let expect = if d == 0.0 {
                4.0
            } else if d == 1.0 {
                -1.0
            } else {
                0.0
            };
            assert_eq!(au.values()[i], expect);
        }
        let c = ScalarField::from_fn(g, |_| 3.0);
        assert!(apply_operator(&a, &c).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn operator_output_sums_to_zero() {
        let a = checkerboard(8, 3);
        let u = ScalarField::from_fn(*a.grid(), |x| (x.0[0] as f64 * 1.3).sin() + x.0[1] as f64);
        let au = apply_operator(&a, &u).unwrap();
        assert!(reduce::sum(au.values()).abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = checkerboard(8, 3);
        let u = ScalarField::zeros(Grid::torus(2, 6).unwrap());
        assert!(matches!(apply_operator(&a, &u), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let a = checkerboard(8, 3);
        let req = SolveRequest {
            medium: Medium::Field(&a),
            rhs_g: None,
            rhs_f: None,
            boundary: None,
            domain: Domain::Torus(*a.grid()),
            settings: SolverSettings::default(),
        };
        let (u, rep) = solve(&req).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn incompatible_source_is_rejected() {
        let a = checkerboard(8, 3);
        let f = ScalarField::from_fn(*a.grid(), |_| 1.0);
        let req = SolveRequest {
            medium: Medium::Field(&a),
            rhs_g: None,
            rhs_f: Some(&f),
            boundary: None,
            domain: Domain::Torus(*a.grid()),
            settings: SolverSettings::default(),
        };
        assert!(matches!(solve(&req), Err(Error::NonCompatibleRhs { .. })));
    }

    #[test]
    fn dipole_solve_certifies_residual_and_energy() {
        let g = Grid::torus(2, 16).unwrap();
        let a = make_constant(g, 0.5, &[1.0, 1.0]).unwrap();
        let rhs = point_dipole(g, Site::new(&[3, 5]), 0);
        let (u, rep) = solve(&SolveRequest {
            medium: Medium::Field(&a),
            rhs_g: Some(&rhs),
            rhs_f: None,
            boundary: None,
            domain: Domain::Torus(g),
            settings: SolverSettings::default(),
        })
        .unwrap();
        let au = apply_operator(&a, &u).unwrap();
        let dg = div(&rhs);
        let res: Vec<f64> = au.values().iter().zip(dg.values()).map(|(x, y)| x - y).collect();
        assert!(reduce::norm(&res) <= 1e-10 * dg.norm());
        assert!(rep.relative_residual <= 1e-10);
        assert!(u.mean().abs() < 1e-14);
        let solver = Solver::new(Medium::Field(&a), Domain::Torus(g), SolverSettings::default())
            .unwrap();
        assert!(grad(&u).norm() <= solver.energy_bound(Some(&rhs), None));
    }

    #[test]
    fn energy_estimate_with_source_term() {
        let a = checkerboard(16, 7);
        let g = *a.grid();
        let rhs_g = VectorField::from_fn(g, |x, j| ((x.0[0] * 5 + x.0[1] + j as i64) as f64).cos());
        let rhs_f = ScalarField::from_fn(g, |x| ((x.0[0] - 2 * x.0[1]) as f64 * 0.7).sin());
        let f_mean = rhs_f.mean();
        let rhs_f = ScalarField::from_fn(g, |x| rhs_f.at(x).unwrap() - f_mean);
        let solver = Solver::new(Medium::Field(&a), Domain::Torus(g), SolverSettings::default())
            .unwrap();
        let (u, _) = solver.solve(Some(&rhs_g), Some(&rhs_f), None).unwrap();
        assert!(grad(&u).norm() <= solver.energy_bound(Some(&rhs_g), Some(&rhs_f)));
    }

    #[test]
    fn preconditioners_agree() {
        let a = checkerboard(32, 11);
        let g = *a.grid();
        let rhs = point_dipole(g, Site::new(&[4, 9]), 1);
        let tol = 1e-10;
        let mut sols = Vec::new();
        for pc in [Preconditioner::Jacobi, Preconditioner::Multigrid] {
            let settings = SolverSettings { tol, preconditioner: pc, ..Default::default() };
            let (u, _) = Solver::new(Medium::Field(&a), Domain::Torus(g), settings)
                .unwrap()
                .solve(Some(&rhs), None, None)
                .unwrap();
            sols.push(u);
        }
        let diff: f64 = sols[0]
            .values()
            .iter()
            .zip(sols[1].values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let scale = sols[0].values().iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(diff <= 10.0 * tol * scale.max(1.0), "{diff}");
    }

    #[test]
    fn multigrid_is_much_faster_than_jacobi() {
        let a = checkerboard(64, 2);
        let g = *a.grid();
        let rhs = point_dipole(g, Site::new(&[10, 10]), 0);
        let iters: Vec<usize> = [Preconditioner::Jacobi, Preconditioner::Multigrid]
            .into_iter()
            .map(|pc| {
                let settings = SolverSettings { preconditioner: pc, ..Default::default() };
                let solver = Solver::new(Medium::Field(&a), Domain::Torus(g), settings).unwrap();
                solver.solve(Some(&rhs), None, None).unwrap().1.iterations
            })
            .collect();
        assert!(iters[1] * 4 < iters[0], "{iters:?}");
    }

    #[test]
    fn dirichlet_box_with_affine_data_is_exact_for_constant_medium() {
        let g = Grid::torus(2, 8).unwrap();
        let a = make_constant(g, 0.5, &[0.7, 1.0]).unwrap();
        let bx = BoxDomain::centered(2, Site::new(&[2, -3]), 6).unwrap();
        let frame = bx.frame_grid();
        let data = ScalarField::from_fn(frame, |x| 0.3 * x.0[0] as f64 - 1.2 * x.0[1] as f64 + 2.0);
        for pc in [Preconditioner::Jacobi, Preconditioner::Multigrid] {
            let settings = SolverSettings { preconditioner: pc, ..Default::default() };
            let solver = Solver::new(Medium::Field(&a), Domain::Box(bx), settings).unwrap();
            let (u, _) = solver.solve(None, None, Some(&data)).unwrap();
            for (x, y) in u.values().iter().zip(data.values()) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn box_solution_vanishes_on_frame() {
        let a = checkerboard(16, 5);
        let bx = BoxDomain::centered(2, Site::ORIGIN, 20).unwrap();
        let frame = bx.frame_grid();
        let rhs = point_dipole(frame, Site::ORIGIN, 1);
        let settings = SolverSettings::default().multigrid();
        let solver = Solver::new(Medium::Field(&a), Domain::Box(bx), settings).unwrap();
        let (u, rep) = solver.solve(Some(&rhs), None, None).unwrap();
        assert!(rep.relative_residual <= 1e-10);
        for i in 0..frame.len() {
            if !bx.is_interior(frame.site(i)) {
                assert_eq!(u.values()[i], 0.0);
            }
        }
    }

    #[test]
    fn max_iter_returns_best_iterate() {
        let a = checkerboard(32, 1);
        let g = *a.grid();
        let rhs = point_dipole(g, Site::ORIGIN, 0);
        let settings = SolverSettings { max_iter: 3, ..Default::default() };
        let solver = Solver::new(Medium::Field(&a), Domain::Torus(g), settings).unwrap();
        match solver.solve(Some(&rhs), None, None) {
            Err(Error::MaxIterExceeded { best }) => {
                assert!(!best.1.converged);
                assert!(best.1.iterations <= 3);
            }
            other => panic!("expected MaxIterExceeded, got {other:?}"),
        }
    }

    #[test]
    fn three_dimensional_multigrid() {
        let spec = EnsembleSpec::new(
            0.25,
            Family::Checkerboard { values: [0.25, 1.0], probability: 0.5 },
        );
        let a = sample(&spec, 9, Grid::torus(3, 16).unwrap()).unwrap();
        let g = *a.grid();
        let rhs = point_dipole(g, Site::new(&[1, 2, 3]), 2);
        let settings = SolverSettings::default().multigrid();
        let solver = Solver::new(Medium::Field(&a), Domain::Torus(g), settings).unwrap();
        let (_, rep) = solver.solve(Some(&rhs), None, None).unwrap();
        assert!(rep.converged && rep.iterations < 60, "{rep:?}");
    }
}
