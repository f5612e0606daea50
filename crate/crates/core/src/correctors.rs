//! Correctors, fluxes, flux correctors and the homogenized matrix on the torus.
//!
//! `φ_i` solves `-∇·a(e_i + ∇φ_i) = 0` with mean zero. The centered flux
//! `q_i = a(e_i + ∇φ_i) - a_h e_i` is divergence free, and the skew potential
//! `σ_i` is fixed by the Poisson gauge `-Δσ_{ijk} = D_j q_{ik} - D_k q_{ij}`,
//! where `D` is the forward difference and `Δ = Σ_k D_k^* D_k` is the
//! (negative semidefinite) lattice Laplacian. Applying `Σ_k D_k^*` to the
//! gauge equation and using `∇·q_i = 0` gives `∇·σ_i = q_i` up to the solver
//! residual.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::coefficients::CoefficientField;
use crate::lattice::{div, grad, skew_pairs, Grid, ScalarField, SkewTensorField, VectorField};
use crate::solver::{Domain, Medium, SolveReport, Solver, SolverSettings};
use crate::{reduce, Error, Result};

/// Relative divergence of `q_i` tolerated before the σ gauge is refused.
pub const DIV_RTOL: f64 = 1e-6;
/// Certification threshold for `‖∇·σ_i - q_i‖ / ‖q_i‖`.
pub const SIGMA_RTOL: f64 = 1e-6;

/// Flux norms below this are rounding noise: conductances are at most one, so
/// `1e-12·(#edges)^{1/2}` is far below any genuine flux.
fn noise_floor(g: &Grid) -> f64 {
    1e-12 * ((g.len() * g.dim()) as f64).sqrt()
}

/// One certified property of a computation.
#[derive(Clone, Debug, PartialEq)]
pub struct Certification {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Certification {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Certification {
        Certification { name: name.into(), value, threshold, passed: value <= threshold }
    }
}

#[derive(Clone, Debug)]
pub struct CorrectorSet {
    medium: CoefficientField,
    phi: Vec<ScalarField>,
    sigma: Vec<SkewTensorField>,
    q: Vec<VectorField>,
    a_h: DMatrix<f64>,
    certifications: Vec<Certification>,
    reports: Vec<SolveReport>,
}

impl CorrectorSet {
    pub fn medium(&self) -> &CoefficientField {
        &self.medium
    }

    pub fn grid(&self) -> &Grid {
        self.medium.grid()
    }

    pub fn dim(&self) -> usize {
        self.medium.dim()
    }

    pub fn phi(&self, i: usize) -> &ScalarField {
        &self.phi[i]
    }

    pub fn sigma(&self, i: usize) -> &SkewTensorField {
        &self.sigma[i]
    }

    pub fn q(&self, i: usize) -> &VectorField {
        &self.q[i]
    }

    pub fn a_h(&self) -> &DMatrix<f64> {
        &self.a_h
    }

    pub fn certifications(&self) -> &[Certification] {
        &self.certifications
    }

    pub fn all_certified(&self) -> bool {
        self.certifications.iter().all(|c| c.passed)
    }

    /// Reports of the `d` corrector solves followed by the σ solves.
    pub fn solve_reports(&self) -> &[SolveReport] {
        &self.reports
    }

    /// `φ` and `σ` of every direction written after a header carrying `a_h`
    /// and the certification residuals. Sites in lexicographic order.
    pub fn write_dump<W: Write>(&self, out: &mut W) -> Result<()> {
        let d = self.dim();
        writeln!(out, "# homoglab corrector set")?;
        writeln!(out, "dim {}", d)?;
        writeln!(out, "side {}", self.grid().side())?;
        writeln!(out, "lambda {}", self.medium.lambda())?;
        writeln!(out, "kind {}", self.medium.kind())?;
        writeln!(out, "seed {}", self.medium.seed())?;
        for i in 0..d {
            let row: Vec<String> = (0..d).map(|j| self.a_h[(i, j)].to_string()).collect();
            writeln!(out, "a_h {}", row.join(" "))?;
        }
        for c in &self.certifications {
            writeln!(out, "cert {} {} {} {}", c.name, c.value, c.threshold, c.passed)?;
        }
        for i in 0..d {
            writeln!(out, "phi {}", i + 1)?;
            for v in self.phi[i].values() {
                writeln!(out, "{v}")?;
            }
            for (j, k) in skew_pairs(d) {
                writeln!(out, "sigma {} {} {}", i + 1, j + 1, k + 1)?;
                for v in self.sigma[i].pair_values(j, k) {
                    writeln!(out, "{v}")?;
                }
            }
        }
        Ok(())
    }
}

fn corrector_solver(a: &CoefficientField, settings: SolverSettings) -> Result<Solver> {
    Solver::new(Medium::Field(a), Domain::Torus(*a.grid()), settings)
}

fn check_direction(a: &CoefficientField, i: usize) -> Result<()> {
    if i >= a.dim() {
        return Err(Error::InvalidArgument(format!("direction {i} out of range for d = {}", a.dim())));
    }
    Ok(())
}

/// Mean-zero corrector `φ_i` (directions are 0-based).
pub fn corrector_phi(a: &CoefficientField, i: usize, settings: SolverSettings) -> Result<ScalarField> {
    check_direction(a, i)?;
    let solver = corrector_solver(a, settings)?;
    Ok(solver.solve(Some(&a.column(i)), None, None)?.0)
}

/// `(a_h)_{ji} = mean_x a_j(x) (δ_{ij} + D_j φ_i(x))`.
pub fn homogenized_matrix(a: &CoefficientField, phi: &[ScalarField]) -> Result<DMatrix<f64>> {
    let d = a.dim();
    if phi.len() != d {
        return Err(Error::InvalidArgument(format!("need {d} correctors, got {}", phi.len())));
    }
    let n = a.grid().len() as f64;
    let mut m = DMatrix::zeros(d, d);
    for (i, p) in phi.iter().enumerate() {
        a.grid().ensure_same(p.grid(), "corrector")?;
        let flux = corrected_flux(a, p, i);
        for j in 0..d {
            let col: Vec<f64> = (0..a.grid().len()).map(|x| flux.get(x, j)).collect();
            m[(j, i)] = reduce::sum(&col) / n;
        }
    }
    Ok(m)
}

/// `a ⊙ (e_i + ∇φ_i)`.
fn corrected_flux(a: &CoefficientField, phi: &ScalarField, i: usize) -> VectorField {
    let mut f = grad(phi);
    let d = a.dim();
    f.values_mut().par_iter_mut().enumerate().for_each(|(n, v)| {
        let (x, j) = (n / d, n % d);
        *v = a.get(x, j) * (*v + if i == j { 1.0 } else { 0.0 });
    });
    f
}

/// `q_i = a(e_i + ∇φ_i) - a_h e_i`.
pub fn flux_q(a: &CoefficientField, phi_i: &ScalarField, i: usize, a_h: &DMatrix<f64>) -> Result<VectorField> {
    check_direction(a, i)?;
    a.grid().ensure_same(phi_i.grid(), "corrector")?;
    let d = a.dim();
    let mut q = corrected_flux(a, phi_i, i);
    q.values_mut().iter_mut().enumerate().for_each(|(n, v)| *v -= a_h[(n % d, i)]);
    Ok(q)
}

/// Skew flux corrector with `∇·σ = q`, each component mean zero.
pub fn flux_corrector_sigma(q: &VectorField, settings: SolverSettings) -> Result<(SkewTensorField, Vec<SolveReport>)> {
    let g = *q.grid();
    if !g.is_periodic() {
        return Err(Error::InvalidGrid("flux correctors live on a torus".into()));
    }
    let div_norm = div(q).norm();
    let threshold = (DIV_RTOL * q.norm()).max(noise_floor(&g));
    if div_norm > threshold {
        return Err(Error::PreconditionDiv { div_norm, threshold });
    }
    let d = g.dim();
    let solver = Solver::new(Medium::identity(d), Domain::Torus(g), settings)?;
    let mut sigma = SkewTensorField::zeros(g);
    let mut reports = Vec::new();
    for (j, k) in skew_pairs(d) {
        // D_j q_k - D_k q_j
        let rhs = ScalarField::from_fn(g, |x| {
            let i = g.index(x).unwrap();
            let ij = g.neighbor(i, j, 1).unwrap();
            let ik = g.neighbor(i, k, 1).unwrap();
            (q.get(ij, k) - q.get(i, k)) - (q.get(ik, j) - q.get(i, j))
        });
        let (s, rep) = solver.solve(None, Some(&rhs), None)?;
        sigma.set_pair(j, k, s.values());
        reports.push(rep);
    }
    Ok((sigma, reports))
}

/// Solves for all correctors and certifies the defining identities.
pub fn build_corrector_set(a: &CoefficientField, settings: SolverSettings) -> Result<CorrectorSet> {
    let d = a.dim();
    let solver = corrector_solver(a, settings)?;
    let mut phi = Vec::with_capacity(d);
    let mut reports = Vec::new();
    let mut certifications = Vec::new();
    for i in 0..d {
        let rhs = a.column(i);
        let (p, rep) = solver.solve(Some(&rhs), None, None)?;
        // ‖Aφ_i + ∇·(a e_i)‖ relative to ‖∇·(a e_i)‖, absolute when that vanishes
        let b = div(&rhs);
        let ap = solver.operator().apply_field(&p);
        let res: Vec<f64> = ap.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
        let scale = if b.norm() > 0.0 { b.norm() } else { 1.0 };
        certifications.push(Certification::at_most(
            format!("phi{}_residual", i + 1),
            reduce::norm(&res) / scale,
            10.0 * settings.tol,
        ));
        certifications.push(Certification::at_most(
            format!("phi{}_mean", i + 1),
            p.mean().abs(),
            1e-12 * p.values().iter().fold(1.0f64, |m, v| m.max(v.abs())),
        ));
        phi.push(p);
        reports.push(rep);
    }
    let a_h = homogenized_matrix(a, &phi)?;

    let mut q = Vec::with_capacity(d);
    let mut sigma = Vec::with_capacity(d);
    for (i, p) in phi.iter().enumerate() {
        let qi = flux_q(a, p, i, &a_h)?;
        let scale = corrected_flux(a, p, i).norm();
        let mean_dev = qi.mean().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        certifications.push(Certification::at_most(format!("q{}_mean", i + 1), mean_dev, 1e-12));
        certifications.push(Certification::at_most(
            format!("q{}_divergence", i + 1),
            div(&qi).norm() / scale,
            10.0 * settings.tol,
        ));
        let (si, reps) = flux_corrector_sigma(&qi, settings)?;
        certifications.push(Certification::at_most(
            format!("sigma{}_identity", i + 1),
            sigma_identity_error(&si, &qi),
            SIGMA_RTOL,
        ));
        reports.extend(reps);
        q.push(qi);
        sigma.push(si);
    }

    let asym = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| (a_h[(i, j)] - a_h[(j, i)]).abs())
        .fold(0.0, f64::max);
    certifications.push(Certification::at_most("ah_symmetry", asym, 1e-8));
    let sym = (&a_h + a_h.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let violation = (a.lambda() - eig.min()).max(eig.max() - 1.0).max(0.0);
    certifications.push(Certification::at_most("ah_ellipticity", violation, 1e-10));

    Ok(CorrectorSet { medium: a.clone(), phi, sigma, q, a_h, certifications, reports })
}

/// `‖∇·σ - q‖ / ‖q‖`, with `‖q‖` floored at the rounding level.
///
/// The rounding-level mean of `q` (certified separately) is removed first:
/// a divergence of a periodic field cannot carry a constant.
pub fn sigma_identity_error(sigma: &SkewTensorField, q: &VectorField) -> f64 {
    let ds = sigma.divergence();
    let d = q.grid().dim();
    let mean = q.mean();
    let diff: Vec<f64> = ds
        .values()
        .iter()
        .zip(q.values())
        .enumerate()
        .map(|(n, (x, y))| x - (y - mean[n % d]))
        .collect();
    reduce::norm(&diff) / q.norm().max(noise_floor(q.grid()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{make_constant, sample, EnsembleSpec, Family};
    use crate::lattice::Site;
    use crate::solver::Preconditioner;

    fn settings() -> SolverSettings {
        SolverSettings { preconditioner: Preconditioner::Multigrid, ..Default::default() }
    }

    fn checkerboard(d: usize, l: usize, seed: u64) -> CoefficientField {
        let spec = EnsembleSpec::new(
            0.25,
            Family::Checkerboard { values: [0.25, 1.0], probability: 0.5 },
        );
        sample(&spec, seed, Grid::torus(d, l).unwrap()).unwrap()
    }

    #[test]
    fn constant_medium_has_trivial_correctors() {
        let a = make_constant(Grid::torus(3, 8).unwrap(), 0.2, &[0.3, 0.5, 0.9]).unwrap();
        let set = build_corrector_set(&a, settings()).unwrap();
        for i in 0..3 {
            assert!(set.phi(i).values().iter().all(|&v| v == 0.0));
            assert!(set.sigma(i).values().iter().all(|&v| v.abs() < 1e-15));
            assert!(set.q(i).values().iter().all(|&v| v.abs() < 1e-14));
        }
        let expect = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.3, 0.5, 0.9]));
        assert!((set.a_h() - expect).abs().max() < 1e-14);
        for c in set.certifications() {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn layered_series_and_parallel_oracle() {
        let spec = EnsembleSpec::new(0.25, Family::Layered { period: 2, values: [0.25, 1.0] });
        let a = sample(&spec, 0, Grid::torus(2, 16).unwrap()).unwrap();
        let set = build_corrector_set(&a, settings()).unwrap();
        let lam = 0.25;
        assert!((set.a_h()[(0, 0)] - 2.0 * lam / (1.0 + lam)).abs() < 1e-8);
        assert!((set.a_h()[(1, 1)] - (1.0 + lam) / 2.0).abs() < 1e-8);
        assert!(set.a_h()[(0, 1)].abs() < 1e-8);
        // φ_1 depends on x_1 only and makes the series current uniform
        let g = *a.grid();
        for i in 0..g.len() {
            let x = g.site(i);
            let y = Site::new(&[x.0[0], x.0[1] + 3]);
            assert!((set.phi(0).values()[i] - set.phi(0).at(y).unwrap()).abs() < 1e-9);
            assert!(set.q(0).get(i, 0).abs() < 1e-9);
        }
        // the parallel direction needs no correction
        assert!(set.phi(1).values().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn sigma_is_a_stream_function_in_two_dimensions() {
        let a = checkerboard(2, 32, 4);
        let set = build_corrector_set(&a, settings()).unwrap();
        let g = *a.grid();
        for i in 0..2 {
            let s = set.sigma(i).pair_values(0, 1);
            let mut worst: f64 = 0.0;
            for x in 0..g.len() {
                let m2 = g.neighbor(x, 1, -1).unwrap();
                let m1 = g.neighbor(x, 0, -1).unwrap();
                // (∇·σ)_1 = σ_12(x) - σ_12(x-e_2),  (∇·σ)_2 = -(σ_12(x) - σ_12(x-e_1))
                worst = worst.max((s[x] - s[m2] - set.q(i).get(x, 0)).abs());
                worst = worst.max((-(s[x] - s[m1]) - set.q(i).get(x, 1)).abs());
            }
            assert!(worst < 1e-7 * set.q(i).norm(), "{worst}");
            assert!(reduce::sum(&s).abs() < 1e-9);
        }
    }

    #[test]
    fn certification_on_checkerboard() {
        for d in [2, 3] {
            let a = checkerboard(d, if d == 2 { 64 } else { 12 }, 9);
            let set = build_corrector_set(&a, settings()).unwrap();
            for c in set.certifications() {
                assert!(c.passed, "{c:?}");
            }
            let eig = set.a_h().clone().symmetric_eigenvalues();
            assert!(eig.min() >= 0.25 && eig.max() <= 1.0);
        }
    }

    #[test]
    fn three_dimensional_sigma_is_skew_and_certified() {
        let a = checkerboard(3, 10, 2);
        let set = build_corrector_set(&a, settings()).unwrap();
        for i in 0..3 {
            let s = set.sigma(i);
            for x in [0, 17, 401] {
                for j in 0..3 {
                    assert_eq!(s.get(x, j, j), 0.0);
                    for k in 0..3 {
                        assert_eq!(s.get(x, j, k), -s.get(x, k, j));
                    }
                }
            }
            assert!(sigma_identity_error(s, set.q(i)) < SIGMA_RTOL);
        }
    }

    #[test]
    fn shift_equivariance() {
        let a = checkerboard(2, 16, 21);
        let z = Site::new(&[5, -3]);
        let set = build_corrector_set(&a, settings()).unwrap();
        let shifted = build_corrector_set(&a.shifted(z), settings()).unwrap();
        for i in 0..2 {
            let expect = set.phi(i).shifted(z);
            for (x, y) in shifted.phi(i).values().iter().zip(expect.values()) {
                assert!((x - y).abs() < 1e-8);
            }
        }
        assert!((set.a_h() - shifted.a_h()).abs().max() < 1e-10);
    }

    #[test]
    fn voigt_reuss_bounds() {
        for seed in 0..4 {
            let a = checkerboard(2, 32, seed);
            let set = build_corrector_set(&a, settings()).unwrap();
            let g = *a.grid();
            for j in 0..2 {
                let vals: Vec<f64> = (0..g.len()).map(|x| a.get(x, j)).collect();
                let n = vals.len() as f64;
                let arith = vals.iter().sum::<f64>() / n;
                let harm = n / vals.iter().map(|v| 1.0 / v).sum::<f64>();
                let ah = set.a_h()[(j, j)];
                assert!(harm <= ah + 1e-12 && ah <= arith + 1e-12, "{harm} {ah} {arith}");
            }
        }
    }

    #[test]
    fn divergent_flux_is_refused() {
        let g = Grid::torus(2, 8).unwrap();
        let q = VectorField::from_fn(g, |x, j| if j == 0 && x.0[0] == 2 { 1.0 } else { 0.0 });
        assert!(matches!(
            flux_corrector_sigma(&q, settings()),
            Err(Error::PreconditionDiv { .. })
        ));
        let (s, _) = flux_corrector_sigma(&VectorField::zeros(g), settings()).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn corrector_phi_matches_set() {
        let a = checkerboard(2, 16, 3);
        let set = build_corrector_set(&a, settings()).unwrap();
        let p = corrector_phi(&a, 1, settings()).unwrap();
        assert_eq!(p.values(), set.phi(1).values());
        assert!(corrector_phi(&a, 2, settings()).is_err());
    }
}
