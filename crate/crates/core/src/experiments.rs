//! Decay experiments: the corrected two-scale error, Green's function mixed
//! derivatives, the constant and linear invariants, and the compactness ratio
//! of ensembles of a-harmonic functions.
//!
//! All solves run on a zero-Dirichlet box centred at the origin inside the
//! periodically extended medium. The homogenized comparison `v` is computed by
//! the same discrete solver with the constant matrix `a_h`, so for a constant
//! medium the comparison is exact up to solver tolerance.
//!
//! Discrete two-scale placement. For a site function `v` let
//!
//! ```text
//! (M∇v)_j(x) = D_j v(x) + Σ_i D_j φ_i(x) · D_i v(x + e_j)
//! ```
//!
//! which is the discrete product rule: `∇(v + φ_i D_i v) = M∇v + φ_i ∇D_i v`
//! holds exactly. Its adjoint on edge fields is
//!
//! ```text
//! (M*g)_i(y) = g_i(y) + Σ_j g_j(y - e_j) · D_j φ_i(y - e_j)
//! ```
//!
//! and `v` solves `-∇·a_h∇v = ∇·(M*g)`. With these choices the linear
//! invariants of `u` and `v` agree identically, not just asymptotically.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::coefficients::CoefficientField;
use crate::correctors::CorrectorSet;
use crate::excess::{sample_seed, BoundarySpec, HarmonicSampler};
use crate::fit::{self, LineFit};
use crate::growth::JointGrowth;
use crate::lattice::{cutoff_eta, grad, Ball, Grid, ScalarField, Site, VectorField};
use crate::rng::{self, Stream};
use crate::solver::{BoxDomain, Domain, Medium, Operator, SolveReport, Solver, SolverSettings};
use crate::{reduce, Error, Result};

/// Eigenvalues of the dictionary Gram below this fraction of the largest are dropped.
pub const GRAM_DROP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExperimentOptions {
    pub settings: SolverSettings,
    /// Box side as a multiple of `max |x₀|`.
    pub box_factor: usize,
    /// Repeat with twice the box and report the relative change.
    pub doubling_check: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            settings: SolverSettings::default().multigrid(),
            box_factor: 8,
            doubling_check: false,
        }
    }
}

/// `D_j φ_i(x)` for any global site.
fn dphi(set: &CorrectorSet, i: usize, j: usize, x: Site) -> f64 {
    let p = set.phi(i);
    p.at(x.offset(Site::axis(j, 1))).unwrap() - p.at(x).unwrap()
}

/// `M∇v` on the grid of `v`; edges that need values outside the window are zero.
pub fn corrected_gradient(set: &CorrectorSet, v: &ScalarField) -> VectorField {
    let g = *v.grid();
    let d = g.dim();
    let vals = v.values();
    let dv = |i: usize, j: usize| -> Option<f64> { g.neighbor(i, j, 1).map(|p| vals[p] - vals[i]) };
    VectorField::from_fn(g, |x, j| {
        let i = g.index(x).unwrap();
        let (Some(base), Some(xj)) = (dv(i, j), g.neighbor(i, j, 1)) else {
            return 0.0;
        };
        let mut s = base;
        for k in 0..d {
            let Some(dk) = dv(xj, k) else { return 0.0 };
            s += dphi(set, k, j, x) * dk;
        }
        s
    })
}

/// `M*g`, the right-hand side of the homogenized problem.
pub fn adjoint_two_scale(set: &CorrectorSet, g: &VectorField) -> VectorField {
    let grid = *g.grid();
    let d = grid.dim();
    VectorField::from_fn(grid, |y, i| {
        let idx = grid.index(y).unwrap();
        let mut s = g.get(idx, i);
        for j in 0..d {
            if let Some(m) = grid.neighbor(idx, j, -1) {
                let gj = g.get(m, j);
                if gj != 0.0 {
                    s += gj * dphi(set, i, j, grid.site(m));
                }
            }
        }
        s
    })
}

/// `e = ∇u - M∇v`.
pub fn two_scale_error(set: &CorrectorSet, u: &ScalarField, v: &ScalarField) -> Result<VectorField> {
    u.grid().ensure_same(v.grid(), "u vs v")?;
    let mut e = grad(u);
    let m = corrected_gradient(set, v);
    e.values_mut().iter_mut().zip(m.values()).for_each(|(a, b)| *a -= b);
    Ok(e)
}

/// `φ_i(x) ∇_j D_i v(x)`, the higher-order part of the two-scale expansion.
pub fn higher_order_term(set: &CorrectorSet, v: &ScalarField) -> VectorField {
    let g = *v.grid();
    let d = g.dim();
    let vals = v.values();
    let dv = |i: usize, k: usize| -> Option<f64> { g.neighbor(i, k, 1).map(|p| vals[p] - vals[i]) };
    VectorField::from_fn(g, |x, j| {
        let i = g.index(x).unwrap();
        let Some(xj) = g.neighbor(i, j, 1) else { return 0.0 };
        let mut s = 0.0;
        for k in 0..d {
            let (Some(a), Some(b)) = (dv(xj, k), dv(i, k)) else { return 0.0 };
            s += set.phi(k).at(x).unwrap() * (a - b);
        }
        s
    })
}

/// `∇w` for `w = u - (v + φ_i D_i v)`, i.e. `e - φ_i ∇D_i v`.
pub fn two_scale_error_field(set: &CorrectorSet, u: &ScalarField, v: &ScalarField) -> Result<VectorField> {
    let mut e = two_scale_error(set, u, v)?;
    let h = higher_order_term(set, v);
    e.values_mut().iter_mut().zip(h.values()).for_each(|(a, b)| *a -= b);
    Ok(e)
}

/// Unit-norm random dipole density on the edges leaving `B_r(0)`.
pub fn random_dipole_density(grid: &Grid, r: f64, seed: u64) -> Result<VectorField> {
    let members = Ball::new(Site::ORIGIN, r).members(grid)?;
    let mut g = VectorField::zeros(*grid);
    for &i in &members {
        for j in 0..grid.dim() {
            g.set(i, j, rng::normal(seed, Stream::Source, grid.site(i), j as u64));
        }
    }
    let n = g.norm();
    g.scale(1.0 / n);
    Ok(g)
}

/// `u`, `v` and their data for one source.
#[derive(Clone, Debug)]
pub struct TwoScaleSolution {
    pub domain: BoxDomain,
    pub g: VectorField,
    pub g_adjoint: VectorField,
    pub u: ScalarField,
    pub v: ScalarField,
    pub reports: [SolveReport; 2],
}

/// Heterogeneous and homogenized solvers on one box, reusable across sources.
pub struct TwoScaleSolver<'s> {
    set: &'s CorrectorSet,
    domain: BoxDomain,
    hetero: Solver,
    homog: Solver,
}

impl<'s> TwoScaleSolver<'s> {
    pub fn new(set: &'s CorrectorSet, domain: BoxDomain, settings: SolverSettings) -> Result<TwoScaleSolver<'s>> {
        let hetero = Solver::new(Medium::Field(set.medium()), Domain::Box(domain), settings)?;
        let homog = Solver::new(Medium::constant(set.a_h())?, Domain::Box(domain), settings)?;
        Ok(TwoScaleSolver { set, domain, hetero, homog })
    }

    pub fn grid(&self) -> Grid {
        self.domain.frame_grid()
    }

    pub fn solve(&self, g: VectorField) -> Result<TwoScaleSolution> {
        let g_adjoint = adjoint_two_scale(self.set, &g);
        let (u, ru) = self.hetero.solve(Some(&g), None, None)?;
        let (v, rv) = self.homog.solve(Some(&g_adjoint), None, None)?;
        Ok(TwoScaleSolution { domain: self.domain, g, g_adjoint, u, v, reports: [ru, rv] })
    }
}

/// Error norms against `|x₀|` with the predicted envelope.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayReport {
    pub x0: Vec<Site>,
    pub abscissa: Vec<f64>,
    pub errors: Vec<f64>,
    /// `ln(|x₀|/r_*) / (|x₀|/r_*)^{d+α}` times the fitted prefactor.
    pub envelope: Vec<f64>,
    pub prefactor: f64,
    /// Log-log fit of error against `|x₀|` (at least three positive errors).
    pub fit: Option<LineFit>,
    /// Slope between consecutive abscissae.
    pub slope_running: Vec<Option<f64>>,
    pub alpha: f64,
    pub r_star: f64,
    pub dim: usize,
    pub box_half: usize,
}

impl DecayReport {
    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }

    fn build(x0: &[Site], errors: Vec<f64>, joint: JointGrowth, dim: usize, box_half: usize) -> Result<DecayReport> {
        let abscissa: Vec<f64> = x0.iter().map(|x| x.norm()).collect();
        let shape: Vec<f64> = abscissa
            .iter()
            .map(|&r| {
                let t = r / joint.r_star;
                t.ln() / t.powf(dim as f64 + joint.alpha)
            })
            .collect();
        let logs: Vec<f64> = errors
            .iter()
            .zip(&shape)
            .filter(|(e, s)| **e > 0.0 && **s > 0.0)
            .map(|(e, s)| (e / s).ln())
            .collect();
        let prefactor = if logs.is_empty() { 0.0 } else { (logs.iter().sum::<f64>() / logs.len() as f64).exp() };
        let envelope = shape.iter().map(|s| prefactor * s).collect();
        let (px, py): (Vec<f64>, Vec<f64>) =
            abscissa.iter().zip(&errors).filter(|(_, e)| **e > 0.0).map(|(a, e)| (*a, *e)).unzip();
        let fit = if px.len() >= 3 { Some(fit::log_log(&px, &py)?) } else { None };
        let mut slope_running = vec![None];
        for w in 1..abscissa.len() {
            let (a0, a1, e0, e1) = (abscissa[w - 1], abscissa[w], errors[w - 1], errors[w]);
            slope_running.push(if e0 > 0.0 && e1 > 0.0 && a1 != a0 {
                Some((e1 / e0).ln() / (a1 / a0).ln())
            } else {
                None
            });
        }
        Ok(DecayReport {
            x0: x0.to_vec(),
            abscissa,
            errors,
            envelope,
            prefactor,
            fit,
            slope_running,
            alpha: joint.alpha,
            r_star: joint.r_star,
            dim,
            box_half,
        })
    }
}

fn check_far_field(x0_list: &[Site], r_star: f64) -> Result<()> {
    if x0_list.is_empty() {
        return Err(Error::PreconditionGeometry("empty x0 list".into()));
    }
    for x in x0_list {
        if x.norm() < 4.0 * r_star {
            return Err(Error::PreconditionGeometry(format!(
                "x0 = {:?} has |x0| = {} < 4 r_* = {}",
                x.0,
                x.norm(),
                4.0 * r_star
            )));
        }
    }
    Ok(())
}

fn box_for(dim: usize, x0_list: &[Site], factor: usize, reach: f64) -> Result<(BoxDomain, usize)> {
    let max = x0_list.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let half = ((factor as f64 * max) / 2.0).ceil() as usize;
    let needed = max + reach + 1.0;
    if (half as f64) < needed {
        return Err(Error::PreconditionGeometry(format!(
            "box half-side {half} does not contain the balls around x0 (needs {needed})"
        )));
    }
    Ok((BoxDomain::centered(dim, Site::ORIGIN, half)?, half))
}

/// `(Σ_{B} |e|²)^{1/2}`.
fn ball_energy(e: &VectorField, ball: Ball) -> Result<f64> {
    let members = ball.members(e.grid())?;
    let d = e.grid().dim();
    let s: f64 = members.iter().map(|&i| (0..d).map(|j| e.get(i, j).powi(2)).sum::<f64>()).sum();
    Ok(s.sqrt())
}

#[derive(Clone, Debug)]
pub struct TheoremTReport {
    pub decay: DecayReport,
    /// `max |err(2g) / (2 err(g)) - 1|`.
    pub linearity: f64,
    /// Relative change of the errors when the box is doubled.
    pub doubling_change: Option<f64>,
    pub solution: TwoScaleSolution,
}

fn theorem_t_errors(
    set: &CorrectorSet,
    solver: &TwoScaleSolver<'_>,
    g: VectorField,
    x0_list: &[Site],
    r_star: f64,
) -> Result<(Vec<f64>, TwoScaleSolution)> {
    let gnorm = g.norm();
    let sol = solver.solve(g)?;
    let e = two_scale_error(set, &sol.u, &sol.v)?;
    let errors = x0_list
        .iter()
        .map(|&x| Ok(ball_energy(&e, Ball::new(x, r_star))? / gnorm))
        .collect::<Result<Vec<f64>>>()?;
    Ok((errors, sol))
}

/// Corrected two-scale error on `B_{r_*}(x₀)` for a random unit dipole density on `B_{r_*}(0)`.
pub fn theorem_t_experiment(
    set: &CorrectorSet,
    joint: JointGrowth,
    x0_list: &[Site],
    g_seed: u64,
    opts: ExperimentOptions,
) -> Result<TheoremTReport> {
    let d = set.dim();
    check_far_field(x0_list, joint.r_star)?;
    let (domain, half) = box_for(d, x0_list, opts.box_factor, joint.r_star)?;
    let solver = TwoScaleSolver::new(set, domain, opts.settings)?;
    let g = random_dipole_density(&solver.grid(), joint.r_star, g_seed)?;
    let mut g2 = g.clone();
    g2.scale(2.0);
    let (errors, sol) = theorem_t_errors(set, &solver, g, x0_list, joint.r_star)?;
    // the error norm is normalized by ‖g‖, so linearity means identical normalized errors
    let (errors2, _) = theorem_t_errors(set, &solver, g2, x0_list, joint.r_star)?;
    let linearity = errors
        .iter()
        .zip(&errors2)
        .map(|(a, b)| if *a == 0.0 { b.abs() } else { (b / a - 1.0).abs() })
        .fold(0.0, f64::max);
    let doubling_change = if opts.doubling_check {
        let (big, _) = box_for(d, x0_list, 2 * opts.box_factor, joint.r_star)?;
        let big_solver = TwoScaleSolver::new(set, big, opts.settings)?;
        let g = random_dipole_density(&big_solver.grid(), joint.r_star, g_seed)?;
        let (eb, _) = theorem_t_errors(set, &big_solver, g, x0_list, joint.r_star)?;
        Some(
            errors
                .iter()
                .zip(&eb)
                .map(|(a, b)| if *b == 0.0 { a.abs() } else { (a - b).abs() / b })
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    Ok(TheoremTReport {
        decay: DecayReport::build(x0_list, errors, joint, d, half)?,
        linearity,
        doubling_change,
        solution: sol,
    })
}

/// Invariants of one cutoff radius and direction.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantRow {
    pub r: f64,
    pub k: usize,
    /// `Σ ∇η_r · ((x_k+φ_k) a∇u - u a(e_k+∇φ_k))` in bilinear form.
    pub lhs: f64,
    /// `Σ ∇η_r · (x_k a_h∇v - v a_h e_k)` in bilinear form.
    pub rhs: f64,
    pub mismatch: f64,
    /// `Σ ∇η_r · a∇u` and `Σ ∇η_r · a_h∇v`.
    pub constant_u: f64,
    pub constant_v: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvariantsReport {
    pub rows: Vec<InvariantRow>,
    /// `‖a∇u‖` and `‖a_h∇v‖`, the scales of the constant invariants.
    pub flux_scale_u: f64,
    pub flux_scale_v: f64,
    /// Worst relative spread of the linear invariant across radii.
    pub r_spread: f64,
    /// `-Σ g·(e_k + ∇φ_k)`, the value both linear invariants must take.
    pub predicted: Vec<f64>,
}

impl InvariantsReport {
    pub fn worst_constant(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.constant_u.abs() / self.flux_scale_u).max(r.constant_v.abs() / self.flux_scale_v.max(f64::MIN_POSITIVE)))
            .fold(0.0, f64::max)
    }

    pub fn worst_mismatch(&self) -> f64 {
        self.rows.iter().map(|r| r.mismatch).fold(0.0, f64::max)
    }
}

/// Constant and linear invariants through the cutoffs `η_r` centred at the origin.
///
/// Discretely the boundary integrals are `B(η, u)` and `B(ηũ, u) - B(ηu, ũ)`
/// with `B(p, q) = Σ ∇p·a∇q` and `ũ = x_k + φ_k` (resp. `x_k` for `a_h`);
/// these equal the stated flux forms in the continuum by the product rule.
/// The radii must keep `η_r ≡ 1` on the support of `g` and `M*g`.
pub fn invariants_check(set: &CorrectorSet, sol: &TwoScaleSolution, support: f64, r_list: &[f64]) -> Result<InvariantsReport> {
    let grid = sol.domain.frame_grid();
    let d = grid.dim();
    for &r in r_list {
        if r < support + 2.0 {
            return Err(Error::PreconditionGeometry(format!(
                "cutoff radius {r} does not cover the source support {support} plus one layer"
            )));
        }
    }
    let mask = Some(sol.domain.interior_mask());
    let op = Operator::new(Medium::Field(set.medium()), grid, mask.clone())?;
    let op_h = Operator::new(Medium::constant(set.a_h())?, grid, mask)?;
    let flux_scale_u = op.flux(&sol.u).norm();
    let flux_scale_v = op_h.flux(&sol.v).norm();
    let coord = |k: usize| ScalarField::from_fn(grid, move |x| x.0[k] as f64);
    let corrected = |k: usize| {
        let phi = set.phi(k);
        ScalarField::from_fn(grid, |x| x.0[k] as f64 + phi.at(x).unwrap())
    };
    let times = |a: &ScalarField, b: &ScalarField| -> Vec<f64> {
        a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect()
    };
    let predicted: Vec<f64> = (0..d)
        .map(|k| {
            let gi = grid;
            let terms: Vec<f64> = (0..gi.len())
                .map(|i| {
                    let x = gi.site(i);
                    (0..d)
                        .map(|j| {
                            let gj = sol.g.get(i, j);
                            if gj == 0.0 {
                                0.0
                            } else {
                                gj * (if j == k { 1.0 } else { 0.0 } + dphi(set, k, j, x))
                            }
                        })
                        .sum()
                })
                .collect();
            -reduce::sum(&terms)
        })
        .collect();
    let mut rows = Vec::new();
    for &r in r_list {
        let eta = cutoff_eta(&grid, Site::ORIGIN, r)?;
        let constant_u = op.bilinear(eta.values(), sol.u.values());
        let constant_v = op_h.bilinear(eta.values(), sol.v.values());
        for k in 0..d {
            let ut = corrected(k);
            let xk = coord(k);
            let lhs = op.bilinear(&times(&eta, &ut), sol.u.values()) - op.bilinear(&times(&eta, &sol.u), ut.values());
            let rhs = op_h.bilinear(&times(&eta, &xk), sol.v.values()) - op_h.bilinear(&times(&eta, &sol.v), xk.values());
            let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
            rows.push(InvariantRow {
                r,
                k,
                lhs,
                rhs,
                mismatch: (lhs - rhs).abs() / scale,
                constant_u,
                constant_v,
            });
        }
    }
    let mut r_spread: f64 = 0.0;
    for k in 0..d {
        let vals: Vec<f64> = rows.iter().filter(|r| r.k == k).map(|r| r.lhs).collect();
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        if vals.len() > 1 {
            r_spread = r_spread.max((hi - lo) / scale);
        }
    }
    Ok(InvariantsReport { rows, flux_scale_u, flux_scale_v, r_spread, predicted })
}

#[derive(Clone, Debug)]
pub struct CorollaryCReport {
    pub decay: DecayReport,
    /// `|∇_{x,k}u^{(y,j)}(x) - ∇_{y,j}u^{(x,k)}(y)|` for one pair, and relative to the larger value.
    pub symmetry_abs: f64,
    pub symmetry_rel: f64,
    pub source_count: usize,
}

/// Mixed-derivative Green's function comparison with dipole sources in `B_{r_*/2}(0)`
/// and the difference averaged over `B_{r_*/2}(x₀)`.
pub fn corollary_c_experiment(
    set: &CorrectorSet,
    joint: JointGrowth,
    x0_list: &[Site],
    opts: ExperimentOptions,
) -> Result<CorollaryCReport> {
    corollary_c_with_radius(set, joint, x0_list, opts, joint.r_star / 2.0)
}

/// As [`corollary_c_experiment`] with source and target balls of radius `radius`.
pub fn corollary_c_with_radius(
    set: &CorrectorSet,
    joint: JointGrowth,
    x0_list: &[Site],
    opts: ExperimentOptions,
    radius: f64,
) -> Result<CorollaryCReport> {
    let d = set.dim();
    check_far_field(x0_list, joint.r_star)?;
    if !(radius > 0.0 && radius <= joint.r_star) {
        return Err(Error::InvalidArgument(format!("ball radius {radius} outside (0, r_*]")));
    }
    let (domain, half) = box_for(d, x0_list, opts.box_factor, radius)?;
    let solver = TwoScaleSolver::new(set, domain, opts.settings)?;
    let grid = solver.grid();
    let half_ball = radius;
    let sources: Vec<usize> = Ball::new(Site::ORIGIN, half_ball).members(&grid)?;
    let jobs: Vec<(usize, usize)> = sources.iter().flat_map(|&y| (0..d).map(move |j| (y, j))).collect();
    let dipole = |y: usize, j: usize| {
        let mut g = VectorField::zeros(grid);
        g.set(y, j, 1.0);
        g
    };
    let target_balls: Vec<Vec<usize>> = x0_list
        .iter()
        .map(|&x| Ball::new(x, half_ball).members(&grid))
        .collect::<Result<_>>()?;
    // per job and x₀: Σ_{x ∈ ball} |e(x)|², plus u itself for the symmetry check
    let per_job: Vec<(Vec<f64>, Option<ScalarField>)> = jobs
        .par_iter()
        .enumerate()
        .map(|(n, &(y, j))| {
            let sol = solver.solve(dipole(y, j))?;
            let e = two_scale_error(set, &sol.u, &sol.v)?;
            let sums = target_balls
                .iter()
                .map(|m| m.iter().map(|&i| (0..d).map(|k| e.get(i, k).powi(2)).sum::<f64>()).sum())
                .collect();
            Ok((sums, if n == 0 { Some(sol.u) } else { None }))
        })
        .collect::<Result<_>>()?;
    let errors: Vec<f64> = (0..x0_list.len())
        .map(|t| {
            let total: f64 = per_job.iter().map(|(s, _)| s[t]).sum();
            (total / (target_balls[t].len() * sources.len()) as f64).sqrt()
        })
        .collect();

    // G symmetry: ∇_{x,0}u^{(y,0)}(x) against ∇_{y,0}u^{(x,0)}(y) with y the first source, x = x₀[0]
    let (y, j) = jobs[0];
    let u_y = per_job[0].1.as_ref().unwrap();
    let x = grid.index(x0_list[0]).unwrap();
    let k = 0;
    let forward = |f: &ScalarField, i: usize, dir: usize| f.values()[grid.neighbor(i, dir, 1).unwrap()] - f.values()[i];
    let lhs = forward(u_y, x, k);
    let u_x = solver.solve(dipole(x, k))?.u;
    let rhs = forward(&u_x, y, j);
    let symmetry_abs = (lhs - rhs).abs();
    let symmetry_rel = symmetry_abs / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);

    Ok(CorollaryCReport {
        decay: DecayReport::build(x0_list, errors, joint, d, half)?,
        symmetry_abs,
        symmetry_rel,
        source_count: jobs.len(),
    })
}

#[derive(Clone, Debug)]
pub struct LemmaLReport {
    pub big_r: usize,
    pub n: usize,
    pub m: usize,
    /// Mean energy of the ensemble on `B_{R/2}`.
    pub lhs: f64,
    /// Largest mean `|Fu|²` over functionals of unit dual norm on the dictionary span.
    pub rhs: f64,
    pub ratio: f64,
    /// Number of dictionary directions dropped as numerically null.
    pub dropped: usize,
    /// Gradient Grams on `B_R` and `B_{R/2}` (sums, not means).
    pub k: DMatrix<f64>,
    pub k_half: DMatrix<f64>,
}

impl LemmaLReport {
    pub fn regularized(&self) -> bool {
        self.dropped > 0
    }
}

/// The ratio from the Grams, with the first `n` dictionary elements as a uniform ensemble.
pub fn lemma_l_from_grams(k: DMatrix<f64>, k_half: DMatrix<f64>, n: usize, big_r: usize) -> Result<LemmaLReport> {
    let m = k.nrows();
    if n == 0 || n > m || k.ncols() != m || k_half.shape() != (m, m) {
        return Err(Error::InvalidArgument(format!("need 1 ≤ N ≤ M with M×M Grams (N = {n}, M = {m})")));
    }
    let mut c = DMatrix::zeros(m, m);
    for i in 0..n {
        c[(i, i)] = 1.0 / n as f64;
    }
    let lhs = (&c * &k_half).trace();
    let eig = SymmetricEigen::new(k.clone());
    let top = eig.eigenvalues.max();
    let mut dropped = 0;
    let sqrt_vals = eig.eigenvalues.map(|l| {
        if l > GRAM_DROP * top {
            l.sqrt()
        } else {
            dropped += 1;
            0.0
        }
    });
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let inner = &root * &c * &root;
    let inner = (&inner + inner.transpose()) * 0.5;
    let rhs = inner.symmetric_eigenvalues().max();
    if !(rhs > 0.0) {
        return Err(Error::InvalidArgument("degenerate ensemble: no energy on B_R".into()));
    }
    Ok(LemmaLReport { big_r, n, m, lhs, rhs, ratio: lhs / rhs, dropped, k, k_half })
}

/// Compactness ratio for `N` of `M` random a-harmonic functions on the box of half-side `2R`.
#[allow(clippy::too_many_arguments)]
pub fn lemma_l_check(
    a: &CoefficientField,
    big_r: usize,
    n: usize,
    m: usize,
    seed: u64,
    noise: f64,
    settings: SolverSettings,
) -> Result<LemmaLReport> {
    if m < n || n == 0 {
        return Err(Error::InvalidArgument(format!("need 1 ≤ N ≤ M (N = {n}, M = {m})")));
    }
    if big_r < 2 {
        return Err(Error::InvalidArgument("R must be at least 2".into()));
    }
    let d = a.dim();
    let domain = BoxDomain::centered(d, Site::ORIGIN, 2 * big_r)?;
    let sampler = HarmonicSampler::new(a, domain, settings)?;
    let identity: Vec<f64> = (0..d * d).map(|t| if t / d == t % d { 1.0 } else { 0.0 }).collect();
    let grid = domain.frame_grid();
    let outer = Ball::new(Site::ORIGIN, big_r as f64).members(&grid)?;
    let inner = Ball::new(Site::ORIGIN, big_r as f64 / 2.0).members(&grid)?;
    let grads: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|id| {
            let spec = BoundarySpec::Random {
                seed: sample_seed(seed, id),
                a_h: identity.clone(),
                noise,
                scale: 2.0 * big_r as f64,
            };
            let u = sampler.sample(&spec)?;
            let gu = grad(&u.values);
            let pick = |members: &[usize]| -> Vec<f64> {
                members.iter().flat_map(|&i| (0..d).map(move |j| (i, j))).map(|(i, j)| gu.get(i, j)).collect()
            };
            Ok((pick(&outer), pick(&inner)))
        })
        .collect::<Result<_>>()?;
    let outer_m = DMatrix::from_fn(outer.len() * d, m, |r, c| grads[c].0[r]);
    let inner_m = DMatrix::from_fn(inner.len() * d, m, |r, c| grads[c].1[r]);
    let k = outer_m.transpose() * &outer_m;
    let k_half = inner_m.transpose() * &inner_m;
    lemma_l_from_grams(k, k_half, n, big_r)
}
