//! a-harmonic samples on Dirichlet boxes and their intrinsic excess.
//!
//! The excess of `u` on `B_r` is `inf_ξ mean_{B_r} |∇u - ξ_i(e_i + ∇φ_i)|²`,
//! a `d`-dimensional least-squares problem over the corrected gradients.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::coefficients::CoefficientField;
use crate::correctors::CorrectorSet;
use crate::fit;
use crate::growth::GrowthReport;
use crate::lattice::{Ball, ScalarField, Site};
use crate::rng::{self, Stream};
use crate::solver::{BoxDomain, Domain, Medium, SolveReport, Solver, SolverSettings};
use crate::{Error, Result};

/// Relative singular value below which a Gram direction counts as null.
pub const GRAM_RCOND: f64 = 1e-12;

/// Dirichlet data on the frame of a box.
#[derive(Clone)]
pub enum BoundarySpec {
    /// `ξ·x + c`.
    Affine { xi: Vec<f64>, offset: f64 },
    /// `x·Qx + ξ·x` with symmetric `Q` (row-major `d×d`).
    Quadratic { q: Vec<f64>, xi: Vec<f64> },
    /// Seeded quadratic with `tr(a_h Q) = 0`, linear part, and i.i.d. trace noise
    /// of amplitude `noise`. Coefficients are scaled so gradients are of order one
    /// on a box of half-side `scale`.
    Random { seed: u64, a_h: Vec<f64>, noise: f64, scale: f64 },
    /// Arbitrary data, e.g. the corrected coordinate `x_k + φ_k`.
    Custom { name: String, f: Arc<dyn Fn(Site) -> f64 + Send + Sync> },
}

impl fmt::Debug for BoundarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundarySpec::Affine { xi, offset } => write!(f, "Affine({xi:?}, {offset})"),
            BoundarySpec::Quadratic { q, xi } => write!(f, "Quadratic({q:?}, {xi:?})"),
            BoundarySpec::Random { seed, noise, scale, .. } => {
                write!(f, "Random(seed {seed}, noise {noise}, scale {scale})")
            }
            BoundarySpec::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl BoundarySpec {
    /// `x_k + φ_k` for the 0-based direction `k`.
    pub fn corrected_coordinate(set: &CorrectorSet, k: usize) -> BoundarySpec {
        let phi = set.phi(k).clone();
        BoundarySpec::Custom {
            name: format!("x{}+phi{}", k + 1, k + 1),
            f: Arc::new(move |x| x.0[k] as f64 + phi.at(x).expect("torus lookup")),
        }
    }

    fn evaluator(&self, dim: usize) -> Result<Arc<dyn Fn(Site) -> f64 + Send + Sync>> {
        let coord = |x: Site, j: usize| x.0[j] as f64;
        match self {
            BoundarySpec::Affine { xi, offset } => {
                check_len(xi.len(), dim, "xi")?;
                let (xi, c) = (xi.clone(), *offset);
                Ok(Arc::new(move |x| c + (0..dim).map(|j| xi[j] * coord(x, j)).sum::<f64>()))
            }
            BoundarySpec::Quadratic { q, xi } => {
                check_len(q.len(), dim * dim, "q")?;
                check_len(xi.len(), dim, "xi")?;
                Ok(quadratic(q.clone(), xi.clone(), dim))
            }
            BoundarySpec::Random { seed, a_h, noise, scale } => {
                check_len(a_h.len(), dim * dim, "a_h")?;
                if !(*scale > 0.0) {
                    return Err(Error::InvalidArgument("random boundary scale must be positive".into()));
                }
                let (q, xi) = random_polynomial(*seed, a_h, dim, *scale);
                let poly = quadratic(q, xi, dim);
                let (seed, noise) = (*seed, *noise);
                Ok(Arc::new(move |x| poly(x) + noise * rng::normal(seed, Stream::Boundary, x, 0)))
            }
            BoundarySpec::Custom { f, .. } => Ok(f.clone()),
        }
    }
}

fn check_len(got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(Error::InvalidArgument(format!("{what} needs {want} entries, got {got}")));
    }
    Ok(())
}

fn quadratic(q: Vec<f64>, xi: Vec<f64>, dim: usize) -> Arc<dyn Fn(Site) -> f64 + Send + Sync> {
    Arc::new(move |x| {
        let mut s = 0.0;
        for i in 0..dim {
            let xi_ = x.0[i] as f64;
            s += xi[i] * xi_;
            for j in 0..dim {
                s += q[i * dim + j] * xi_ * x.0[j] as f64;
            }
        }
        s
    })
}

/// Symmetric `Q` orthogonal to `a_h` in the Frobenius product, scaled by `1/scale`,
/// and a unit-variance linear part.
fn random_polynomial(seed: u64, a_h: &[f64], dim: usize, scale: f64) -> (Vec<f64>, Vec<f64>) {
    let draw = |n: u64| rng::normal(seed, Stream::Polynomial, Site::ORIGIN, n);
    let mut q = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in i..dim {
            let v = draw((i * dim + j) as u64);
            q[i * dim + j] = v;
            q[j * dim + i] = v;
        }
    }
    let sym_a: Vec<f64> = (0..dim * dim)
        .map(|n| 0.5 * (a_h[n] + a_h[(n % dim) * dim + n / dim]))
        .collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let t = dot(&q, &sym_a) / dot(&sym_a, &sym_a);
    q.iter_mut().zip(&sym_a).for_each(|(v, a)| *v = (*v - t * a) / scale);
    let xi = (0..dim).map(|j| draw(100 + j as u64)).collect();
    (q, xi)
}

/// Solution of a Dirichlet problem on a box, stored on the box with its frame.
#[derive(Clone, Debug)]
pub struct HarmonicSample {
    pub domain: BoxDomain,
    pub values: ScalarField,
    pub boundary: BoundarySpec,
    pub report: SolveReport,
}

impl HarmonicSample {
    /// `∇_j u(x) = u(x+e_j) - u(x)` at an interior site.
    fn grad_at(&self, x: Site, j: usize) -> f64 {
        let g = self.values.grid();
        let i = g.index(x).expect("interior site");
        let p = g.neighbor(i, j, 1).expect("frame neighbour");
        self.values.values()[p] - self.values.values()[i]
    }

    /// `mean_{B_r(center)} |∇u|²`.
    pub fn energy_mean(&self, center: Site, r: f64) -> Result<f64> {
        let members = self.ball(center, r)?;
        let d = self.domain.dim();
        let s: f64 = members
            .iter()
            .map(|&x| (0..d).map(|j| self.grad_at(x, j).powi(2)).sum::<f64>())
            .sum();
        Ok(s / members.len() as f64)
    }

    /// Ball sites, all of which must be interior.
    fn ball(&self, center: Site, r: f64) -> Result<Vec<Site>> {
        let ball = Ball::new(center, r);
        let g = self.values.grid();
        let members = ball.members(g)?;
        let sites: Vec<Site> = members.iter().map(|&i| g.site(i)).collect();
        if sites.iter().any(|&x| !self.domain.is_interior(x)) {
            return Err(Error::BallOutsideDomain { center: center.0, radius: r });
        }
        Ok(sites)
    }
}

/// Reusable Dirichlet solver for one medium and box.
pub struct HarmonicSampler {
    solver: Solver,
    domain: BoxDomain,
}

impl HarmonicSampler {
    pub fn new(a: &CoefficientField, domain: BoxDomain, settings: SolverSettings) -> Result<HarmonicSampler> {
        let solver = Solver::new(Medium::Field(a), Domain::Box(domain), settings)?;
        Ok(HarmonicSampler { solver, domain })
    }

    pub fn sample(&self, spec: &BoundarySpec) -> Result<HarmonicSample> {
        let frame = self.domain.frame_grid();
        let f = spec.evaluator(frame.dim())?;
        let data = ScalarField::from_fn(frame, |x| if self.domain.is_interior(x) { 0.0 } else { f(x) });
        let (values, report) = self.solver.solve(None, None, Some(&data))?;
        Ok(HarmonicSample { domain: self.domain, values, boundary: spec.clone(), report })
    }
}

/// One-shot version of [`HarmonicSampler::sample`].
pub fn harmonic_sample(
    a: &CoefficientField,
    domain: BoxDomain,
    spec: &BoundarySpec,
    settings: SolverSettings,
) -> Result<HarmonicSample> {
    HarmonicSampler::new(a, domain, settings)?.sample(spec)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExcessValue {
    pub value: f64,
    pub xi: Vec<f64>,
    /// The Gram matrix had a null direction; `value` is still the infimum.
    pub singular: bool,
    /// Extreme eigenvalues of the Gram matrix.
    pub gram_range: (f64, f64),
}

/// Least-squares data on a ball: Gram matrix, moments of `∇u`, and the samples.
struct BallSystem {
    /// per site: `d` corrected gradients of length `d`, then `∇u`
    rows: Vec<(Vec<f64>, Vec<f64>)>,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
}

fn ball_system(u: &HarmonicSample, set: &CorrectorSet, center: Site, r: f64) -> Result<BallSystem> {
    let d = set.dim();
    if u.domain.dim() != d {
        return Err(Error::GridMismatch("sample and correctors differ in dimension".into()));
    }
    let sites = u.ball(center, r)?;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = sites
        .par_iter()
        .map(|&x| {
            // f[i*d + j] = δ_ij + D_j φ_i(x)
            let mut f = vec![0.0; d * d];
            for i in 0..d {
                let phi = set.phi(i);
                let here = phi.at(x).unwrap();
                for j in 0..d {
                    let there = phi.at(x.offset(Site::axis(j, 1))).unwrap();
                    f[i * d + j] = there - here + if i == j { 1.0 } else { 0.0 };
                }
            }
            let gu = (0..d).map(|j| u.grad_at(x, j)).collect();
            (f, gu)
        })
        .collect();
    let n = rows.len() as f64;
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for (f, gu) in &rows {
        for i in 0..d {
            for l in 0..d {
                gram[(i, l)] += (0..d).map(|j| f[i * d + j] * f[l * d + j]).sum::<f64>();
            }
            rhs[i] += (0..d).map(|j| f[i * d + j] * gu[j]).sum::<f64>();
        }
    }
    gram /= n;
    rhs /= n;
    Ok(BallSystem { rows, gram, rhs })
}

fn residual_mean(sys: &BallSystem, xi: &[f64]) -> f64 {
    let d = xi.len();
    let s: f64 = sys
        .rows
        .iter()
        .map(|(f, gu)| {
            (0..d)
                .map(|j| {
                    let fit: f64 = (0..d).map(|i| xi[i] * f[i * d + j]).sum();
                    (gu[j] - fit).powi(2)
                })
                .sum::<f64>()
        })
        .sum();
    s / sys.rows.len() as f64
}

fn solve_system(sys: &BallSystem) -> ExcessValue {
    let eig = sys.gram.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let singular = !(lo > GRAM_RCOND * hi);
    let xi: Vec<f64> = if singular {
        let pinv = sys
            .gram
            .clone()
            .pseudo_inverse(GRAM_RCOND * hi.max(f64::MIN_POSITIVE))
            .expect("nonnegative tolerance");
        (pinv * &sys.rhs).iter().copied().collect()
    } else {
        sys.gram.clone().cholesky().expect("positive definite").solve(&sys.rhs).iter().copied().collect()
    };
    ExcessValue { value: residual_mean(sys, &xi), xi, singular, gram_range: (lo, hi) }
}

/// Optimal excess on `B_r(center)` and its argmin.
pub fn intrinsic_excess(u: &HarmonicSample, set: &CorrectorSet, center: Site, r: f64) -> Result<ExcessValue> {
    Ok(solve_system(&ball_system(u, set, center, r)?))
}

/// `mean_{B_r} |∇u - ξ_i(e_i + ∇φ_i)|²` for a given `ξ`.
pub fn excess_against(u: &HarmonicSample, set: &CorrectorSet, center: Site, r: f64, xi: &[f64]) -> Result<f64> {
    check_len(xi.len(), set.dim(), "xi")?;
    Ok(residual_mean(&ball_system(u, set, center, r)?, xi))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExcessPoint {
    pub r: f64,
    pub excess: ExcessValue,
    /// Excess against the optimal slope of the smallest radius.
    pub excess_fixed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExcessCurve {
    pub sample_id: usize,
    pub points: Vec<ExcessPoint>,
    /// Log-log slopes of `excess^{1/2}` and of its fixed-slope variant.
    pub slope: Option<f64>,
    pub slope_fixed: Option<f64>,
    /// `max_r |ξ(r)| / (mean_{B_R} |∇u|²)^{1/2}`.
    pub slope_bound: f64,
    /// `max_r |ξ(r) - ξ(R)| / excess(R)^{1/2}`.
    pub stability: f64,
    /// Optimal excess never exceeds the fixed-slope excess.
    pub monotone: bool,
    pub solve: SolveReport,
}

fn slope_of(radii: &[f64], values: &[f64]) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = radii
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0)
        .map(|(r, v)| (*r, v.sqrt()))
        .unzip();
    if x.len() < 3 {
        return None;
    }
    fit::log_log(&x, &y).ok().map(|f| f.slope)
}

/// Excess curve of one sample around `center`.
pub fn excess_curve(
    u: &HarmonicSample,
    set: &CorrectorSet,
    center: Site,
    radii: &[f64],
    big_r: f64,
    sample_id: usize,
) -> Result<ExcessCurve> {
    if radii.is_empty() {
        return Err(Error::InvalidArgument("no excess radii".into()));
    }
    let systems: Vec<BallSystem> = radii.iter().map(|&r| ball_system(u, set, center, r)).collect::<Result<_>>()?;
    let optimal: Vec<ExcessValue> = systems.iter().map(solve_system).collect();
    let xi0 = optimal[0].xi.clone();
    let points: Vec<ExcessPoint> = radii
        .iter()
        .zip(&systems)
        .zip(optimal)
        .map(|((&r, sys), excess)| ExcessPoint { r, excess_fixed: residual_mean(sys, &xi0), excess })
        .collect();
    let ex: Vec<f64> = points.iter().map(|p| p.excess.value).collect();
    let exf: Vec<f64> = points.iter().map(|p| p.excess_fixed).collect();
    let energy = u.energy_mean(center, big_r)?.sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let slope_bound = points.iter().map(|p| norm(&p.excess.xi)).fold(0.0, f64::max) / energy;
    let last = points.last().unwrap();
    let stability = points
        .iter()
        .map(|p| {
            let diff: Vec<f64> = p.excess.xi.iter().zip(&last.excess.xi).map(|(a, b)| a - b).collect();
            norm(&diff)
        })
        .fold(0.0, f64::max)
        / last.excess.value.sqrt();
    // equality at the reference radius up to rounding
    let monotone = points
        .iter()
        .all(|p| p.excess.value <= p.excess_fixed * (1.0 + 1e-12) + 1e-300);
    Ok(ExcessCurve {
        sample_id,
        slope: slope_of(radii, &ex),
        slope_fixed: slope_of(radii, &exf),
        points,
        slope_bound,
        stability,
        monotone,
        solve: u.report,
    })
}

#[derive(Clone, Debug)]
pub struct ExcessReport {
    pub big_r: f64,
    pub radii: Vec<f64>,
    pub r_star: f64,
    pub curves: Vec<ExcessCurve>,
    /// Samples whose solve failed, with the reason.
    pub skipped: Vec<(usize, String)>,
    pub median_slope: Option<f64>,
    pub median_slope_fixed: Option<f64>,
    /// Worst `slope_bound` over samples.
    pub slope_bound: f64,
    pub stability: f64,
    /// `max(λ_max, 1/λ_min)` of the Gram matrices over radii and samples.
    pub gram_constant: f64,
    pub monotone: bool,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Seed of sample `id` in an experiment seeded with `seed`.
pub fn sample_seed(seed: u64, id: usize) -> u64 {
    rng::hash(seed, Stream::Boundary, Site::ORIGIN, id as u64 + 1)
}

/// Excess decay over `n_samples` random a-harmonic functions on the box of half-side `R` at the origin.
///
/// `radii` must lie in `[r_*, R]` and the growth bound must be certified at the origin.
#[allow(clippy::too_many_arguments)]
pub fn excess_decay_experiment(
    set: &CorrectorSet,
    growth: &GrowthReport,
    big_r: usize,
    radii: &[f64],
    n_samples: usize,
    seed: u64,
    noise: f64,
    settings: SolverSettings,
) -> Result<ExcessReport> {
    let d = set.dim();
    if growth.center != Site::ORIGIN {
        return Err(Error::InvalidArgument("excess experiment is centred at the origin".into()));
    }
    if !growth.certified() {
        return Err(Error::PreconditionGrowth("growth bound not certified at the origin".into()));
    }
    let r_star = growth.r_star.expect("certified reports carry r_star");
    if radii.is_empty() || radii.iter().any(|&r| r < r_star || r > big_r as f64) {
        return Err(Error::PreconditionGeometry(format!(
            "excess radii must lie in [r_* = {r_star}, R = {big_r}]"
        )));
    }
    if radii.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("excess radii must increase".into()));
    }
    let bx = BoxDomain::centered(d, Site::ORIGIN, big_r)?;
    let sampler = HarmonicSampler::new(set.medium(), bx, settings)?;
    let a_h: Vec<f64> = (0..d * d).map(|n| set.a_h()[(n / d, n % d)]).collect();
    let results: Vec<Result<ExcessCurve>> = (0..n_samples)
        .into_par_iter()
        .map(|id| {
            let spec = BoundarySpec::Random {
                seed: sample_seed(seed, id),
                a_h: a_h.clone(),
                noise,
                scale: big_r as f64,
            };
            let u = sampler.sample(&spec)?;
            excess_curve(&u, set, Site::ORIGIN, radii, big_r as f64, id)
        })
        .collect();
    let mut curves = Vec::new();
    let mut skipped = Vec::new();
    for (id, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => curves.push(c),
            Err(e) if e.is_solver_failure() => skipped.push((id, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    let slopes: Vec<f64> = curves.iter().filter_map(|c| c.slope).collect();
    let slopes_fixed: Vec<f64> = curves.iter().filter_map(|c| c.slope_fixed).collect();
    let gram_constant = curves
        .iter()
        .flat_map(|c| c.points.iter())
        .map(|p| p.excess.gram_range.1.max(1.0 / p.excess.gram_range.0))
        .fold(0.0, f64::max);
    Ok(ExcessReport {
        big_r: big_r as f64,
        radii: radii.to_vec(),
        r_star,
        median_slope: median(&slopes),
        median_slope_fixed: median(&slopes_fixed),
        slope_bound: curves.iter().map(|c| c.slope_bound).fold(0.0, f64::max),
        stability: curves.iter().map(|c| c.stability).fold(0.0, f64::max),
        gram_constant,
        monotone: curves.iter().all(|c| c.monotone),
        curves,
        skipped,
    })
}
