//! Sublinear growth of the corrector pair.
//!
//! `ω(r)` is the centered L² deviation of `(φ, σ)` over `B_r(center)`. The
//! growth hypothesis asks for `ω(r) ≤ (r/r_*)^{1-α}` from `r_*` on; here `α`
//! comes from a log-log fit and `r_*` is found by checking the bound literally
//! on the listed radii.

use crate::correctors::CorrectorSet;
use crate::fit::{self, LineFit};
use crate::lattice::{ball_l2_dev, Ball, FieldStack, SiteComponents, Site};
use crate::{Error, Result};

/// Minimum number of radii with positive `ω` for an exponent fit.
pub const MIN_FIT_POINTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthPoint {
    pub r: f64,
    pub omega_phi: f64,
    pub omega_sigma: f64,
    /// `(ω_φ² + ω_σ²)^{1/2}`, the functional of the growth hypothesis.
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrowthReport {
    pub center: Site,
    pub points: Vec<GrowthPoint>,
    /// `None` when fewer than [`MIN_FIT_POINTS`] radii have `ω > 0`.
    pub alpha_fit: Option<f64>,
    pub fit: Option<LineFit>,
    /// Radii used in the fit, as an index range into `points`.
    pub fit_window: (usize, usize),
    /// `None` when no listed radius certifies the bound.
    pub r_star: Option<f64>,
    /// Exponent used for `r_star` (nominal or fitted).
    pub alpha_used: Option<f64>,
    /// All `ω` vanish (constant medium).
    pub degenerate: bool,
}

impl GrowthReport {
    pub fn radii(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.r).collect()
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.omega).collect()
    }

    pub fn certified(&self) -> bool {
        match (self.r_star, self.alpha_used) {
            (Some(r0), Some(a)) => certifies(&self.points, a, r0),
            (Some(_), None) => self.degenerate,
            _ => false,
        }
    }
}

/// `{2, 4, 8, …, L/4}`.
pub fn dyadic_radii(side: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = 2;
    while 4 * r <= side {
        out.push(r as f64);
        r *= 2;
    }
    out
}

/// `ω` at each radius around `center`.
pub fn growth_profile(set: &CorrectorSet, center: Site, radii: &[f64]) -> Result<Vec<GrowthPoint>> {
    let max = set.grid().side() as f64 / 4.0;
    let d = set.dim();
    let phis: Vec<&dyn SiteComponents> = (0..d).map(|i| set.phi(i) as &dyn SiteComponents).collect();
    let sigmas: Vec<&dyn SiteComponents> = (0..d).map(|i| set.sigma(i) as &dyn SiteComponents).collect();
    let phi = FieldStack::new(phis.clone())?;
    let sigma = FieldStack::new(sigmas.clone())?;
    radii
        .iter()
        .map(|&r| {
            if r > max {
                return Err(Error::RadiusTooLarge { radius: r, max });
            }
            let ball = Ball::new(center, r);
            let omega_phi = ball_l2_dev(&phi, &ball)?;
            let omega_sigma = ball_l2_dev(&sigma, &ball)?;
            Ok(GrowthPoint {
                r,
                omega_phi,
                omega_sigma,
                omega: omega_phi.hypot(omega_sigma),
            })
        })
        .collect()
}

/// `ω(s) ≤ (s/r0)^{1-α}` for every listed `s ≥ r0`.
pub fn certifies(points: &[GrowthPoint], alpha: f64, r0: f64) -> bool {
    points
        .iter()
        .filter(|p| p.r >= r0)
        .all(|p| p.omega <= (p.r / r0).powf(1.0 - alpha))
}

/// Smallest listed radius that certifies the bound with exponent `alpha` at every profile.
pub fn common_r_star(profiles: &[&[GrowthPoint]], alpha: f64) -> Option<f64> {
    let first = profiles.first()?;
    first
        .iter()
        .map(|p| p.r)
        .find(|&r0| profiles.iter().all(|pts| certifies(pts, alpha, r0)))
}

/// Exponent fit and `r_*` detection.
///
/// The fit drops the smallest radius (lattice effects) and the largest
/// (periodization). `alpha_nominal` overrides the fitted exponent for `r_*`.
pub fn fit_alpha_rstar(center: Site, points: Vec<GrowthPoint>, alpha_nominal: Option<f64>) -> Result<GrowthReport> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty growth profile".into()));
    }
    if points.windows(2).any(|w| !(w[0].r < w[1].r)) {
        return Err(Error::InvalidArgument("growth radii must increase".into()));
    }
    let n = points.len();
    let degenerate = points.iter().all(|p| p.omega == 0.0);
    let positive = points.iter().filter(|p| p.omega > 0.0).count();
    let fit_window = if n >= 3 { (1, n - 1) } else { (0, n) };
    let fit = if positive >= MIN_FIT_POINTS {
        let window: Vec<&GrowthPoint> =
            points[fit_window.0..fit_window.1].iter().filter(|p| p.omega > 0.0).collect();
        let x: Vec<f64> = window.iter().map(|p| p.r).collect();
        let y: Vec<f64> = window.iter().map(|p| p.omega).collect();
        Some(fit::log_log(&x, &y)?)
    } else {
        None
    };
    let alpha_fit = fit.map(|f| 1.0 - f.slope);
    let alpha_used = alpha_nominal.or(alpha_fit);
    let r_star = match alpha_used {
        Some(a) => points.iter().map(|p| p.r).find(|&r0| certifies(&points, a, r0)),
        None => Some(points[0].r),
    };
    Ok(GrowthReport {
        center,
        points,
        alpha_fit,
        fit,
        fit_window,
        r_star,
        alpha_used,
        degenerate,
    })
}

/// Profile on the dyadic radii followed by the fit.
pub fn growth_report(set: &CorrectorSet, center: Site, alpha_nominal: Option<f64>) -> Result<GrowthReport> {
    let radii = dyadic_radii(set.grid().side());
    let points = growth_profile(set, center, &radii)?;
    fit_alpha_rstar(center, points, alpha_nominal)
}

/// A single `(α, r_*)` certified at each center, as Theorem-type experiments
/// need the growth bound in several points at once.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointGrowth {
    pub alpha: f64,
    pub r_star: f64,
}

/// Uses the fitted exponent at the first report (or `alpha_nominal`) and the
/// smallest radius certified at every center.
pub fn joint_certification(reports: &[GrowthReport], alpha_nominal: Option<f64>) -> Result<JointGrowth> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no growth reports".into()))?;
    if reports.iter().all(|r| r.degenerate) {
        return Ok(JointGrowth { alpha: alpha_nominal.unwrap_or(1.0), r_star: first.points[0].r });
    }
    let alpha = alpha_nominal.or(first.alpha_fit).ok_or_else(|| {
        Error::PreconditionGrowth("exponent undefined: too few radii with positive growth".into())
    })?;
    let profiles: Vec<&[GrowthPoint]> = reports.iter().map(|r| r.points.as_slice()).collect();
    let r_star = common_r_star(&profiles, alpha).ok_or_else(|| {
        let centers: Vec<String> = reports.iter().map(|r| format!("{:?}", r.center.0)).collect();
        Error::PreconditionGrowth(format!(
            "no listed radius certifies the growth bound with alpha = {alpha} at centers {}",
            centers.join(", ")
        ))
    })?;
    Ok(JointGrowth { alpha, r_star })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{make_constant, sample, EnsembleSpec, Family};
    use crate::correctors::build_corrector_set;
    use crate::lattice::Grid;
    use crate::solver::SolverSettings;

    fn synthetic(radii: &[f64], f: impl Fn(f64) -> f64) -> Vec<GrowthPoint> {
        radii
            .iter()
            .map(|&r| GrowthPoint { r, omega_phi: f(r), omega_sigma: 0.0, omega: f(r) })
            .collect()
    }

    #[test]
    fn dyadic_grid() {
        assert_eq!(dyadic_radii(256), vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0]);
        assert_eq!(dyadic_radii(8), vec![2.0]);
        assert!(dyadic_radii(7).is_empty());
    }

    #[test]
    fn exact_square_root_growth() {
        let radii = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
        let rep = fit_alpha_rstar(Site::ORIGIN, synthetic(&radii, f64::sqrt), None).unwrap();
        assert!((rep.alpha_fit.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(rep.fit_window, (1, 5));
    }

    #[test]
    fn synthetic_power_law_r_star_matches_brute_force() {
        let radii = dyadic_radii(1024);
        let pts = synthetic(&radii, |r| 2.0 * r.powf(0.3));
        let rep = fit_alpha_rstar(Site::ORIGIN, pts, None).unwrap();
        let a = rep.alpha_fit.unwrap();
        assert!((a - 0.7).abs() < 1e-12);
        // brute force: smallest r0 with 2 s^0.3 ≤ (s/r0)^0.3 for all listed s ≥ r0
        let mut expect = None;
        for &r0 in &radii {
            if radii.iter().filter(|&&s| s >= r0).all(|&s| 2.0 * s.powf(0.3) <= (s / r0).powf(0.3)) {
                expect = Some(r0);
                break;
            }
        }
        assert_eq!(rep.r_star, expect);
        // 2 s^0.3 > (s/r0)^0.3 for every r0 ≥ 1
        assert_eq!(expect, None);
        assert!(!rep.certified());
    }

    #[test]
    fn small_amplitude_growth_certifies() {
        let radii = dyadic_radii(1024);
        let pts = synthetic(&radii, |r| 0.05 * r.powf(0.3));
        let rep = fit_alpha_rstar(Site::ORIGIN, pts.clone(), None).unwrap();
        let r0 = rep.r_star.unwrap();
        assert!(rep.certified());
        for &s in &radii {
            if s >= r0 {
                assert!(0.05 * s.powf(0.3) <= (s / r0).powf(1.0 - rep.alpha_fit.unwrap()));
            }
        }
        // no smaller listed radius works
        for &r in radii.iter().filter(|&&r| r < r0) {
            assert!(!certifies(&pts, rep.alpha_fit.unwrap(), r));
        }
    }

    #[test]
    fn degenerate_profile() {
        let radii = [2.0, 4.0, 8.0, 16.0];
        let rep = fit_alpha_rstar(Site::ORIGIN, synthetic(&radii, |_| 0.0), None).unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.alpha_fit, None);
        assert_eq!(rep.r_star, Some(2.0));
        assert!(rep.certified());
    }

    #[test]
    fn scale_invariance_of_alpha() {
        let radii = [2.0, 4.0, 8.0, 16.0, 32.0];
        let a = fit_alpha_rstar(Site::ORIGIN, synthetic(&radii, |r| r.powf(0.4) * (1.0 + 0.1 * r.ln().sin())), None)
            .unwrap();
        let b = fit_alpha_rstar(Site::ORIGIN, synthetic(&radii, |r| 7.0 * r.powf(0.4) * (1.0 + 0.1 * r.ln().sin())), None)
            .unwrap();
        assert!((a.alpha_fit.unwrap() - b.alpha_fit.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn radius_limit() {
        let a = make_constant(Grid::torus(2, 16).unwrap(), 0.5, &[1.0, 1.0]).unwrap();
        let set = build_corrector_set(&a, SolverSettings::default()).unwrap();
        assert!(matches!(
            growth_profile(&set, Site::ORIGIN, &[2.0, 5.0]),
            Err(Error::RadiusTooLarge { .. })
        ));
        let pts = growth_profile(&set, Site::ORIGIN, &[2.0, 4.0]).unwrap();
        assert!(pts.iter().all(|p| p.omega == 0.0));
    }

    #[test]
    fn invariant_under_constant_shifts() {
        let spec = EnsembleSpec::new(0.25, Family::Checkerboard { values: [0.25, 1.0], probability: 0.5 });
        let a = sample(&spec, 5, Grid::torus(2, 32).unwrap()).unwrap();
        let set = build_corrector_set(&a, SolverSettings::default().multigrid()).unwrap();
        let phi0 = set.phi(0).clone();
        let mut moved = phi0.clone();
        moved.values_mut().iter_mut().for_each(|v| *v += 3.5);
        let ball = Ball::new(Site::new(&[3, 4]), 6.0);
        let x = ball_l2_dev(&phi0, &ball).unwrap();
        let y = ball_l2_dev(&moved, &ball).unwrap();
        assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn joint_certification_requires_every_center() {
        let radii = dyadic_radii(1024);
        let good = fit_alpha_rstar(Site::ORIGIN, synthetic(&radii, |r| 0.05 * r.powf(0.3)), None).unwrap();
        let bad = fit_alpha_rstar(Site::axis(0, 8), synthetic(&radii, |r| 5.0 * r.powf(0.3)), None).unwrap();
        let joint = joint_certification(std::slice::from_ref(&good), None).unwrap();
        assert_eq!(joint.r_star, good.r_star.unwrap());
        assert!(matches!(
            joint_certification(&[good, bad], None),
            Err(Error::PreconditionGrowth(_))
        ));
    }
}
