//! Command pipelines: sample → correctors → growth → experiment, then CSVs and the manifest.

use std::path::Path;
use std::time::Instant;

use homoglab::coefficients::{sample, CoefficientField};
use homoglab::correctors::{build_corrector_set, CorrectorSet};
use homoglab::excess::excess_decay_experiment;
use homoglab::experiments::{
    corollary_c_experiment, invariants_check, lemma_l_check, theorem_t_experiment, DecayReport, ExperimentOptions,
};
use homoglab::growth::{dyadic_radii, growth_report, joint_certification, GrowthReport, JointGrowth};
use homoglab::lattice::Site;

use crate::config::{Command, Config};
use crate::output::{num, opt, Artifact, ArtifactWriter, Table};
use crate::{CliError, StageExt};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, Default)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub artifacts: Vec<Artifact>,
    pub wall_times: Vec<(String, f64)>,
    pub solver_iterations: usize,
    pub certifications: Vec<(String, bool)>,
    /// Set when a stage failed; the artifacts are those written before it.
    pub failure: Option<String>,
}

impl RunManifest {
    pub fn all_certified(&self) -> bool {
        self.certifications.iter().all(|(_, ok)| *ok)
    }

    pub fn failed_certifications(&self) -> Vec<&str> {
        self.certifications.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# homoglab run manifest\n");
        s.push_str(&format!("command = {}\n", self.command));
        for (k, v) in &self.config {
            s.push_str(&format!("config.{k} = {v}\n"));
        }
        for a in &self.artifacts {
            s.push_str(&format!("artifact = {} sha256:{} bytes:{}\n", a.name, a.sha256, a.bytes));
        }
        for (stage, t) in &self.wall_times {
            s.push_str(&format!("wall_time.{stage} = {t:.3}\n"));
        }
        s.push_str(&format!("solver_iterations = {}\n", self.solver_iterations));
        let passed = self.certifications.iter().filter(|(_, ok)| *ok).count();
        s.push_str(&format!("certifications = {passed}/{} passed\n", self.certifications.len()));
        for name in self.failed_certifications() {
            s.push_str(&format!("certification_failed = {name}\n"));
        }
        s.push_str(&format!("status = {}\n", self.failure.as_deref().unwrap_or("ok")));
        s
    }
}

struct Ctx<'c> {
    config: &'c Config,
    out: ArtifactWriter,
    manifest: RunManifest,
}

impl Ctx<'_> {
    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let v = f();
        self.manifest.wall_times.push((stage.to_string(), t.elapsed().as_secs_f64()));
        v
    }

    fn medium(&mut self) -> Result<CoefficientField, CliError> {
        let c = self.config;
        self.timed("sample", || sample(&c.ensemble, c.seed, c.grid())).stage("sample")
    }

    fn correctors(&mut self, a: &CoefficientField) -> Result<CorrectorSet, CliError> {
        let settings = self.config.settings;
        let set = self.timed("correctors", || build_corrector_set(a, settings)).stage("correctors")?;
        self.manifest.solver_iterations += set.solve_reports().iter().map(|r| r.iterations).sum::<usize>();
        let d = set.dim();
        let mut ah = Table::new(["i", "j", "a_h"]);
        for i in 0..d {
            for j in 0..d {
                ah.row(vec![(i + 1).to_string(), (j + 1).to_string(), num(set.a_h()[(i, j)])]);
            }
        }
        self.out.table("ah.csv", &ah)?;
        let mut certs = Table::new(["name", "value", "threshold", "passed"]);
        for c in set.certifications() {
            certs.row(vec![c.name.clone(), num(c.value), num(c.threshold), c.passed.to_string()]);
            self.manifest.certifications.push((c.name.clone(), c.passed));
        }
        self.out.table("certifications.csv", &certs)?;
        let mut solves = Table::new(["solve", "iterations", "relative_residual", "converged"]);
        for (n, r) in set.solve_reports().iter().enumerate() {
            solves.row(vec![n.to_string(), r.iterations.to_string(), num(r.relative_residual), r.converged.to_string()]);
        }
        self.out.table("solves.csv", &solves)?;
        if self.config.dump {
            let mut bytes = Vec::new();
            set.write_dump(&mut bytes).stage("dump")?;
            self.out.write("correctors.dump", &bytes)?;
        }
        Ok(set)
    }

    fn growth(&mut self, set: &CorrectorSet, centers: &[Site]) -> Result<Vec<GrowthReport>, CliError> {
        let alpha = self.config.alpha;
        let reports = self
            .timed("growth", || centers.iter().map(|&c| growth_report(set, c, alpha)).collect::<homoglab::Result<Vec<_>>>())
            .stage("growth")?;
        let d = set.dim();
        let coords = |c: Site| -> Vec<String> { c.0[..d].iter().map(|v| v.to_string()).collect() };
        let mut header: Vec<String> = (1..=d).map(|k| format!("center_x{k}")).collect();
        header.extend(["r", "omega_phi", "omega_sigma", "omega_total"].map(String::from));
        let mut t = Table::new(header);
        for rep in &reports {
            for p in &rep.points {
                let mut row = coords(rep.center);
                row.extend([num(p.r), num(p.omega_phi), num(p.omega_sigma), num(p.omega)]);
                t.row(row);
            }
        }
        let names: Vec<String> = (1..=d).map(|k| format!("center_x{k}")).collect();
        t.footer(format!("{},alpha_fit,r_star,certified", names.join(",")));
        for rep in &reports {
            t.footer(format!(
                "{},{},{},{}",
                coords(rep.center).join(","),
                opt(rep.alpha_fit),
                opt(rep.r_star),
                rep.certified()
            ));
        }
        self.out.table("growth.csv", &t)?;
        Ok(reports)
    }

    fn joint(&mut self, reports: &[GrowthReport]) -> Result<JointGrowth, CliError> {
        joint_certification(reports, self.config.alpha).stage("growth certification")
    }

    fn options(&self) -> ExperimentOptions {
        ExperimentOptions {
            settings: self.config.settings,
            box_factor: self.config.box_factor,
            doubling_check: self.config.doubling_check,
        }
    }

    fn decay(&mut self, name: &str, rep: &DecayReport) -> Result<(), CliError> {
        let mut t = Table::new(["x0_norm", "error_l2", "envelope", "slope_running"]);
        for n in 0..rep.abscissa.len() {
            t.row(vec![num(rep.abscissa[n]), num(rep.errors[n]), num(rep.envelope[n]), opt(rep.slope_running[n])]);
        }
        Ok(self.out.table(name, &t)?)
    }

    fn experiment_centers(&self) -> Vec<Site> {
        if !self.config.centers.is_empty() {
            return self.config.centers.clone();
        }
        let mut c = vec![Site::ORIGIN];
        c.extend(self.config.x0.iter().copied());
        c
    }
}

/// Runs one command, writing artifacts into `out` and the manifest last.
///
/// Certification failures still produce every artifact; they show up in the
/// returned manifest. Stage errors write a manifest naming the failing stage.
pub fn run(config: &Config, command: Command, out: &Path) -> Result<RunManifest, CliError> {
    let mut ctx = Ctx {
        config,
        out: ArtifactWriter::new(out)?,
        manifest: RunManifest { command: command.to_string(), config: config.entries.clone(), ..Default::default() },
    };
    let result = pipeline(&mut ctx, command);
    if let Err(e) = &result {
        ctx.manifest.failure = Some(e.to_string());
    }
    ctx.manifest.artifacts = ctx.out.artifacts.clone();
    std::fs::write(ctx.out.dir().join(MANIFEST), ctx.manifest.render())?;
    result.map(|_| ctx.manifest)
}

fn pipeline(ctx: &mut Ctx<'_>, command: Command) -> Result<(), CliError> {
    let config = ctx.config;
    if command == Command::LemmaL {
        return lemma(ctx);
    }
    let a = ctx.medium()?;
    let set = ctx.correctors(&a)?;
    match command {
        Command::Correctors => Ok(()),
        Command::Growth => {
            let centers = if config.centers.is_empty() { vec![Site::ORIGIN] } else { config.centers.clone() };
            let reports = ctx.growth(&set, &centers)?;
            for r in &reports {
                ctx.manifest.certifications.push((format!("growth_{:?}", &r.center.0[..set.dim()]), r.certified()));
            }
            Ok(())
        }
        Command::Excess => {
            let reports = ctx.growth(&set, &[Site::ORIGIN])?;
            let g = &reports[0];
            let r_star = g.r_star.unwrap_or(2.0);
            let radii = if config.radii.is_empty() {
                let mut r: Vec<f64> =
                    dyadic_radii(config.size).into_iter().filter(|&r| r >= r_star && r <= config.big_r as f64).collect();
                if r.last() != Some(&(config.big_r as f64)) && (config.big_r as f64) <= (config.size / 4) as f64 {
                    r.push(config.big_r as f64);
                }
                r
            } else {
                config.radii.clone()
            };
            let rep = ctx
                .timed("excess", || {
                    excess_decay_experiment(&set, g, config.big_r, &radii, config.samples, config.seed, config.noise, config.settings)
                })
                .stage("excess")?;
            ctx.manifest.solver_iterations += rep.curves.iter().map(|c| c.solve.iterations).sum::<usize>();
            let d = set.dim();
            let mut header: Vec<String> = ["sample_id", "r", "excess_sqrt", "excess_sqrt_fixed_slope"].map(String::from).to_vec();
            header.extend((1..=d).map(|k| format!("xi_{k}")));
            let mut t = Table::new(header);
            for c in &rep.curves {
                for p in &c.points {
                    let mut row = vec![c.sample_id.to_string(), num(p.r), num(p.excess.value.sqrt()), num(p.excess_fixed.sqrt())];
                    row.extend(p.excess.xi.iter().map(|v| num(*v)));
                    t.row(row);
                }
            }
            ctx.out.table("excess.csv", &t)?;
            let mut agg = Table::new(["sample_id", "slope", "slope_fixed", "slope_bound", "stability", "monotone"]);
            for c in &rep.curves {
                agg.row(vec![
                    c.sample_id.to_string(),
                    opt(c.slope),
                    opt(c.slope_fixed),
                    num(c.slope_bound),
                    num(c.stability),
                    c.monotone.to_string(),
                ]);
            }
            agg.row(vec![
                "median".into(),
                opt(rep.median_slope),
                opt(rep.median_slope_fixed),
                num(rep.slope_bound),
                num(rep.stability),
                rep.monotone.to_string(),
            ]);
            agg.footer("R,r_star,gram_constant,skipped");
            agg.footer(format!("{},{},{},{}", num(rep.big_r), num(rep.r_star), num(rep.gram_constant), rep.skipped.len()));
            ctx.out.table("aggregate.csv", &agg)?;
            Ok(())
        }
        Command::ThmT => {
            let centers = ctx.experiment_centers();
            let reports = ctx.growth(&set, &centers)?;
            let joint = ctx.joint(&reports)?;
            let opts = ctx.options();
            let rep = ctx
                .timed("thmT", || theorem_t_experiment(&set, joint, &config.x0, config.g_seed(), opts))
                .stage("thmT")?;
            ctx.manifest.solver_iterations += rep.solution.reports.iter().map(|r| r.iterations).sum::<usize>();
            ctx.decay("decay_T.csv", &rep.decay)?;
            let mut fit = Table::new(["alpha", "r_star", "slope", "rms_residual", "prefactor", "linearity", "doubling_change"]);
            fit.row(vec![
                num(joint.alpha),
                num(joint.r_star),
                opt(rep.decay.fit.map(|f| f.slope)),
                opt(rep.decay.fit.map(|f| f.rms_residual)),
                num(rep.decay.prefactor),
                num(rep.linearity),
                opt(rep.doubling_change),
            ]);
            ctx.out.table("decay_T_fit.csv", &fit)?;
            let radii = if config.invariant_radii.is_empty() {
                vec![4.0 * joint.r_star, 8.0 * joint.r_star]
            } else {
                config.invariant_radii.clone()
            };
            let inv = ctx
                .timed("invariants", || invariants_check(&set, &rep.solution, joint.r_star, &radii))
                .stage("invariants")?;
            let mut t = Table::new(["r", "k", "lhs", "rhs", "mismatch", "constant_u", "constant_v"]);
            for row in &inv.rows {
                t.row(vec![
                    num(row.r),
                    (row.k + 1).to_string(),
                    num(row.lhs),
                    num(row.rhs),
                    num(row.mismatch),
                    num(row.constant_u),
                    num(row.constant_v),
                ]);
            }
            t.footer("flux_scale_u,flux_scale_v,r_spread");
            t.footer(format!(
                "{},{},{}",
                num(inv.flux_scale_u),
                num(inv.flux_scale_v),
                num(inv.r_spread)
            ));
            ctx.out.table("invariants.csv", &t)?;
            Ok(())
        }
        Command::CorC => {
            let centers = ctx.experiment_centers();
            let reports = ctx.growth(&set, &centers)?;
            let joint = ctx.joint(&reports)?;
            let opts = ctx.options();
            let rep = ctx.timed("corC", || corollary_c_experiment(&set, joint, &config.x0, opts)).stage("corC")?;
            ctx.decay("decay_C.csv", &rep.decay)?;
            let mut fit = Table::new(["alpha", "r_star", "slope", "rms_residual", "prefactor", "symmetry_abs", "symmetry_rel", "sources"]);
            fit.row(vec![
                num(joint.alpha),
                num(joint.r_star),
                opt(rep.decay.fit.map(|f| f.slope)),
                opt(rep.decay.fit.map(|f| f.rms_residual)),
                num(rep.decay.prefactor),
                num(rep.symmetry_abs),
                num(rep.symmetry_rel),
                rep.source_count.to_string(),
            ]);
            ctx.out.table("decay_C_fit.csv", &fit)?;
            Ok(())
        }
        Command::LemmaL => unreachable!(),
    }
}

fn lemma(ctx: &mut Ctx<'_>) -> Result<(), CliError> {
    let config = ctx.config;
    let a = ctx.medium()?;
    let mut t = Table::new(["R", "N", "M", "lhs", "rhs", "ratio", "dropped"]);
    for &r in &config.lemma_radii {
        let rep = ctx
            .timed("lemmaL", || {
                lemma_l_check(&a, r, config.ensemble_n, config.dictionary_m, config.seed, config.noise, config.settings)
            })
            .stage("lemmaL")?;
        t.row(vec![
            r.to_string(),
            rep.n.to_string(),
            rep.m.to_string(),
            num(rep.lhs),
            num(rep.rhs),
            num(rep.ratio),
            rep.dropped.to_string(),
        ]);
    }
    Ok(ctx.out.table("lemmaL.csv", &t)?)
}
