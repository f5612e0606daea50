//! Flat `key = value` experiment configuration.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored. Keys may
//! appear once. Lists are whitespace or comma separated; site lists separate
//! sites with `;` and coordinates with `,`, missing trailing coordinates are 0
//! (so `x0 = 16; 32` means `16·e₁, 32·e₁`).

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use homoglab::coefficients::{EnsembleSpec, Family};
use homoglab::lattice::{Grid, Site};
use homoglab::solver::{Preconditioner, SolverSettings, DEFAULT_MAX_ITER, DEFAULT_TOL};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Command {
    Correctors,
    Growth,
    Excess,
    ThmT,
    CorC,
    LemmaL,
}

impl Command {
    pub const ALL: [Command; 6] =
        [Command::Correctors, Command::Growth, Command::Excess, Command::ThmT, Command::CorC, Command::LemmaL];

    pub fn name(self) -> &'static str {
        match self {
            Command::Correctors => "correctors",
            Command::Growth => "growth",
            Command::Excess => "excess",
            Command::ThmT => "thmT",
            Command::CorC => "corC",
            Command::LemmaL => "lemmaL",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command '{s}'"))
    }
}

const KEYS: &[&str] = &[
    "command",
    "dim",
    "size",
    "lambda",
    "seed",
    "tol",
    "max_iter",
    "preconditioner",
    "family",
    "diag",
    "values",
    "probability",
    "period",
    "range",
    "out",
    "dump",
    "centers",
    "alpha",
    "radii",
    "big_r",
    "samples",
    "noise",
    "x0",
    "g_seed",
    "box_factor",
    "doubling_check",
    "invariant_radii",
    "lemma_radii",
    "ensemble_n",
    "dictionary_m",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub command: Option<Command>,
    pub dim: usize,
    pub size: usize,
    pub seed: u64,
    pub ensemble: EnsembleSpec,
    pub settings: SolverSettings,
    pub out: Option<PathBuf>,
    pub dump: bool,
    /// Growth centers; empty means the command default.
    pub centers: Vec<Site>,
    pub alpha: Option<f64>,
    /// Excess radii; empty means dyadic radii in `[r_*, R]`.
    pub radii: Vec<f64>,
    pub big_r: usize,
    pub samples: usize,
    pub noise: f64,
    pub x0: Vec<Site>,
    pub g_seed: Option<u64>,
    pub box_factor: usize,
    pub doubling_check: bool,
    /// Cutoff radii for the invariants; empty means `4 r_*` and `8 r_*`.
    pub invariant_radii: Vec<f64>,
    pub lemma_radii: Vec<usize>,
    pub ensemble_n: usize,
    pub dictionary_m: usize,
    /// `(key, value)` in file order, echoed into the manifest.
    pub entries: Vec<(String, String)>,
}

impl Config {
    pub fn grid(&self) -> Grid {
        Grid::torus(self.dim, self.size).expect("validated grid")
    }

    pub fn g_seed(&self) -> u64 {
        self.g_seed.unwrap_or(self.seed)
    }

    /// Resolves the command given on the command line against the one in the file.
    pub fn resolve_command(&self, cli: Option<Command>) -> Result<Command, CliError> {
        match (self.command, cli) {
            (Some(a), Some(b)) if a != b => {
                Err(validation("command", format!("config says '{a}' but '{b}' was requested")))
            }
            (_, Some(c)) | (Some(c), None) => Ok(c),
            (None, None) => Err(validation("command", "no command given")),
        }
    }
}

fn validation(field: &str, msg: impl Into<String>) -> CliError {
    CliError::Validation { field: field.to_string(), msg: msg.into() }
}

struct Raw {
    values: HashMap<String, (usize, String)>,
}

impl Raw {
    fn take(&self, key: &str) -> Option<&(usize, String)> {
        self.values.get(key)
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .map_err(|_| validation(key, format!("line {line}: cannot read '{v}'"))),
        }
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| validation(key, format!("line {line}: cannot read '{v}'"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        match self.take(key) {
            None => Ok(Vec::new()),
            Some((line, v)) => v
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| validation(key, format!("line {line}: cannot read '{s}'"))))
                .collect(),
        }
    }

    fn sites(&self, key: &str, dim: usize) -> Result<Vec<Site>, CliError> {
        let Some((line, v)) = self.take(key) else { return Ok(Vec::new()) };
        v.split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                let coords: Vec<i64> = s
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|c| !c.is_empty())
                    .map(|c| c.parse().map_err(|_| validation(key, format!("line {line}: cannot read '{c}'"))))
                    .collect::<Result<_, _>>()?;
                if coords.is_empty() || coords.len() > dim {
                    return Err(validation(key, format!("line {line}: site '{s}' needs 1 to {dim} coordinates")));
                }
                Ok(Site::new(&coords))
            })
            .collect()
    }
}

fn tokenize(text: &str) -> Result<Raw, CliError> {
    let mut values: HashMap<String, (usize, String)> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let content = line.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(CliError::Parse { line: line_no, msg: format!("expected 'key = value', got '{content}'") });
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(CliError::Parse { line: line_no, msg: format!("unknown key '{k}'") });
        }
        if let Some((first, _)) = values.get(k) {
            return Err(CliError::Parse { line: line_no, msg: format!("duplicate key '{k}' (first set on line {first})") });
        }
        if v.is_empty() {
            return Err(CliError::Parse { line: line_no, msg: format!("empty value for '{k}'") });
        }
        values.insert(k.to_string(), (line_no, v.to_string()));
    }
    Ok(Raw { values })
}

fn two_values(raw: &Raw, lambda: f64) -> Result<[f64; 2], CliError> {
    let v: Vec<f64> = raw.list("values")?;
    match v.len() {
        0 => Ok([lambda, 1.0]),
        2 => Ok([v[0], v[1]]),
        n => Err(validation("values", format!("expected two values, got {n}"))),
    }
}

fn in_range(field: &str, v: f64, lambda: f64) -> Result<(), CliError> {
    if !(v >= lambda && v <= 1.0) {
        return Err(validation(field, format!("{v} outside [lambda, 1] = [{lambda}, 1]")));
    }
    Ok(())
}

fn increasing(field: &str, v: &[f64]) -> Result<(), CliError> {
    if v.iter().any(|r| !r.is_finite() || *r <= 0.0) || v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(validation(field, "radii must be positive and strictly increasing"));
    }
    Ok(())
}

/// Parses and validates a configuration. Every numeric field is checked before any solve.
pub fn parse_config(text: &str) -> Result<Config, CliError> {
    let raw = tokenize(text)?;
    let entries = {
        let mut e: Vec<(usize, String, String)> =
            raw.values.iter().map(|(k, (l, v))| (*l, k.clone(), v.clone())).collect();
        e.sort();
        e.into_iter().map(|(_, k, v)| (k, v)).collect()
    };

    let command = match raw.take("command") {
        None => None,
        Some((line, v)) => Some(v.parse().map_err(|e: String| validation("command", format!("line {line}: {e}")))?),
    };
    let dim: usize = raw.get("dim", 2)?;
    if !(dim == 2 || dim == 3) {
        return Err(validation("dim", format!("dimension {dim} is not 2 or 3")));
    }
    let size: usize = raw.get("size", 64)?;
    if size < 8 {
        return Err(validation("size", format!("grid side {size} is below 8")));
    }
    let lambda: f64 = raw.get("lambda", 0.25)?;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(validation("lambda", format!("lambda = {lambda} outside (0, 1]")));
    }
    let seed: u64 = raw.get("seed", 1)?;
    let tol: f64 = raw.get("tol", DEFAULT_TOL)?;
    if !(tol > 0.0 && tol < 1e-2) {
        return Err(validation("tol", format!("tolerance {tol} outside (0, 1e-2)")));
    }
    let max_iter: usize = raw.get("max_iter", DEFAULT_MAX_ITER)?;
    if max_iter == 0 {
        return Err(validation("max_iter", "must be positive"));
    }
    let preconditioner: Preconditioner = raw.get("preconditioner", Preconditioner::Multigrid)?;

    let family_name: String = raw.get("family", "checkerboard".to_string())?;
    let family = match family_name.as_str() {
        "constant" => {
            let diag: Vec<f64> = raw.list("diag")?;
            let diag = if diag.is_empty() { vec![1.0; dim] } else { diag };
            if diag.len() != dim {
                return Err(validation("diag", format!("need {dim} entries, got {}", diag.len())));
            }
            for &v in &diag {
                in_range("diag", v, lambda)?;
            }
            Family::Constant { diag }
        }
        "layered" => {
            let period: usize = raw.get("period", 2)?;
            if period < 2 || !size.is_multiple_of(period) {
                return Err(validation("period", format!("period {period} must be at least 2 and divide size {size}")));
            }
            let values = two_values(&raw, lambda)?;
            values.iter().try_for_each(|&v| in_range("values", v, lambda))?;
            Family::Layered { period, values }
        }
        "checkerboard" => {
            let probability: f64 = raw.get("probability", 0.5)?;
            if !(0.0..=1.0).contains(&probability) {
                return Err(validation("probability", format!("{probability} outside [0, 1]")));
            }
            let values = two_values(&raw, lambda)?;
            values.iter().try_for_each(|&v| in_range("values", v, lambda))?;
            Family::Checkerboard { values, probability }
        }
        "correlated" => {
            let range: usize = raw.get("range", 4)?;
            if range == 0 || range > size {
                return Err(validation("range", format!("range {range} outside [1, size]")));
            }
            let values = two_values(&raw, lambda)?;
            values.iter().try_for_each(|&v| in_range("values", v, lambda))?;
            Family::Correlated { range, values }
        }
        other => return Err(validation("family", format!("unknown family '{other}'"))),
    };
    let ensemble = EnsembleSpec::new(lambda, family);
    let grid = Grid::torus(dim, size).map_err(|e| validation("size", e.to_string()))?;
    ensemble.validate(&grid).map_err(|e| validation("family", e.to_string()))?;

    let out = raw.opt::<String>("out")?.map(PathBuf::from);
    let dump: bool = raw.get("dump", false)?;
    let centers = raw.sites("centers", dim)?;
    let quarter = (size / 4) as f64;
    if let Some(c) = centers.iter().find(|c| c.norm() > size as f64) {
        return Err(validation("centers", format!("center {:?} lies beyond one period", &c.0[..dim])));
    }
    let alpha: Option<f64> = raw.opt("alpha")?;
    if let Some(a) = alpha {
        if !(a > 0.0 && a <= 1.0) {
            return Err(validation("alpha", format!("alpha = {a} outside (0, 1]")));
        }
    }
    let radii: Vec<f64> = raw.list("radii")?;
    increasing("radii", &radii)?;
    let big_r: usize = raw.get("big_r", (size / 4).max(2))?;
    if big_r < 2 {
        return Err(validation("big_r", "R must be at least 2"));
    }
    if radii.last().is_some_and(|&r| r > big_r as f64) {
        return Err(validation("radii", format!("radii must not exceed R = {big_r}")));
    }
    if radii.iter().any(|&r| r > quarter) {
        return Err(validation("radii", format!("radii must not exceed size/4 = {quarter}")));
    }
    let samples: usize = raw.get("samples", 16)?;
    if samples == 0 {
        return Err(validation("samples", "need at least one sample"));
    }
    let noise: f64 = raw.get("noise", 0.1)?;
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(validation("noise", format!("noise {noise} must be nonnegative")));
    }
    let mut x0 = raw.sites("x0", dim)?;
    if x0.is_empty() {
        x0 = [16, 24, 32, 48, 64].iter().map(|&c| Site::axis(0, c)).collect();
    }
    if x0.iter().any(|x| x.norm() == 0.0) {
        return Err(validation("x0", "x0 must not be the origin"));
    }
    let g_seed: Option<u64> = raw.opt("g_seed")?;
    let box_factor: usize = raw.get("box_factor", 8)?;
    if box_factor < 4 {
        return Err(validation("box_factor", "box side must be at least 4 |x0|"));
    }
    let doubling_check: bool = raw.get("doubling_check", false)?;
    let invariant_radii: Vec<f64> = raw.list("invariant_radii")?;
    increasing("invariant_radii", &invariant_radii)?;
    let lemma_radii: Vec<usize> = {
        let v: Vec<usize> = raw.list("lemma_radii")?;
        if v.is_empty() { vec![8, 16, 32] } else { v }
    };
    if lemma_radii.iter().any(|&r| r < 2) {
        return Err(validation("lemma_radii", "radii must be at least 2"));
    }
    let ensemble_n: usize = raw.get("ensemble_n", 32)?;
    let dictionary_m: usize = raw.get("dictionary_m", ensemble_n)?;
    if ensemble_n == 0 {
        return Err(validation("ensemble_n", "need at least one function"));
    }
    if dictionary_m < ensemble_n {
        return Err(validation("dictionary_m", format!("dictionary size {dictionary_m} below N = {ensemble_n}")));
    }

    Ok(Config {
        command,
        dim,
        size,
        seed,
        ensemble,
        settings: SolverSettings { tol, max_iter, preconditioner },
        out,
        dump,
        centers,
        alpha,
        radii,
        big_r,
        samples,
        noise,
        x0,
        g_seed,
        box_factor,
        doubling_check,
        invariant_radii,
        lemma_radii,
        ensemble_n,
        dictionary_m,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let c = parse_config("dim = 2\nsize = 64\nlambda = 0.25\nseed = 7\ncommand = correctors").unwrap();
        assert_eq!(c.command, Some(Command::Correctors));
        assert_eq!((c.dim, c.size, c.seed), (2, 64, 7));
        assert_eq!(c.ensemble.lambda, 0.25);
        assert_eq!(c.entries.len(), 5);
    }

    #[test]
    fn lambda_out_of_range() {
        match parse_config("lambda = 1.5") {
            Err(CliError::Validation { field, .. }) => assert_eq!(field, "lambda"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_key_flags_later_line() {
        match parse_config("# header\nseed = 1\n\nseed = 2\n") {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_malformed_line() {
        assert!(matches!(parse_config("colour = red"), Err(CliError::Parse { line: 1, .. })));
        assert!(matches!(parse_config("dim 2"), Err(CliError::Parse { line: 1, .. })));
    }

    #[test]
    fn comments_and_site_lists() {
        let c = parse_config("dim = 3 # three\nx0 = 16; 0, 24 ; 1,2,3\nradii = 2, 4 8").unwrap();
        assert_eq!(c.x0, vec![Site::axis(0, 16), Site::axis(1, 24), Site::new(&[1, 2, 3])]);
        assert_eq!(c.radii, vec![2.0, 4.0, 8.0]);
    }

    #[test]
    fn family_fields_are_named() {
        let err = |t: &str| match parse_config(t) {
            Err(CliError::Validation { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(err("family = layered\nsize = 64\nperiod = 3"), "period");
        assert_eq!(err("values = 0.1 1"), "values");
        assert_eq!(err("family = constant\ndiag = 1"), "diag");
        assert_eq!(err("dim = 4"), "dim");
        assert_eq!(err("size = nine"), "size");
        assert_eq!(err("ensemble_n = 4\ndictionary_m = 3"), "dictionary_m");
    }

    #[test]
    fn command_conflict() {
        let c = parse_config("command = growth").unwrap();
        assert_eq!(c.resolve_command(None).unwrap(), Command::Growth);
        assert!(c.resolve_command(Some(Command::ThmT)).is_err());
        let c = parse_config("").unwrap();
        assert!(c.resolve_command(None).is_err());
        assert_eq!(c.resolve_command(Some(Command::LemmaL)).unwrap(), Command::LemmaL);
    }
}
