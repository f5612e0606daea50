//! λ-elliptic conductance fields on the torus.
//!
//! A field assigns a conductance in `[λ, 1]` to every lattice edge; the value
//! for direction `j` at site `x` belongs to the edge `(x, x + e_j)`. Random
//! families derive each edge value from `(seed, x, j)` alone.

use std::io::{BufRead, Write};

use crate::lattice::{Grid, Site, VectorField};
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Statistical family of a coefficient ensemble.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// Direction `j` carries `diag[j]` everywhere.
    Constant { diag: Vec<f64> },
    /// Stripes orthogonal to `e_1`: `values[0]` on the first half of each period, `values[1]` on the rest.
    Layered { period: usize, values: [f64; 2] },
    /// I.i.d. edges: `values[1]` with the given probability, `values[0]` otherwise.
    Checkerboard { values: [f64; 2], probability: f64 },
    /// Thresholded moving average of i.i.d. Gaussians over cubes of side `range`.
    Correlated { range: usize, values: [f64; 2] },
}

impl Family {
    pub fn kind(&self) -> &'static str {
        match self {
            Family::Constant { .. } => "constant",
            Family::Layered { .. } => "layered",
            Family::Checkerboard { .. } => "checkerboard",
            Family::Correlated { .. } => "correlated",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub lambda: f64,
    pub family: Family,
}

impl EnsembleSpec {
    pub fn new(lambda: f64, family: Family) -> EnsembleSpec {
        EnsembleSpec { lambda, family }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        check_lambda(self.lambda)?;
        let in_range = |v: f64| check_value(v, self.lambda);
        match &self.family {
            Family::Constant { diag } => {
                if diag.len() != grid.dim() {
                    return Err(Error::InvalidEnsemble(format!(
                        "constant medium needs {} diagonal entries, got {}",
                        grid.dim(),
                        diag.len()
                    )));
                }
                diag.iter().try_for_each(|&v| in_range(v))
            }
            Family::Layered { period, values } => {
                if *period < 2 || !grid.side().is_multiple_of(*period) {
                    return Err(Error::InvalidEnsemble(format!(
                        "stripe period {period} must be at least 2 and divide L = {}",
                        grid.side()
                    )));
                }
                values.iter().try_for_each(|&v| in_range(v))
            }
            Family::Checkerboard { values, probability } => {
                if !(0.0..=1.0).contains(probability) {
                    return Err(Error::InvalidEnsemble(format!(
                        "probability {probability} outside [0, 1]"
                    )));
                }
                values.iter().try_for_each(|&v| in_range(v))
            }
            Family::Correlated { range, values } => {
                if *range == 0 || *range > grid.side() {
                    return Err(Error::InvalidEnsemble(format!(
                        "correlation range {range} must lie in [1, L]"
                    )));
                }
                values.iter().try_for_each(|&v| in_range(v))
            }
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::EllipticityViolation(format!("lambda = {lambda} outside (0, 1]")));
    }
    Ok(())
}

fn check_value(v: f64, lambda: f64) -> Result<()> {
    if !(v >= lambda && v <= 1.0) {
        return Err(Error::EllipticityViolation(format!(
            "conductance {v} outside [{lambda}, 1]"
        )));
    }
    Ok(())
}

/// Per-edge conductances on a torus.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    grid: Grid,
    conductance: Vec<f64>,
    lambda: f64,
    kind: String,
    seed: u64,
}

impl CoefficientField {
    /// Wraps explicit conductances (site-major, `d` per site) after checking ellipticity.
    pub fn from_values(grid: Grid, lambda: f64, conductance: Vec<f64>) -> Result<CoefficientField> {
        if !grid.is_periodic() {
            return Err(Error::InvalidGrid("coefficient fields live on a torus".into()));
        }
        check_lambda(lambda)?;
        if conductance.len() != grid.len() * grid.dim() {
            return Err(Error::GridMismatch(format!(
                "expected {} conductances, got {}",
                grid.len() * grid.dim(),
                conductance.len()
            )));
        }
        conductance.iter().try_for_each(|&v| check_value(v, lambda))?;
        Ok(CoefficientField { grid, conductance, lambda, kind: "explicit".into(), seed: 0 })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn conductances(&self) -> &[f64] {
        &self.conductance
    }

    pub fn get(&self, idx: usize, j: usize) -> f64 {
        self.conductance[idx * self.grid.dim() + j]
    }

    /// Conductance of the edge `(x, x + e_j)` for any global site, using periodicity.
    pub fn at(&self, x: Site, j: usize) -> f64 {
        self.get(self.grid.index(x).expect("torus index"), j)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.conductance
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Edge field `a(x) e_i`, i.e. component `i` carries the conductance, the rest zero.
    pub fn column(&self, i: usize) -> VectorField {
        VectorField::from_fn(self.grid, |x, j| if j == i { self.at(x, j) } else { 0.0 })
    }

    /// The field `a(· + z)`.
    pub fn shifted(&self, z: Site) -> CoefficientField {
        let d = self.grid.dim();
        let g = self.grid;
        let conductance = (0..g.len() * d)
            .map(|n| self.at(g.site(n / d).offset(z), n % d))
            .collect();
        CoefficientField { conductance, kind: self.kind.clone(), ..*self }
    }

    /// Text dump: a `key value` header followed by one conductance per line,
    /// direction-major, sites in lexicographic order with `x_1` slowest.
    pub fn write_dump<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "# homoglab coefficient field")?;
        writeln!(out, "dim {}", self.grid.dim())?;
        writeln!(out, "side {}", self.grid.side())?;
        writeln!(out, "lambda {}", self.lambda)?;
        writeln!(out, "kind {}", self.kind)?;
        writeln!(out, "seed {}", self.seed)?;
        writeln!(out, "values")?;
        for j in 0..self.grid.dim() {
            for i in 0..self.grid.len() {
                writeln!(out, "{}", self.get(i, j))?;
            }
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(input: R) -> Result<CoefficientField> {
        let mut header = std::collections::HashMap::new();
        let mut lines = input.lines();
        for line in lines.by_ref() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "values" {
                break;
            }
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| Error::Dump(format!("bad header line '{line}'")))?;
            header.insert(k.to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            header.get(k).cloned().ok_or_else(|| Error::Dump(format!("missing header '{k}'")))
        };
        let parse_err = |k: &str| Error::Dump(format!("bad value for '{k}'"));
        let dim: usize = get("dim")?.parse().map_err(|_| parse_err("dim"))?;
        let side: usize = get("side")?.parse().map_err(|_| parse_err("side"))?;
        let lambda: f64 = get("lambda")?.parse().map_err(|_| parse_err("lambda"))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| parse_err("seed"))?;
        let kind = get("kind")?;
        let grid = Grid::torus(dim, side)?;
        let mut raw = Vec::with_capacity(grid.len() * dim);
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            raw.push(line.parse::<f64>().map_err(|_| Error::Dump(format!("bad value '{line}'")))?);
        }
        if raw.len() != grid.len() * dim {
            return Err(Error::Dump(format!(
                "expected {} values, found {}",
                grid.len() * dim,
                raw.len()
            )));
        }
        let mut conductance = vec![0.0; raw.len()];
        for j in 0..dim {
            for i in 0..grid.len() {
                conductance[i * dim + j] = raw[j * grid.len() + i];
            }
        }
        let mut field = CoefficientField::from_values(grid, lambda, conductance)?;
        field.kind = kind;
        field.seed = seed;
        Ok(field)
    }
}

/// Homogeneous medium with conductance `diag[j]` in direction `j`.
pub fn make_constant(grid: Grid, lambda: f64, diag: &[f64]) -> Result<CoefficientField> {
    let spec = EnsembleSpec::new(lambda, Family::Constant { diag: diag.to_vec() });
    sample(&spec, 0, grid)
}

/// Draws the realization of `spec` for `seed` on `grid`.
pub fn sample(spec: &EnsembleSpec, seed: u64, grid: Grid) -> Result<CoefficientField> {
    if !grid.is_periodic() {
        return Err(Error::InvalidGrid("coefficient fields live on a torus".into()));
    }
    spec.validate(&grid)?;
    let d = grid.dim();
    let conductance: Vec<f64> = match &spec.family {
        Family::Constant { diag } => (0..grid.len() * d).map(|n| diag[n % d]).collect(),
        Family::Layered { period, values } => (0..grid.len() * d)
            .map(|n| {
                let x1 = grid.site(n / d).0[0] as usize;
                if x1 % period < period / 2 {
                    values[0]
                } else {
                    values[1]
                }
            })
            .collect(),
        Family::Checkerboard { values, probability } => (0..grid.len() * d)
            .map(|n| {
                let u = rng::uniform(seed, Stream::Conductance, grid.site(n / d), (n % d) as u64);
                if u < *probability {
                    values[1]
                } else {
                    values[0]
                }
            })
            .collect(),
        Family::Correlated { range, values } => {
            let z = moving_average(&grid, *range, seed);
            (0..grid.len() * d)
                .map(|n| {
                    let (i, j) = (n / d, n % d);
                    let k = grid.neighbor(i, j, 1).unwrap();
                    if z[i] + z[k] > 0.0 {
                        values[1]
                    } else {
                        values[0]
                    }
                })
                .collect()
        }
    };
    Ok(CoefficientField {
        grid,
        conductance,
        lambda: spec.lambda,
        kind: spec.family.kind().to_string(),
        seed,
    })
}

/// `Z(x) = ρ^{-d/2} Σ_{z ∈ x + {0..ρ-1}^d} ξ(z)` with periodic i.i.d. normal `ξ`.
fn moving_average(grid: &Grid, range: usize, seed: u64) -> Vec<f64> {
    let xi: Vec<f64> = (0..grid.len())
        .map(|i| rng::normal(seed, Stream::Correlation, grid.site(i), 0))
        .collect();
    // separable box sums along each axis
    let mut cur = xi;
    for j in 0..grid.dim() {
        let mut next = vec![0.0; cur.len()];
        for (i, out) in next.iter_mut().enumerate() {
            let mut s = 0.0;
            let mut k = i;
            for _ in 0..range {
                s += cur[k];
                k = grid.neighbor(k, j, 1).unwrap();
            }
            *out = s;
        }
        cur = next;
    }
    let norm = (range as f64).powf(grid.dim() as f64 / 2.0);
    cur.iter().map(|v| v / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(d: usize, l: usize) -> Grid {
        Grid::torus(d, l).unwrap()
    }

    #[test]
    fn constant_media() {
        let g = grid(2, 8);
        let a = make_constant(g, 0.25, &[1.0, 1.0]).unwrap();
        assert!(a.conductances().iter().all(|&v| v == 1.0));
        let b = make_constant(g, 0.25, &[0.25, 0.25]).unwrap();
        assert_eq!(b.min_max(), (0.25, 0.25));
        assert!(matches!(
            make_constant(g, 0.25, &[1.5, 1.0]),
            Err(Error::EllipticityViolation(_))
        ));
        assert!(matches!(
            make_constant(g, 0.25, &[0.1, 1.0]),
            Err(Error::EllipticityViolation(_))
        ));
    }

    #[test]
    fn degenerate_checkerboard_is_constant() {
        let g = grid(2, 16);
        let spec = EnsembleSpec::new(
            0.3,
            Family::Checkerboard { values: [0.3, 0.3], probability: 0.5 },
        );
        let a = sample(&spec, 11, g).unwrap();
        assert_eq!(a.min_max(), (0.3, 0.3));
    }

    #[test]
    fn layered_depends_on_first_coordinate_only() {
        let g = grid(2, 8);
        let spec = EnsembleSpec::new(0.25, Family::Layered { period: 2, values: [0.25, 1.0] });
        let a = sample(&spec, 0, g).unwrap();
        for i in 0..g.len() {
            let x = g.site(i);
            let expect = if x.0[0] % 2 == 0 { 0.25 } else { 1.0 };
            assert_eq!(a.get(i, 0), expect);
            assert_eq!(a.get(i, 1), expect);
            assert_eq!(a.shifted(Site::new(&[0, 3])).get(i, 0), expect);
        }
        let bad = EnsembleSpec::new(0.25, Family::Layered { period: 3, values: [0.25, 1.0] });
        assert!(sample(&bad, 0, g).is_err());
    }

    #[test]
    fn checkerboard_fraction_concentrates() {
        let g = grid(2, 64);
        let spec = EnsembleSpec::new(
            0.25,
            Family::Checkerboard { values: [0.25, 1.0], probability: 0.5 },
        );
        for seed in 0..8 {
            let a = sample(&spec, seed, g).unwrap();
            let ones = a.conductances().iter().filter(|&&v| v == 1.0).count();
            let frac = ones as f64 / a.conductances().len() as f64;
            assert!((0.46..=0.54).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn sampling_is_deterministic_and_elliptic() {
        let g = grid(3, 8);
        for family in [
            Family::Checkerboard { values: [0.1, 0.9], probability: 0.3 },
            Family::Correlated { range: 3, values: [0.2, 1.0] },
        ] {
            let spec = EnsembleSpec::new(0.1, family);
            let a = sample(&spec, 42, g).unwrap();
            let b = sample(&spec, 42, g).unwrap();
            assert_eq!(a, b);
            let (lo, hi) = a.min_max();
            assert!(lo >= 0.1 && hi <= 1.0);
            assert_ne!(a, sample(&spec, 43, g).unwrap());
        }
    }

    #[test]
    fn correlated_field_is_balanced() {
        let g = grid(2, 64);
        let spec = EnsembleSpec::new(0.25, Family::Correlated { range: 4, values: [0.25, 1.0] });
        let a = sample(&spec, 3, g).unwrap();
        let ones = a.conductances().iter().filter(|&&v| v == 1.0).count();
        let frac = ones as f64 / a.conductances().len() as f64;
        assert!((0.35..=0.65).contains(&frac), "{frac}");
    }

    #[test]
    fn dump_round_trip() {
        let g = grid(2, 6);
        let spec = EnsembleSpec::new(
            0.25,
            Family::Checkerboard { values: [0.25, 1.0], probability: 0.5 },
        );
        let a = sample(&spec, 5, g).unwrap();
        let mut buf = Vec::new();
        a.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("kind checkerboard"));
        let b = CoefficientField::read_dump(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(a, b);
    }
}
