//! Discrete geometry and calculus on cubic lattices.
//!
//! A [`Grid`] is either a periodic torus of side `L` or a finite window of the
//! infinite lattice. Scalars live on sites; the component `j` of a vector field
//! at site `x` lives on the edge `(x, x + e_j)`. The gradient is the forward
//! difference and the divergence is its exact negative adjoint (backward
//! difference), so summation by parts holds without remainder:
//!
//! ```text
//! Σ_x u(x) (div F)(x) = -Σ_x (grad u)(x) · F(x)
//! ```
//!
//! On a window, edges leaving the window do not exist: their gradient is zero
//! and the divergence ignores them.

use rayon::prelude::*;

use crate::{reduce, Error, Result};

pub const MAX_DIM: usize = 3;

/// Sentinel for a missing neighbour in a [`NeighborTable`].
pub(crate) const NONE: u32 = u32::MAX;

/// Integer lattice point; unused trailing coordinates are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site(pub [i64; MAX_DIM]);

impl Site {
    pub const ORIGIN: Site = Site([0; MAX_DIM]);

    pub fn new(coords: &[i64]) -> Site {
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Site(c)
    }

    /// `t · e_j`
    pub fn axis(j: usize, t: i64) -> Site {
        let mut c = [0; MAX_DIM];
        c[j] = t;
        Site(c)
    }

    pub fn offset(self, other: Site) -> Site {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(other.0) {
            *a += b;
        }
        Site(c)
    }

    pub fn minus(self, other: Site) -> Site {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(other.0) {
            *a -= b;
        }
        Site(c)
    }

    pub fn norm(self) -> f64 {
        self.0.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt()
    }
}

/// A cubic grid of `side^dim` sites, periodic (torus) or a finite window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    dim: usize,
    side: usize,
    origin: Site,
    periodic: bool,
}

impl Grid {
    /// Periodic lattice `(ℤ/Lℤ)^d` with `d ∈ {2,3}` and `L ≥ 4`.
    pub fn torus(dim: usize, side: usize) -> Result<Grid> {
        check_dim(dim)?;
        if side < 4 {
            return Err(Error::InvalidGrid(format!(
                "torus side must be at least 4 (got {side})"
            )));
        }
        Ok(Grid { dim, side, origin: Site::ORIGIN, periodic: true })
    }

    /// Finite window `origin + {0..side-1}^d` of the infinite lattice.
    pub fn window(dim: usize, origin: Site, side: usize) -> Result<Grid> {
        check_dim(dim)?;
        if side < 3 {
            return Err(Error::InvalidGrid(format!(
                "window side must be at least 3 (got {side})"
            )));
        }
        if origin.0[dim..].iter().any(|&c| c != 0) {
            return Err(Error::InvalidGrid("origin has coordinates beyond dim".into()));
        }
        Ok(Grid { dim, side, origin, periodic: false })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn origin(&self) -> Site {
        self.origin
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn len(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn stride(&self, j: usize) -> usize {
        self.side.pow((self.dim - 1 - j) as u32)
    }

    /// Global coordinates of the site stored at `idx` (torus: representative in `[0, L)^d`).
    pub fn site(&self, idx: usize) -> Site {
        let mut c = [0; MAX_DIM];
        let mut rem = idx;
        for j in (0..self.dim).rev() {
            c[j] = (rem % self.side) as i64 + self.origin.0[j];
            rem /= self.side;
        }
        Site(c)
    }

    /// Storage index of a global site; periodic grids wrap, windows return `None` outside.
    pub fn index(&self, site: Site) -> Option<usize> {
        let n = self.side as i64;
        let mut idx = 0usize;
        for j in 0..self.dim {
            let mut local = site.0[j] - self.origin.0[j];
            if self.periodic {
                local = local.rem_euclid(n);
            } else if local < 0 || local >= n {
                return None;
            }
            idx = idx * self.side + local as usize;
        }
        Some(idx)
    }

    pub fn contains(&self, site: Site) -> bool {
        self.index(site).is_some()
    }

    /// Index of `site(idx) + step·e_j`, if it exists.
    pub fn neighbor(&self, idx: usize, j: usize, step: i64) -> Option<usize> {
        let stride = self.stride(j);
        let local = (idx / stride) % self.side;
        let target = local as i64 + step;
        let n = self.side as i64;
        if (0..n).contains(&target) {
            Some((idx as i64 + step * stride as i64) as usize)
        } else if self.periodic {
            let wrapped = target.rem_euclid(n);
            Some((idx as i64 + (wrapped - local as i64) * stride as i64) as usize)
        } else {
            None
        }
    }

    /// Euclidean distance; minimum-image distance on a torus.
    pub fn distance(&self, a: Site, b: Site) -> f64 {
        let n = self.side as i64;
        let mut s = 0.0;
        for j in 0..self.dim {
            let mut d = (a.0[j] - b.0[j]).abs();
            if self.periodic {
                d = d.rem_euclid(n);
                d = d.min(n - d);
            }
            s += (d * d) as f64;
        }
        s.sqrt()
    }

    pub(crate) fn neighbor_table(&self) -> NeighborTable {
        let n = self.len();
        let mut plus = Vec::with_capacity(self.dim);
        let mut minus = Vec::with_capacity(self.dim);
        for j in 0..self.dim {
            let p: Vec<u32> = (0..n)
                .map(|i| self.neighbor(i, j, 1).map_or(NONE, |k| k as u32))
                .collect();
            let m: Vec<u32> = (0..n)
                .map(|i| self.neighbor(i, j, -1).map_or(NONE, |k| k as u32))
                .collect();
            plus.push(p);
            minus.push(m);
        }
        NeighborTable { plus, minus }
    }

    pub(crate) fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{what}: {self:?} vs {other:?}")));
        }
        Ok(())
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if !(2..=MAX_DIM).contains(&dim) {
        return Err(Error::InvalidGrid(format!("dimension must be 2 or 3 (got {dim})")));
    }
    Ok(())
}

pub(crate) struct NeighborTable {
    pub plus: Vec<Vec<u32>>,
    pub minus: Vec<Vec<u32>>,
}

/// Real value per site.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "scalar field needs {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Grid) -> ScalarField {
        ScalarField { grid, values: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Site) -> f64 + Sync) -> ScalarField {
        let values = (0..grid.len()).into_par_iter().map(|i| f(grid.site(i))).collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, site: Site) -> Option<f64> {
        self.grid.index(site).map(|i| self.values[i])
    }

    pub fn mean(&self) -> f64 {
        reduce::sum(&self.values) / self.values.len() as f64
    }

    pub fn norm(&self) -> f64 {
        reduce::norm(&self.values)
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// `x ↦ f(x + z)`; only defined on periodic grids.
    pub fn shifted(&self, z: Site) -> ScalarField {
        assert!(self.grid.periodic, "shift requires a periodic grid");
        ScalarField::from_fn(self.grid, |x| self.values[self.grid.index(x.offset(z)).unwrap()])
    }
}

/// `d` reals per site; component `j` at `x` belongs to the edge `(x, x + e_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Grid,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<VectorField> {
        if values.len() != grid.len() * grid.dim {
            return Err(Error::GridMismatch(format!(
                "vector field needs {} values, got {}",
                grid.len() * grid.dim,
                values.len()
            )));
        }
        Ok(VectorField { grid, values })
    }

    pub fn zeros(grid: Grid) -> VectorField {
        VectorField { grid, values: vec![0.0; grid.len() * grid.dim] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Site, usize) -> f64 + Sync) -> VectorField {
        let d = grid.dim;
        let values = (0..grid.len() * d)
            .into_par_iter()
            .map(|k| f(grid.site(k / d), k % d))
            .collect();
        VectorField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, idx: usize, j: usize) -> f64 {
        self.values[idx * self.grid.dim + j]
    }

    pub fn set(&mut self, idx: usize, j: usize, v: f64) {
        self.values[idx * self.grid.dim + j] = v;
    }

    pub fn site_vector(&self, idx: usize) -> &[f64] {
        let d = self.grid.dim;
        &self.values[idx * d..(idx + 1) * d]
    }

    pub fn norm(&self) -> f64 {
        reduce::norm(&self.values)
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.grid.dim;
        (0..d)
            .map(|j| {
                let comp: Vec<f64> = self.values.iter().skip(j).step_by(d).copied().collect();
                reduce::sum(&comp) / self.grid.len() as f64
            })
            .collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn shifted(&self, z: Site) -> VectorField {
        assert!(self.grid.periodic, "shift requires a periodic grid");
        let g = self.grid;
        VectorField::from_fn(g, |x, j| self.get(g.index(x.offset(z)).unwrap(), j))
    }
}

/// Independent pairs `(j, k)` with `j < k`, in storage order.
pub fn skew_pairs(dim: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for j in 0..dim {
        for k in j + 1..dim {
            pairs.push((j, k));
        }
    }
    pairs
}

/// Skew-symmetric tensor per site, stored through its `d(d-1)/2` upper entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewTensorField {
    grid: Grid,
    values: Vec<f64>,
}

impl SkewTensorField {
    pub fn zeros(grid: Grid) -> SkewTensorField {
        let np = skew_pairs(grid.dim).len();
        SkewTensorField { grid, values: vec![0.0; grid.len() * np] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn pair_count(&self) -> usize {
        self.grid.dim * (self.grid.dim - 1) / 2
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn pair_index(&self, j: usize, k: usize) -> usize {
        debug_assert!(j < k);
        let d = self.grid.dim;
        // rows 0..j contribute (d-1) + (d-2) + ... entries
        j * (2 * d - j - 1) / 2 + (k - j - 1)
    }

    /// Full tensor entry `σ_{jk}`; `σ_{kj} = -σ_{jk}` and `σ_{jj} = 0` by construction.
    pub fn get(&self, idx: usize, j: usize, k: usize) -> f64 {
        use std::cmp::Ordering::*;
        match j.cmp(&k) {
            Equal => 0.0,
            Less => self.values[idx * self.pair_count() + self.pair_index(j, k)],
            Greater => -self.values[idx * self.pair_count() + self.pair_index(k, j)],
        }
    }

    pub fn set_pair(&mut self, j: usize, k: usize, values: &[f64]) {
        assert!(j < k && values.len() == self.grid.len());
        let np = self.pair_count();
        let p = self.pair_index(j, k);
        for (i, v) in values.iter().enumerate() {
            self.values[i * np + p] = *v;
        }
    }

    pub fn pair_values(&self, j: usize, k: usize) -> Vec<f64> {
        let np = self.pair_count();
        let p = self.pair_index(j, k);
        self.values.iter().skip(p).step_by(np).copied().collect()
    }

    /// Discrete `(∇·σ)_j = Σ_k (σ_{jk}(x) - σ_{jk}(x - e_k))`, placed on the edge `(x, x+e_j)`.
    pub fn divergence(&self) -> VectorField {
        let g = self.grid;
        let d = g.dim;
        let values = (0..g.len() * d)
            .into_par_iter()
            .map(|n| {
                let (i, j) = (n / d, n % d);
                let mut s = 0.0;
                for k in 0..d {
                    if k == j {
                        continue;
                    }
                    let here = self.get(i, j, k);
                    let back = g.neighbor(i, k, -1).map_or(0.0, |m| self.get(m, j, k));
                    s += here - back;
                }
                s
            })
            .collect();
        VectorField { grid: g, values }
    }
}

/// Forward-difference gradient.
pub fn grad(u: &ScalarField) -> VectorField {
    let g = u.grid;
    let d = g.dim;
    let values = (0..g.len() * d)
        .into_par_iter()
        .map(|n| {
            let (i, j) = (n / d, n % d);
            g.neighbor(i, j, 1).map_or(0.0, |k| u.values[k] - u.values[i])
        })
        .collect();
    VectorField { grid: g, values }
}

/// Backward-difference divergence, the negative adjoint of [`grad`].
pub fn div(f: &VectorField) -> ScalarField {
    let g = f.grid;
    let d = g.dim;
    let values = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for j in 0..d {
                if g.neighbor(i, j, 1).is_some() {
                    s += f.get(i, j);
                }
                if let Some(m) = g.neighbor(i, j, -1) {
                    s -= f.get(m, j);
                }
            }
            s
        })
        .collect();
    ScalarField { grid: g, values }
}

/// Read access to per-site components, used by ball statistics.
pub trait SiteComponents {
    fn grid(&self) -> &Grid;
    fn component_count(&self) -> usize;
    fn component(&self, idx: usize, c: usize) -> f64;
    /// Multiplicity of a component in the pointwise squared norm.
    fn weight(&self, _c: usize) -> f64 {
        1.0
    }
}

impl SiteComponents for ScalarField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn component_count(&self) -> usize {
        1
    }
    fn component(&self, idx: usize, _c: usize) -> f64 {
        self.values[idx]
    }
}

impl SiteComponents for VectorField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn component_count(&self) -> usize {
        self.grid.dim
    }
    fn component(&self, idx: usize, c: usize) -> f64 {
        self.get(idx, c)
    }
}

impl SiteComponents for SkewTensorField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn component_count(&self) -> usize {
        self.pair_count()
    }
    fn component(&self, idx: usize, c: usize) -> f64 {
        self.values[idx * self.pair_count() + c]
    }
    // |σ|² is the Frobenius norm of the full tensor: each stored entry appears twice.
    fn weight(&self, _c: usize) -> f64 {
        2.0
    }
}

/// Several fields on one grid viewed as a single tuple-valued field.
pub struct FieldStack<'a> {
    grid: Grid,
    parts: Vec<&'a dyn SiteComponents>,
    offsets: Vec<usize>,
}

impl<'a> FieldStack<'a> {
    pub fn new(parts: Vec<&'a dyn SiteComponents>) -> Result<FieldStack<'a>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty field stack".into()))?;
        let grid = *first.grid();
        let mut offsets = Vec::with_capacity(parts.len() + 1);
        let mut total = 0;
        for p in &parts {
            grid.ensure_same(p.grid(), "field stack")?;
            offsets.push(total);
            total += p.component_count();
        }
        offsets.push(total);
        Ok(FieldStack { grid, parts, offsets })
    }

    fn locate(&self, c: usize) -> (usize, usize) {
        let p = self.offsets.partition_point(|&o| o <= c) - 1;
        (p, c - self.offsets[p])
    }
}

impl SiteComponents for FieldStack<'_> {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn component_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }
    fn component(&self, idx: usize, c: usize) -> f64 {
        let (p, local) = self.locate(c);
        self.parts[p].component(idx, local)
    }
    fn weight(&self, c: usize) -> f64 {
        let (p, local) = self.locate(c);
        self.parts[p].weight(local)
    }
}

/// Closed Euclidean ball `{x : dist(x, center) ≤ radius}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ball {
    pub center: Site,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Site, radius: f64) -> Ball {
        Ball { center, radius }
    }

    /// Member sites as storage indices, in lexicographic order of their offsets.
    ///
    /// On a window every member must lie inside the window.
    pub fn members(&self, grid: &Grid) -> Result<Vec<usize>> {
        if !(self.radius >= 0.0) {
            return Err(self.empty());
        }
        let reach = self.radius.floor() as i64;
        let mut out = Vec::new();
        if grid.periodic && 2 * reach >= grid.side as i64 {
            // the offset cube would alias; test every site instead
            for i in 0..grid.len() {
                if grid.distance(grid.site(i), self.center) <= self.radius {
                    out.push(i);
                }
            }
        } else {
            let r2 = self.radius * self.radius;
            let d = grid.dim;
            let span = (2 * reach + 1) as usize;
            let count = span.pow(d as u32);
            for n in 0..count {
                let mut off = [0i64; MAX_DIM];
                let mut rem = n;
                for j in (0..d).rev() {
                    off[j] = (rem % span) as i64 - reach;
                    rem /= span;
                }
                let dist2: i64 = off.iter().map(|o| o * o).sum();
                if dist2 as f64 > r2 {
                    continue;
                }
                let site = self.center.offset(Site(off));
                match grid.index(site) {
                    Some(i) => out.push(i),
                    None => {
                        return Err(Error::BallOutsideDomain {
                            center: self.center.0,
                            radius: self.radius,
                        })
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(self.empty());
        }
        Ok(out)
    }

    fn empty(&self) -> Error {
        Error::EmptyBall { center: self.center.0, radius: self.radius }
    }
}

/// Componentwise arithmetic mean over the ball.
pub fn ball_mean<F: SiteComponents + ?Sized>(f: &F, ball: &Ball) -> Result<Vec<f64>> {
    let members = ball.members(f.grid())?;
    Ok(mean_over(f, &members))
}

fn mean_over<F: SiteComponents + ?Sized>(f: &F, members: &[usize]) -> Vec<f64> {
    let n = members.len() as f64;
    (0..f.component_count())
        .map(|c| members.iter().map(|&i| f.component(i, c)).sum::<f64>() / n)
        .collect()
}

/// `(mean_B |f - mean_B f|²)^{1/2}`, summing squares over all components.
pub fn ball_l2_dev<F: SiteComponents + ?Sized>(f: &F, ball: &Ball) -> Result<f64> {
    let members = ball.members(f.grid())?;
    Ok(l2_dev_over(f, &members))
}

pub(crate) fn l2_dev_over<F: SiteComponents + ?Sized>(f: &F, members: &[usize]) -> f64 {
    let means = mean_over(f, members);
    let n = members.len() as f64;
    let mut total = 0.0;
    for (c, m) in means.iter().enumerate() {
        let w = f.weight(c);
        let s: f64 = members.iter().map(|&i| (f.component(i, c) - m).powi(2)).sum();
        total += w * s;
    }
    (total / n).sqrt()
}

/// Piecewise linear cutoff: 1 on `B_r(center)`, 0 outside `B_{2r}(center)`,
/// linear in the distance in between.
pub fn cutoff_eta(grid: &Grid, center: Site, r: f64) -> Result<ScalarField> {
    if !(r > 0.0) {
        return Err(Error::CutoffTooLarge { radius: r, reason: "radius must be positive".into() });
    }
    if grid.periodic {
        if 2.0 * r >= grid.side as f64 / 2.0 {
            return Err(Error::CutoffTooLarge {
                radius: r,
                reason: format!("2r must be below L/2 = {}", grid.side as f64 / 2.0),
            });
        }
    } else {
        // the support plus one layer must stay inside the window
        let reach = (2.0 * r).ceil() as i64 + 1;
        for j in 0..grid.dim {
            let lo = grid.origin.0[j];
            let hi = lo + grid.side as i64 - 1;
            if center.0[j] - reach < lo || center.0[j] + reach > hi {
                return Err(Error::CutoffTooLarge {
                    radius: r,
                    reason: "support leaves the window".into(),
                });
            }
        }
    }
    Ok(ScalarField::from_fn(*grid, |x| {
        let dist = grid.distance(x, center);
        (2.0 - dist / r).clamp(0.0, 1.0)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn torus(d: usize, l: usize) -> Grid {
        Grid::torus(d, l).unwrap()
    }

    fn delta(g: Grid, at: Site) -> ScalarField {
        ScalarField::from_fn(g, |x| if g.index(x) == g.index(at) { 1.0 } else { 0.0 })
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::torus(1, 8).is_err());
        assert!(Grid::torus(4, 8).is_err());
        assert!(Grid::torus(2, 3).is_err());
        assert_eq!(torus(3, 5).len(), 125);
    }

    #[test]
    fn index_round_trip_and_wrap() {
        let g = torus(3, 5);
        for i in 0..g.len() {
            assert_eq!(g.index(g.site(i)), Some(i));
        }
        assert_eq!(g.index(Site::new(&[-1, 5, 7])), g.index(Site::new(&[4, 0, 2])));
        let w = Grid::window(2, Site::new(&[-2, -2]), 5).unwrap();
        assert_eq!(w.index(Site::new(&[-3, 0])), None);
        assert_eq!(w.site(0), Site::new(&[-2, -2]));
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = torus(2, 6);
        let u = ScalarField::from_fn(g, |_| 2.5);
        assert!(grad(&u).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_delta_has_four_entries() {
        let g = torus(2, 4);
        let gu = grad(&delta(g, Site::ORIGIN));
        let mut nz: Vec<f64> = gu.values().iter().copied().filter(|&v| v != 0.0).collect();
        nz.sort_by(f64::total_cmp);
        assert_eq!(nz, vec![-1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn gradient_of_ramp_wraps() {
        let l = 6;
        let g = torus(2, l);
        let u = ScalarField::from_fn(g, |x| x.0[0] as f64);
        let gu = grad(&u);
        for i in 0..g.len() {
            let expect = if g.site(i).0[0] == l as i64 - 1 { 1.0 - l as f64 } else { 1.0 };
            assert_eq!(gu.get(i, 0), expect);
            assert_eq!(gu.get(i, 1), 0.0);
        }
    }

    #[test]
    fn divergence_of_constant_field_vanishes() {
        let g = torus(3, 4);
        let f = VectorField::from_fn(g, |_, j| 1.0 + j as f64);
        assert!(div(&f).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_of_gradient_is_five_point_stencil() {
        let g = torus(2, 4);
        let lap = div(&grad(&delta(g, Site::ORIGIN)));
        for i in 0..g.len() {
            let x = g.site(i);
            let dist = g.distance(x, Site::ORIGIN);
            let expect = if dist == 0.0 {
                -4.0
            } else if dist == 1.0 {
                1.0
            } else {
                0.0
            };
            assert_eq!(lap.values()[i], expect, "site {x:?}");
        }
    }

    #[test]
    fn window_summation_by_parts() {
        let w = Grid::window(2, Site::new(&[3, -1]), 7).unwrap();
        let u = ScalarField::from_fn(w, |x| (x.0[0] * 3 - x.0[1]) as f64 * 0.1);
        let f = VectorField::from_fn(w, |x, j| ((x.0[0] + 2 * x.0[1]) as f64).cos() + j as f64);
        let lhs = crate::reduce::dot(u.values(), div(&f).values());
        let rhs = crate::reduce::dot(grad(&u).values(), f.values());
        assert_abs_diff_eq!(lhs + rhs, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ball_mean_of_ramp() {
        let g = torus(2, 8);
        let f = ScalarField::from_fn(g, |x| x.0[0] as f64);
        let b = Ball::new(Site::new(&[3, 3]), 1.0);
        assert_eq!(b.members(&g).unwrap().len(), 5);
        assert_eq!(ball_mean(&f, &b).unwrap(), vec![3.0]);
        let c = ScalarField::from_fn(g, |_| 3.0);
        assert_eq!(ball_mean(&c, &Ball::new(Site::ORIGIN, 2.5)).unwrap(), vec![3.0]);
    }

    #[test]
    fn empty_ball_is_an_error() {
        let g = torus(2, 8);
        let f = ScalarField::zeros(g);
        let b = Ball::new(Site::ORIGIN, -0.5);
        assert!(matches!(ball_mean(&f, &b), Err(Error::EmptyBall { .. })));
    }

    #[test]
    fn large_ball_on_torus_has_no_duplicates() {
        let g = torus(2, 6);
        let members = Ball::new(Site::ORIGIN, 10.0).members(&g).unwrap();
        assert_eq!(members.len(), 36);
    }

    #[test]
    fn deviation_of_two_point_alternation() {
        // window sites (0,0) and (1,0) on a 3x3 window; a radius-0.5 ball is one site,
        // so use a stack-free two-site check via a tailored ball on a torus
        let g = torus(2, 4);
        let f = ScalarField::from_fn(g, |x| if (x.0[0] + x.0[1]) % 2 == 0 { 1.0 } else { -1.0 });
        let members = vec![g.index(Site::new(&[0, 0])).unwrap(), g.index(Site::new(&[1, 0])).unwrap()];
        assert_abs_diff_eq!(l2_dev_over(&f, &members), 1.0, epsilon = 1e-15);
        let b = Ball::new(Site::new(&[1, 1]), 1.5);
        let shifted = ScalarField::from_fn(g, |x| f.at(x).unwrap() + 7.0);
        assert_abs_diff_eq!(
            ball_l2_dev(&f, &b).unwrap(),
            ball_l2_dev(&shifted, &b).unwrap(),
            epsilon = 1e-13
        );
        let c = ScalarField::from_fn(g, |_| -2.0);
        assert_eq!(ball_l2_dev(&c, &b).unwrap(), 0.0);
    }

    #[test]
    fn skew_storage_is_exactly_antisymmetric() {
        let g = torus(3, 4);
        let mut s = SkewTensorField::zeros(g);
        let vals: Vec<f64> = (0..g.len()).map(|i| i as f64 * 0.3 - 1.0).collect();
        s.set_pair(0, 2, &vals);
        s.set_pair(1, 2, &vals.iter().map(|v| v * v).collect::<Vec<_>>());
        for i in 0..g.len() {
            for j in 0..3 {
                assert_eq!(s.get(i, j, j), 0.0);
                for k in 0..3 {
                    assert_eq!(s.get(i, j, k) + s.get(i, k, j), 0.0);
                }
            }
        }
        assert_eq!(s.pair_values(0, 2), vals);
    }

    #[test]
    fn cutoff_values() {
        let g = torus(2, 64);
        let r = 6.0;
        let eta = cutoff_eta(&g, Site::ORIGIN, r).unwrap();
        for i in 0..g.len() {
            let dist = g.distance(g.site(i), Site::ORIGIN);
            let v = eta.values()[i];
            if dist <= r {
                assert_eq!(v, 1.0);
            } else if dist >= 2.0 * r {
                assert_eq!(v, 0.0);
            }
        }
        let x = Site::new(&[9, 0]);
        assert!((eta.at(x).unwrap() - 0.5).abs() <= 1.0 / r);
        let ge = grad(&eta);
        for i in 0..g.len() {
            let n: f64 = ge.site_vector(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n <= 2.0 / r + 1e-12);
        }
        assert!(matches!(
            cutoff_eta(&g, Site::ORIGIN, 16.0),
            Err(Error::CutoffTooLarge { .. })
        ));
    }
}
