//! Aggregation multigrid on structured grids.
//!
//! Blocks of `2^d` cells are merged into one coarse cell. With piecewise
//! constant interpolation the Galerkin coarse operator of a conductance graph
//! is again a nearest-neighbour conductance graph: the coarse edge between two
//! blocks carries the sum of the fine edges crossing their interface and
//! Dirichlet sinks add up. Smoothing is red-black Gauss–Seidel, the cycle is a
//! symmetric W-cycle, so the result is a valid CG preconditioner.

use nalgebra::{DMatrix, DVector};

use super::operator::Operator;
use crate::lattice::MAX_DIM;

const NONE: u32 = u32::MAX;
const COARSEST_MAX: usize = 64;
const DENSE_MAX: usize = 4096;
const SWEEPS: usize = 2;

struct Level {
    dim: usize,
    n: usize,
    periodic: bool,
    /// conductance of the edge to the `+e_j` neighbour, `[i * dim + j]`
    cond: Vec<f64>,
    diag: Vec<f64>,
    plus: Vec<Vec<u32>>,
    minus: Vec<Vec<u32>>,
    color: Vec<bool>,
    /// coarse cell of each cell (empty on the coarsest level)
    parent: Vec<u32>,
}

enum Coarsest {
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Sweeps(usize),
}

pub(crate) struct Multigrid {
    levels: Vec<Level>,
    coarsest: Coarsest,
    /// operator grid index of each level-0 cell
    embed: Vec<u32>,
    singular: bool,
}

fn coords(i: usize, n: usize, dim: usize) -> [usize; MAX_DIM] {
    let mut c = [0; MAX_DIM];
    let mut rem = i;
    for j in (0..dim).rev() {
        c[j] = rem % n;
        rem /= n;
    }
    c
}

fn index(c: &[usize; MAX_DIM], n: usize, dim: usize) -> usize {
    c[..dim].iter().fold(0, |acc, &v| acc * n + v)
}

impl Level {
    fn new(dim: usize, n: usize, periodic: bool, cond: Vec<f64>, sink: Vec<f64>) -> Level {
        let len = n.pow(dim as u32);
        let mut plus = vec![vec![NONE; len]; dim];
        let mut minus = vec![vec![NONE; len]; dim];
        let mut color = vec![false; len];
        for i in 0..len {
            let c = coords(i, n, dim);
            color[i] = c[..dim].iter().sum::<usize>() % 2 == 1;
            for j in 0..dim {
                let mut p = c;
                if c[j] + 1 < n {
                    p[j] += 1;
                    plus[j][i] = index(&p, n, dim) as u32;
                } else if periodic {
                    p[j] = 0;
                    plus[j][i] = index(&p, n, dim) as u32;
                }
                let mut m = c;
                if c[j] > 0 {
                    m[j] -= 1;
                    minus[j][i] = index(&m, n, dim) as u32;
                } else if periodic {
                    m[j] = n - 1;
                    minus[j][i] = index(&m, n, dim) as u32;
                }
            }
        }
        let mut diag = sink;
        for i in 0..len {
            for j in 0..dim {
                diag[i] += cond[i * dim + j];
                let m = minus[j][i];
                if m != NONE {
                    diag[i] += cond[m as usize * dim + j];
                }
            }
        }
        Level { dim, n, periodic, cond, diag, plus, minus, color, parent: Vec::new() }
    }

    fn len(&self) -> usize {
        self.diag.len()
    }

    fn offdiag_sum(&self, x: &[f64], i: usize) -> f64 {
        let mut s = 0.0;
        for j in 0..self.dim {
            let p = self.plus[j][i];
            if p != NONE {
                s += self.cond[i * self.dim + j] * x[p as usize];
            }
            let m = self.minus[j][i];
            if m != NONE {
                s += self.cond[m as usize * self.dim + j] * x[m as usize];
            }
        }
        s
    }

    fn residual(&self, b: &[f64], x: &[f64], r: &mut [f64]) {
        for i in 0..self.len() {
            r[i] = b[i] - (self.diag[i] * x[i] - self.offdiag_sum(x, i));
        }
    }

    fn sweep(&self, b: &[f64], x: &mut [f64], color: bool) {
        for i in 0..self.len() {
            if self.color[i] == color {
                x[i] = (b[i] + self.offdiag_sum(x, i)) / self.diag[i];
            }
        }
    }

    fn can_coarsen(&self) -> bool {
        if self.len() <= COARSEST_MAX {
            return false;
        }
        if self.periodic {
            self.n.is_multiple_of(2) && self.n >= 4
        } else {
            self.n >= 3
        }
    }

    /// Galerkin coarse level for piecewise constant aggregation.
    #[allow(clippy::needless_range_loop)]
    fn coarsen(&mut self, sink: &[f64]) -> (Level, Vec<f64>) {
        let dim = self.dim;
        let nc = if self.periodic { self.n / 2 } else { self.n.div_ceil(2) };
        let lenc = nc.pow(dim as u32);
        self.parent = (0..self.len())
            .map(|i| {
                let mut c = coords(i, self.n, dim);
                c[..dim].iter_mut().for_each(|v| *v /= 2);
                index(&c, nc, dim) as u32
            })
            .collect();
        let mut cond = vec![0.0; lenc * dim];
        let mut csink = vec![0.0; lenc];
        for i in 0..self.len() {
            let pi = self.parent[i] as usize;
            csink[pi] += sink[i];
            for j in 0..dim {
                let p = self.plus[j][i];
                if p == NONE {
                    continue;
                }
                let pp = self.parent[p as usize] as usize;
                if pp != pi {
                    cond[pi * dim + j] += self.cond[i * dim + j];
                }
            }
        }
        (Level::new(dim, nc, self.periodic, cond, csink.clone()), csink)
    }
}

impl Multigrid {
    pub(crate) fn new(op: &Operator) -> Multigrid {
        let grid = *op.grid();
        let dim = grid.dim();
        let (n, periodic, embed): (usize, bool, Vec<u32>) = if grid.is_periodic() {
            (grid.side(), true, (0..grid.len() as u32).collect())
        } else {
            let mask = op.unknown_mask().expect("window operators carry a mask");
            let embed: Vec<u32> = (0..grid.len()).filter(|&i| mask[i]).map(|i| i as u32).collect();
            (grid.side() - 2, false, embed)
        };
        assert_eq!(embed.len(), n.pow(dim as u32), "unknowns must form a cube");
        let len = embed.len();
        let mut position = vec![NONE; grid.len()];
        for (k, &i) in embed.iter().enumerate() {
            position[i as usize] = k as u32;
        }
        let mut cond = vec![0.0; len * dim];
        let mut sink = vec![0.0; len];
        for (k, &i) in embed.iter().enumerate() {
            let i = i as usize;
            for j in 0..dim {
                let w = op.edge_weight(i, j);
                match grid.neighbor(i, j, 1) {
                    Some(p) if position[p] != NONE => cond[k * dim + j] = w,
                    _ => sink[k] += w,
                }
                if let Some(m) = grid.neighbor(i, j, -1) {
                    if position[m] == NONE {
                        sink[k] += op.edge_weight(m, j);
                    }
                }
            }
        }
        let mut levels = vec![Level::new(dim, n, periodic, cond, sink.clone())];
        while levels.last().unwrap().can_coarsen() {
            let (next, csink) = levels.last_mut().unwrap().coarsen(&sink);
            sink = csink;
            levels.push(next);
        }
        let last = levels.last().unwrap();
        let singular = periodic;
        let coarsest = if last.len() <= DENSE_MAX {
            let m = last.len();
            let mut a = DMatrix::zeros(m, m);
            for i in 0..m {
                a[(i, i)] += last.diag[i];
                for j in 0..dim {
                    let p = last.plus[j][i];
                    if p != NONE {
                        let c = last.cond[i * dim + j];
                        a[(i, p as usize)] -= c;
                        a[(p as usize, i)] -= c;
                    }
                }
            }
            if singular {
                let shift = last.diag.iter().sum::<f64>() / (m * m) as f64;
                a.add_scalar_mut(shift);
            }
            match a.cholesky() {
                Some(ch) => Coarsest::Dense(ch),
                None => Coarsest::Sweeps(50),
            }
        } else {
            Coarsest::Sweeps(50)
        };
        Multigrid { levels, coarsest, embed, singular }
    }

    /// `z ≈ A^{-1} r` on the unknowns of the operator grid.
    pub(crate) fn apply(&self, r: &[f64], z: &mut [f64]) {
        let b: Vec<f64> = self.embed.iter().map(|&i| r[i as usize]).collect();
        let x = self.cycle(0, &b);
        z.iter_mut().for_each(|v| *v = 0.0);
        for (k, &i) in self.embed.iter().enumerate() {
            z[i as usize] = x[k];
        }
    }

    fn cycle(&self, k: usize, b: &[f64]) -> Vec<f64> {
        let level = &self.levels[k];
        if k + 1 == self.levels.len() {
            return self.solve_coarsest(b);
        }
        let mut x = vec![0.0; level.len()];
        for _ in 0..SWEEPS {
            level.sweep(b, &mut x, false);
            level.sweep(b, &mut x, true);
        }
        // two coarse visits (W-cycle)
        for _ in 0..2 {
            let mut r = vec![0.0; level.len()];
            level.residual(b, &x, &mut r);
            let mut rc = vec![0.0; self.levels[k + 1].len()];
            for (i, &p) in level.parent.iter().enumerate() {
                rc[p as usize] += r[i];
            }
            let xc = self.cycle(k + 1, &rc);
            for (i, &p) in level.parent.iter().enumerate() {
                x[i] += xc[p as usize];
            }
        }
        for _ in 0..SWEEPS {
            level.sweep(b, &mut x, true);
            level.sweep(b, &mut x, false);
        }
        x
    }

    fn solve_coarsest(&self, b: &[f64]) -> Vec<f64> {
        let level = self.levels.last().unwrap();
        match &self.coarsest {
            Coarsest::Dense(ch) => {
                let mut rhs = DVector::from_column_slice(b);
                if self.singular {
                    let mean = rhs.mean();
                    rhs.add_scalar_mut(-mean);
                }
                ch.solve(&rhs).as_slice().to_vec()
            }
            Coarsest::Sweeps(n) => {
                let mut x = vec![0.0; level.len()];
                for _ in 0..*n {
                    level.sweep(b, &mut x, false);
                    level.sweep(b, &mut x, true);
                }
                for _ in 0..*n {
                    level.sweep(b, &mut x, true);
                    level.sweep(b, &mut x, false);
                }
                x
            }
        }
    }
}
