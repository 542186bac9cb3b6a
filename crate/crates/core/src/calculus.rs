//! Discrete horizontal calculus.
//!
//! The horizontal gradient is sampled twice per lattice node: once with
//! forward differences on every axis and once with backward differences,
//! each sample weighted by `cell_volume / 2`. At an interior node the mean of
//! the two samples is the centered difference `sum_j a_ij(x) D_j u(x)`;
//! the split form keeps the discrete seminorm injective on every lattice
//! (the purely centered form has a checkerboard kernel when an axis carries
//! an odd number of interior nodes).
//!
//! A sample exists wherever its stencil touches an interior node, so samples
//! also live on the exterior ring. The divergence is assembled as the exact
//! negative adjoint of the gradient under these weights.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::group::GroupSpec;
use crate::par;

const NONE: u32 = u32::MAX;

/// `n_1` horizontal components at each gradient sample.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizontalSection {
    n_fields: usize,
    data: Vec<f64>,
}

impl HorizontalSection {
    pub fn zeros(n_samples: usize, n_fields: usize) -> Self {
        Self {
            n_fields,
            data: vec![0.0; n_samples * n_fields],
        }
    }

    pub fn from_values(n_fields: usize, data: Vec<f64>) -> Result<Self> {
        if n_fields == 0 || !data.len().is_multiple_of(n_fields) {
            return Err(Error::invalid("section shape", "length must be a multiple of n_1"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("finite section values", "non-finite component"));
        }
        Ok(Self { n_fields, data })
    }

    pub fn n_fields(&self) -> usize {
        self.n_fields
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.n_fields
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        &self.data[s * self.n_fields..(s + 1) * self.n_fields]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Euclidean length on `V_1` at sample `s`.
    pub fn length(&self, s: usize) -> f64 {
        self.sample(s).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Gradient, divergence and p-Laplacian for one grid and one group.
#[derive(Clone, Debug)]
pub struct HorizontalCalculus {
    grid: Grid,
    group: GroupSpec,
    n_fields: usize,
    n_forward: usize,
    sample_lattice: Vec<usize>,
    self_idx: Vec<u32>,
    /// samples x dim; forward samples point to `+e_j`, backward to `-e_j`
    nbr_idx: Vec<u32>,
    /// samples x n_fields x dim: `a_ij(x_s) / h_j`
    coef: Vec<f64>,
    fwd_self: Vec<u32>,
    bwd_self: Vec<u32>,
    /// interior x dim
    fwd_minus: Vec<u32>,
    bwd_plus: Vec<u32>,
    weight: f64,
    div_sign: f64,
}

impl HorizontalCalculus {
    pub fn new(grid: Grid, group: GroupSpec) -> Result<Self> {
        let dim = grid.dim();
        if dim != group.total_dim() {
            return Err(Error::invalid(
                "grid/group dimension",
                format!("grid has {dim} axes, group has N = {}", group.total_dim()),
            ));
        }
        let n_fields = group.horizontal_dim();
        let lattice_len = grid.lattice_len();
        let interior_of = |l: Option<usize>| l.and_then(|l| grid.interior_index(l));

        let mut sample_lattice = Vec::new();
        let mut self_idx = Vec::new();
        let mut nbr_idx = Vec::new();
        let mut fwd_of_lattice = vec![NONE; lattice_len];
        let mut bwd_of_lattice = vec![NONE; lattice_len];
        for (step, table) in [(1isize, &mut fwd_of_lattice), (-1isize, &mut bwd_of_lattice)] {
            for l in 0..lattice_len {
                let me = grid.interior_index(l);
                let nbrs: Vec<Option<usize>> = (0..dim).map(|j| interior_of(grid.neighbor(l, j, step))).collect();
                if me.is_none() && nbrs.iter().all(Option::is_none) {
                    continue;
                }
                table[l] = sample_lattice.len() as u32;
                sample_lattice.push(l);
                self_idx.push(me.map_or(NONE, |k| k as u32));
                nbr_idx.extend(nbrs.iter().map(|n| n.map_or(NONE, |k| k as u32)));
            }
        }
        let n_forward = fwd_of_lattice.iter().filter(|&&s| s != NONE).count();

        let n_samples = sample_lattice.len();
        let mut coef = vec![0.0; n_samples * n_fields * dim];
        let h = grid.spacing().to_vec();
        par::fill_blocks(&mut coef, n_fields * dim, |s, block| {
            let mut x = vec![0.0; dim];
            grid.lattice_coords(sample_lattice[s], &mut x);
            for i in 0..n_fields {
                for j in 0..dim {
                    block[i * dim + j] = group.coefficient(i, j, &x) / h[j];
                }
            }
        });

        let n = grid.len();
        let mut fwd_self = vec![NONE; n];
        let mut bwd_self = vec![NONE; n];
        let mut fwd_minus = vec![NONE; n * dim];
        let mut bwd_plus = vec![NONE; n * dim];
        for (k, &l) in grid.interior().iter().enumerate() {
            fwd_self[k] = fwd_of_lattice[l];
            bwd_self[k] = bwd_of_lattice[l];
            for j in 0..dim {
                // interior nodes are never on a face, so both neighbours exist
                let lm = grid.neighbor(l, j, -1).expect("interior node on lattice face");
                let lp = grid.neighbor(l, j, 1).expect("interior node on lattice face");
                fwd_minus[k * dim + j] = fwd_of_lattice[lm];
                bwd_plus[k * dim + j] = bwd_of_lattice[lp];
            }
        }
        debug_assert!(fwd_self
            .iter()
            .chain(&bwd_self)
            .chain(&fwd_minus)
            .chain(&bwd_plus)
            .all(|&s| s != NONE));

        let weight = 0.5 * grid.cell_volume();
        Ok(Self {
            grid,
            group,
            n_fields,
            n_forward,
            sample_lattice,
            self_idx,
            nbr_idx,
            coef,
            fwd_self,
            bwd_self,
            fwd_minus,
            bwd_plus,
            weight,
            div_sign: 1.0,
        })
    }

    /// Fault-injection hook: flips the sign of the divergence so that the
    /// duality check can be shown to fail.
    #[doc(hidden)]
    pub fn with_divergence_sign_flip(mut self) -> Self {
        self.div_sign = -self.div_sign;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    pub fn n_fields(&self) -> usize {
        self.n_fields
    }

    pub fn n_samples(&self) -> usize {
        self.sample_lattice.len()
    }

    /// Quadrature weight of one gradient sample.
    pub fn sample_weight(&self) -> f64 {
        self.weight
    }

    pub fn is_forward(&self, s: usize) -> bool {
        s < self.n_forward
    }

    pub fn sample_lattice(&self, s: usize) -> usize {
        self.sample_lattice[s]
    }

    #[inline]
    fn value(u: &[f64], idx: u32) -> f64 {
        if idx == NONE {
            0.0
        } else {
            u[idx as usize]
        }
    }

    pub fn gradient(&self, u: &GridFunction) -> HorizontalSection {
        let mut out = HorizontalSection::zeros(self.n_samples(), self.n_fields);
        self.gradient_into(u.values(), &mut out.data);
        out
    }

    fn gradient_into(&self, u: &[f64], out: &mut [f64]) {
        let dim = self.grid.dim();
        let nf = self.n_fields;
        par::fill_blocks(out, nf, |s, block| {
            let sign = if s < self.n_forward { 1.0 } else { -1.0 };
            let me = Self::value(u, self.self_idx[s]);
            let nbr = &self.nbr_idx[s * dim..(s + 1) * dim];
            let c = &self.coef[s * nf * dim..(s + 1) * nf * dim];
            for (i, g) in block.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..dim {
                    let cij = c[i * dim + j];
                    if cij != 0.0 {
                        acc += cij * (Self::value(u, nbr[j]) - me);
                    }
                }
                *g = sign * acc;
            }
        });
    }

    /// `sigma_s sum_i V_si a_ij / h_j`: the edge flux of sample `s` on axis `j`.
    #[inline]
    fn edge_flux(&self, v: &[f64], s: u32, j: usize) -> f64 {
        let s = s as usize;
        let dim = self.grid.dim();
        let nf = self.n_fields;
        let sign = if s < self.n_forward { 1.0 } else { -1.0 };
        let c = &self.coef[s * nf * dim..(s + 1) * nf * dim];
        let vs = &v[s * nf..(s + 1) * nf];
        let mut acc = 0.0;
        for i in 0..nf {
            acc += vs[i] * c[i * dim + j];
        }
        sign * acc
    }

    /// Negative adjoint of [`Self::gradient`]:
    /// `<grad u, V> + <u, div V> = 0` for all `u`, `V`.
    pub fn divergence(&self, v: &HorizontalSection) -> GridFunction {
        assert_eq!(v.n_fields, self.n_fields);
        assert_eq!(v.n_samples(), self.n_samples());
        let dim = self.grid.dim();
        let data = &v.data;
        let mut out = vec![0.0; self.grid.len()];
        par::fill(&mut out, |k| {
            let mut acc = 0.0;
            for j in 0..dim {
                acc -= self.edge_flux(data, self.fwd_self[k], j);
                acc -= self.edge_flux(data, self.bwd_self[k], j);
                acc += self.edge_flux(data, self.fwd_minus[k * dim + j], j);
                acc += self.edge_flux(data, self.bwd_plus[k * dim + j], j);
            }
            -0.5 * self.div_sign * acc
        });
        GridFunction::from_vec_unchecked(out)
    }

    /// Weighted pairing of two sections.
    pub fn section_inner(&self, a: &HorizontalSection, b: &HorizontalSection) -> f64 {
        let nf = self.n_fields;
        let (x, y) = (&a.data, &b.data);
        self.weight
            * par::sum(self.n_samples(), |s| {
                (0..nf).map(|i| x[s * nf + i] * y[s * nf + i]).sum::<f64>()
            })
    }

    /// `sum_s w |V_s|^p`.
    pub fn section_energy(&self, v: &HorizontalSection, p: f64) -> f64 {
        self.weight * par::sum(v.n_samples(), |s| v.length(s).powf(p))
    }

    /// `||u||^p = int |grad_H u|^p`.
    pub fn dirichlet_energy(&self, u: &GridFunction, p: f64) -> f64 {
        self.section_energy(&self.gradient(u), p)
    }

    /// `||grad_H u||_{L^p}`.
    pub fn sobolev_norm(&self, u: &GridFunction, p: f64) -> Result<f64> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::invalid(
                "1 < p < inf",
                format!("sobolev_norm called with p = {p}"),
            ));
        }
        Ok(self.dirichlet_energy(u, p).powf(1.0 / p))
    }

    /// `|V|^{p-2} V`, zero where `V = 0`.
    pub fn flux(&self, grad: &HorizontalSection, p: f64) -> HorizontalSection {
        let nf = self.n_fields;
        let mut out = HorizontalSection::zeros(grad.n_samples(), nf);
        par::fill_blocks(&mut out.data, nf, |s, block| {
            let g = grad.sample(s);
            let len = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len > 0.0 {
                let scale = if p == 2.0 { 1.0 } else { len.powf(p - 2.0) };
                for (o, gi) in block.iter_mut().zip(g) {
                    *o = scale * gi;
                }
            }
        });
        out
    }

    /// `-div_H(|grad_H u|^{p-2} grad_H u)`.
    pub fn p_laplacian(&self, u: &GridFunction, p: f64) -> GridFunction {
        let flux = self.flux(&self.gradient(u), p);
        self.divergence(&flux).scaled(-1.0)
    }

    /// Mean of the forward and backward samples at each interior node, i.e.
    /// the centered difference. Laid out as interior x n_1.
    pub fn centered_gradient(&self, u: &GridFunction) -> Vec<f64> {
        let grad = self.gradient(u);
        let nf = self.n_fields;
        let mut out = vec![0.0; self.grid.len() * nf];
        par::fill_blocks(&mut out, nf, |k, block| {
            let f = grad.sample(self.fwd_self[k] as usize);
            let b = grad.sample(self.bwd_self[k] as usize);
            for i in 0..nf {
                block[i] = 0.5 * (f[i] + b[i]);
            }
        });
        out
    }

    /// CSV of the centered gradient: `x1..xN, X1..Xn1`.
    pub fn write_gradient_csv<W: Write>(&self, u: &GridFunction, out: W) -> Result<()> {
        let cg = self.centered_gradient(u);
        let nf = self.n_fields;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header: Vec<String> = (1..=self.grid.dim()).map(|j| format!("x{j}")).collect();
        header.extend((1..=nf).map(|i| format!("X{i}")));
        w.write_record(&header)?;
        for k in 0..self.grid.len() {
            let mut row: Vec<String> = self.grid.node(k).iter().map(|v| format!("{v}")).collect();
            row.extend(cg[k * nf..(k + 1) * nf].iter().map(|v| format!("{v}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `<|a|^{p-2} a - |b|^{p-2} b, a - b>`.
pub fn monotone_pairing(a: &[f64], b: &[f64], p: f64) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sa = if na > 0.0 { na.powf(p - 2.0) } else { 0.0 };
    let sb = if nb > 0.0 { nb.powf(p - 2.0) } else { 0.0 };
    a.iter().zip(b).map(|(&x, &y)| (sa * x - sb * y) * (x - y)).sum()
}

/// Ratio of the pairing to `(|a| + |b|)^{p-2} |a - b|^2`; `None` when `a = b`.
pub fn pairing_ratio(a: &[f64], b: &[f64], p: f64) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    if d2 == 0.0 {
        return None;
    }
    Some(monotone_pairing(a, b, p) / ((na + nb).powf(p - 2.0) * d2))
}
