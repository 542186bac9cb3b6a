//! Uniform node lattices over a bounding box, the interior mask encoding the
//! domain, grid functions with zero Dirichlet extension, and quadrature.

use std::collections::VecDeque;
use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::par;

const NONE: u32 = u32::MAX;

/// Membership predicate for the domain. Node membership is strict: nodes on
/// the boundary belong to the exterior, where functions vanish.
pub type Membership = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

#[derive(Clone)]
pub enum DomainShape {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Predicate { name: String, test: Membership },
}

impl fmt::Debug for DomainShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainShape::Box { lo, hi } => f.debug_struct("Box").field("lo", lo).field("hi", hi).finish(),
            DomainShape::Ball { center, radius } => f
                .debug_struct("Ball")
                .field("center", center)
                .field("radius", radius)
                .finish(),
            DomainShape::Predicate { name, .. } => f.debug_struct("Predicate").field("name", name).finish(),
        }
    }
}

impl DomainShape {
    pub fn unit_box(dim: usize) -> Self {
        DomainShape::Box {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            DomainShape::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(&xi, (&l, &h))| {
                let slack = 1e-12 * (h - l).abs().max(1.0);
                xi > l + slack && xi < h - slack
            }),
            DomainShape::Ball { center, radius } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                r2.sqrt() < radius * (1.0 - 1e-12)
            }
            DomainShape::Predicate { test, .. } => test(x),
        }
    }

    /// Concentric copy at half linear size; `None` for predicates.
    pub fn concentric_half(&self) -> Option<DomainShape> {
        match self {
            DomainShape::Box { lo, hi } => {
                let (mut l2, mut h2) = (lo.clone(), hi.clone());
                for j in 0..lo.len() {
                    let c = 0.5 * (lo[j] + hi[j]);
                    let r = 0.25 * (hi[j] - lo[j]);
                    l2[j] = c - r;
                    h2[j] = c + r;
                }
                Some(DomainShape::Box { lo: l2, hi: h2 })
            }
            DomainShape::Ball { center, radius } => Some(DomainShape::Ball {
                center: center.clone(),
                radius: 0.5 * radius,
            }),
            DomainShape::Predicate { .. } => None,
        }
    }
}

/// Uniform lattice with `res[j]` nodes per axis (faces included) and the set
/// of interior nodes, stored in lexicographic (row-major) order.
#[derive(Clone, Debug)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    res: Vec<usize>,
    h: Vec<f64>,
    strides: Vec<usize>,
    cell_volume: f64,
    interior: Vec<usize>,
    lattice_to_interior: Vec<u32>,
    coords: Vec<f64>,
    shape: DomainShape,
}

pub fn build_grid(shape: DomainShape, lo: &[f64], hi: &[f64], res: &[usize]) -> Result<Grid> {
    let dim = res.len();
    if dim == 0 || lo.len() != dim || hi.len() != dim {
        return Err(Error::invalid(
            "grid dimensions",
            "lo, hi and res must have the same nonzero length",
        ));
    }
    if let Some(&r) = res.iter().find(|&&r| r < 3) {
        return Err(Error::invalid("res >= 3", format!("got {r} nodes on an axis")));
    }
    if lo
        .iter()
        .zip(hi)
        .any(|(l, h)| !(h > l) || !l.is_finite() || !h.is_finite())
    {
        return Err(Error::invalid("bounding box", "hi must exceed lo on every axis"));
    }
    let h: Vec<f64> = (0..dim).map(|j| (hi[j] - lo[j]) / (res[j] - 1) as f64).collect();
    let mut strides = vec![1; dim];
    for j in (0..dim - 1).rev() {
        strides[j] = strides[j + 1] * res[j + 1];
    }
    let lattice_len = strides[0] * res[0];
    if lattice_len >= NONE as usize {
        return Err(Error::invalid("grid size", "lattice too large"));
    }
    let mut lattice_to_interior = vec![NONE; lattice_len];
    let mut interior = Vec::new();
    let mut coords = Vec::new();
    let mut x = vec![0.0; dim];
    let mut idx = vec![0usize; dim];
    for l in 0..lattice_len {
        let mut rem = l;
        for j in 0..dim {
            idx[j] = rem / strides[j];
            rem %= strides[j];
            x[j] = lo[j] + idx[j] as f64 * h[j];
        }
        let on_face = idx.iter().zip(res).any(|(&i, &r)| i == 0 || i == r - 1);
        if !on_face && shape.contains(&x) {
            lattice_to_interior[l] = interior.len() as u32;
            interior.push(l);
            coords.extend_from_slice(&x);
        }
    }
    if interior.is_empty() {
        return Err(Error::EmptyInterior(format!(
            "no lattice node of res {res:?} lies strictly inside {shape:?}"
        )));
    }
    let cell_volume = h.iter().product();
    Ok(Grid {
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        res: res.to_vec(),
        h,
        strides,
        cell_volume,
        interior,
        lattice_to_interior,
        coords,
        shape,
    })
}

impl Grid {
    /// Box domain equal to its own bounding box.
    pub fn boxed(lo: &[f64], hi: &[f64], res: &[usize]) -> Result<Grid> {
        build_grid(
            DomainShape::Box {
                lo: lo.to_vec(),
                hi: hi.to_vec(),
            },
            lo,
            hi,
            res,
        )
    }

    pub fn dim(&self) -> usize {
        self.res.len()
    }

    /// Number of interior nodes.
    pub fn len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn res(&self) -> &[usize] {
        &self.res
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn shape(&self) -> &DomainShape {
        &self.shape
    }

    pub fn lattice_len(&self) -> usize {
        self.lattice_to_interior.len()
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Lattice indices of the interior nodes, in order.
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn interior_index(&self, lattice: usize) -> Option<usize> {
        match self.lattice_to_interior[lattice] {
            NONE => None,
            k => Some(k as usize),
        }
    }

    /// Coordinates of interior node `k`.
    pub fn node(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[k * d..(k + 1) * d]
    }

    pub fn lattice_coords(&self, lattice: usize, out: &mut [f64]) {
        let mut rem = lattice;
        for j in 0..self.dim() {
            let i = rem / self.strides[j];
            rem %= self.strides[j];
            out[j] = self.lo[j] + i as f64 * self.h[j];
        }
    }

    pub fn axis_index(&self, lattice: usize, axis: usize) -> usize {
        (lattice / self.strides[axis]) % self.res[axis]
    }

    /// Lattice neighbour along `axis` in direction `step` (+1 or -1).
    pub fn neighbor(&self, lattice: usize, axis: usize, step: isize) -> Option<usize> {
        let i = self.axis_index(lattice, axis) as isize + step;
        if i < 0 || i >= self.res[axis] as isize {
            None
        } else if step > 0 {
            Some(lattice + self.strides[axis])
        } else {
            Some(lattice - self.strides[axis])
        }
    }

    /// Total measure of the discrete domain.
    pub fn measure(&self) -> f64 {
        self.len() as f64 * self.cell_volume
    }

    /// Whether the interior is connected through axis neighbours.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(k) = queue.pop_front() {
            let l = self.interior[k];
            for axis in 0..self.dim() {
                for step in [-1, 1] {
                    if let Some(m) = self.neighbor(l, axis, step).and_then(|n| self.interior_index(n)) {
                        if !seen[m] {
                            seen[m] = true;
                            count += 1;
                            queue.push_back(m);
                        }
                    }
                }
            }
        }
        count == self.len()
    }

    /// Interior nodes lying in `omega`.
    pub fn nodes_in(&self, omega: &DomainShape) -> Vec<usize> {
        (0..self.len()).filter(|&k| omega.contains(self.node(k))).collect()
    }
}

/// One value per interior node; zero outside the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction(Vec<f64>);

impl GridFunction {
    pub fn zeros(grid: &Grid) -> Self {
        Self(vec![0.0; grid.len()])
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self(vec![c; grid.len()])
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64 + Sync + Send) -> Self {
        let mut v = vec![0.0; grid.len()];
        par::fill(&mut v, |k| f(grid.node(k)));
        Self(v)
    }

    /// Rejects non-finite entries.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "finite grid values",
                format!("entry {i} is {}", values[i]),
            ));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &Self) -> Self {
        self.zip_map(other, |x, y| x + a * y)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Riemann sum `sum_interior u(x) * cell_volume`.
pub fn integrate(grid: &Grid, u: &GridFunction) -> f64 {
    let v = u.values();
    par::sum(v.len(), |k| v[k]) * grid.cell_volume()
}

/// `<u, v>` with the quadrature weight.
pub fn inner(grid: &Grid, u: &GridFunction, v: &GridFunction) -> f64 {
    let (a, b) = (u.values(), v.values());
    par::sum(a.len(), |k| a[k] * b[k]) * grid.cell_volume()
}

pub fn lp_norm(grid: &Grid, u: &GridFunction, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::invalid("p >= 1", format!("lp_norm called with p = {p}")));
    }
    let v = u.values();
    let scale = u.max_abs();
    if scale == 0.0 {
        return Ok(0.0);
    }
    // factor out the max so |u|^p does not overflow for large p
    let s = par::sum(v.len(), |k| (v[k].abs() / scale).powf(p)) * grid.cell_volume();
    Ok(scale * s.powf(1.0 / p))
}

/// Grid `L^2` norm, the norm used for first variations.
pub fn l2_norm(grid: &Grid, u: &GridFunction) -> f64 {
    inner(grid, u, u).sqrt()
}

/// Writes `x1..xN,value` rows for the interior nodes.
pub fn write_csv<W: Write>(grid: &Grid, columns: &[(&str, &GridFunction)], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header: Vec<String> = (1..=grid.dim()).map(|j| format!("x{j}")).collect();
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    w.write_record(&header)?;
    for k in 0..grid.len() {
        let mut row: Vec<String> = grid.node(k).iter().map(|v| format!("{v}")).collect();
        row.extend(columns.iter().map(|(_, f)| format!("{}", f.values()[k])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a grid function from `x1..xN,value` rows. Rows are matched to nodes
/// by rounding coordinates to the lattice; every interior node must appear.
pub fn read_csv<R: Read>(grid: &Grid, input: R) -> Result<GridFunction> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let dim = grid.dim();
    let mut values = vec![f64::NAN; grid.len()];
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != dim + 1 {
            return Err(Error::Config(format!(
                "CSV row has {} fields, expected {}",
                rec.len(),
                dim + 1
            )));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("CSV value {s:?}: {e}")))
        };
        let mut lattice = 0usize;
        let mut inside = true;
        for j in 0..dim {
            let x = parse(&rec[j])?;
            let i = ((x - grid.lo()[j]) / grid.spacing()[j]).round();
            if i < 0.0 || i >= grid.res()[j] as f64 {
                inside = false;
                break;
            }
            lattice += i as usize * grid.strides()[j];
        }
        if !inside {
            continue;
        }
        if let Some(k) = grid.interior_index(lattice) {
            values[k] = parse(&rec[dim])?;
        }
    }
    if let Some(k) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::Config(format!(
            "CSV has no value for interior node {:?}",
            grid.node(k)
        )));
    }
    GridFunction::from_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_box_interior_count() {
        let g = Grid::boxed(&[0.0; 3], &[1.0; 3], &[5, 5, 5]).unwrap();
        assert_eq!(g.len(), 27);
        assert!(g.is_connected());
        assert_eq!(g.cell_volume(), 0.25f64.powi(3));
    }

    #[test]
    fn empty_ball_is_rejected() {
        let shape = DomainShape::Ball {
            center: vec![0.5, 0.5],
            radius: 0.0,
        };
        let err = build_grid(shape, &[0.0, 0.0], &[1.0, 1.0], &[9, 9]).unwrap_err();
        assert!(matches!(err, Error::EmptyInterior(_)));
    }

    #[test]
    fn res_below_three_is_rejected() {
        assert!(Grid::boxed(&[0.0], &[1.0], &[2]).is_err());
    }

    #[test]
    fn deterministic_ordering() {
        let shape = DomainShape::Ball {
            center: vec![0.0, 0.0],
            radius: 0.9,
        };
        let a = build_grid(shape.clone(), &[-1.0, -1.0], &[1.0, 1.0], &[11, 11]).unwrap();
        let b = build_grid(shape, &[-1.0, -1.0], &[1.0, 1.0], &[11, 11]).unwrap();
        assert_eq!(a.interior(), b.interior());
        assert!(a.interior().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn disconnected_interior_is_detected() {
        let shape = DomainShape::Predicate {
            name: "two slabs".into(),
            test: Arc::new(|x: &[f64]| (x[0] - 0.5).abs() > 0.2),
        };
        let g = build_grid(shape, &[0.0], &[1.0], &[21]).unwrap();
        assert!(!g.is_connected());
    }

    #[test]
    fn integrate_constants_and_linear() {
        let g = Grid::boxed(&[0.0], &[1.0], &[5]).unwrap();
        assert_eq!(integrate(&g, &GridFunction::zeros(&g)), 0.0);
        let one = GridFunction::constant(&g, 1.0);
        assert_eq!(integrate(&g, &one), 3.0 * 0.25);
        // Riemann-sum oracle for x on (0,1): h * sum_{k=1}^{M} k h = h^2 M(M+1)/2
        for res in [9usize, 33, 129] {
            let g = Grid::boxed(&[0.0], &[1.0], &[res]).unwrap();
            let u = GridFunction::from_fn(&g, |x| x[0]);
            let h = 1.0 / (res - 1) as f64;
            let m = (res - 2) as f64;
            let oracle = h * h * m * (m + 1.0) / 2.0;
            assert!((integrate(&g, &u) - oracle).abs() < 1e-14);
            assert!((integrate(&g, &u) - 0.5).abs() <= h);
        }
    }

    #[test]
    fn lp_norm_basics() {
        let g = Grid::boxed(&[0.0], &[1.0], &[101]).unwrap();
        assert_eq!(lp_norm(&g, &GridFunction::zeros(&g), 2.0).unwrap(), 0.0);
        let c = GridFunction::constant(&g, -3.0);
        let n = lp_norm(&g, &c, 3.0).unwrap();
        assert!((n - 3.0 * (0.99f64).powf(1.0 / 3.0)).abs() < 1e-12);
        assert!(lp_norm(&g, &c, 0.5).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let g = Grid::boxed(&[-1.0, 0.0], &[1.0, 2.0], &[6, 5]).unwrap();
        let u = GridFunction::from_fn(&g, |x| x[0] * x[1] + 0.1);
        let mut buf = Vec::new();
        write_csv(&g, &[("value", &u)], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,value\n"));
        assert!(!text.contains('\r'));
        let back = read_csv(&g, buf.as_slice()).unwrap();
        assert!(back.max_abs_diff(&u) < 1e-15);
    }

    #[test]
    fn probe_nodes() {
        let g = Grid::boxed(&[0.0], &[1.0], &[17]).unwrap();
        let omega = g.shape().concentric_half().unwrap();
        let nodes = g.nodes_in(&omega);
        // x in (0.25, 0.75) strictly: 0.3125 .. 0.6875
        assert_eq!(nodes.len(), 7);
    }
}
