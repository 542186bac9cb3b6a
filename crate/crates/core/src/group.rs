//! Carnot groups in exponential coordinates.
//!
//! A group is described by its layer dimensions `(n_1, ..., n_m)` and by the
//! horizontal vector fields `X_i = sum_j a_ij(x) d/dx_j`, `i = 1..n_1`, whose
//! coefficients are polynomials stored as monomial tables so that a spec can
//! be written into run reports and read back.
//!
//! Coordinates are grouped by layer: the first `n_1` coordinates carry weight
//! 1, the next `n_2` weight 2, and so on. Dilations act as `x_ik -> t^i x_ik`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Heisenberg coefficient convention recorded in reports.
pub const HEISENBERG_CONVENTION: &str = "symmetric: X_i = d/dx_i - (y_i/2) d/dt, Y_i = d/dy_i + (x_i/2) d/dt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// Polynomial in the `N` exponential coordinates.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64, dim: usize) -> Self {
        if c == 0.0 {
            return Self::zero();
        }
        Self {
            terms: vec![Monomial {
                coeff: c,
                powers: vec![0; dim],
            }],
        }
    }

    /// `scale * x_j`.
    pub fn linear(scale: f64, j: usize, dim: usize) -> Self {
        let mut powers = vec![0; dim];
        powers[j] = 1;
        Self {
            terms: vec![Monomial { coeff: scale, powers }],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|m| {
                m.powers
                    .iter()
                    .zip(x)
                    .fold(m.coeff, |acc, (&k, &xi)| acc * xi.powi(k as i32))
            })
            .sum()
    }

    pub fn depends_on(&self, j: usize) -> bool {
        self.terms
            .iter()
            .any(|m| m.coeff != 0.0 && m.powers.get(j).copied().unwrap_or(0) > 0)
    }

    /// The value if the polynomial has no non-constant term with a nonzero
    /// coefficient.
    pub fn as_constant(&self) -> Option<f64> {
        let mut c = 0.0;
        for m in &self.terms {
            if m.coeff == 0.0 {
                continue;
            }
            if m.powers.iter().any(|&k| k > 0) {
                return None;
            }
            c += m.coeff;
        }
        Some(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Euclidean,
    Heisenberg,
    Custom,
}

/// A stratified group with polynomial horizontal fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GroupSpecRepr", into = "GroupSpecRepr")]
pub struct GroupSpec {
    kind: GroupKind,
    layer_dims: Vec<usize>,
    weights: Vec<u32>,
    hom_dim: usize,
    /// `fields[i][j]` is `a_ij`.
    fields: Vec<Vec<Polynomial>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupSpecRepr {
    kind: GroupKind,
    layer_dims: Vec<usize>,
    fields: Vec<Vec<Polynomial>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    convention: Option<String>,
}

impl From<GroupSpec> for GroupSpecRepr {
    fn from(g: GroupSpec) -> Self {
        let convention = (g.kind == GroupKind::Heisenberg).then(|| HEISENBERG_CONVENTION.to_owned());
        Self {
            kind: g.kind,
            layer_dims: g.layer_dims,
            fields: g.fields,
            convention,
        }
    }
}

impl TryFrom<GroupSpecRepr> for GroupSpec {
    type Error = Error;

    fn try_from(r: GroupSpecRepr) -> Result<Self> {
        let mut g = GroupSpec::custom(r.layer_dims, r.fields)?;
        let reference = match r.kind {
            GroupKind::Custom => None,
            GroupKind::Euclidean => Some(GroupSpec::euclidean(g.total_dim())?),
            GroupKind::Heisenberg => {
                if g.layer_dims.len() != 2 || g.layer_dims[1] != 1 || g.layer_dims[0] % 2 != 0 {
                    return Err(Error::invalid(
                        "heisenberg layers",
                        format!("expected layer_dims (2n, 1), got {:?}", g.layer_dims),
                    ));
                }
                Some(GroupSpec::heisenberg(g.layer_dims[0] / 2)?)
            }
        };
        if let Some(reference) = reference {
            if reference.fields != g.fields {
                return Err(Error::invalid(
                    "group coefficient tables",
                    format!("tables do not match the built-in {:?} fields", r.kind),
                ));
            }
            g.kind = r.kind;
        }
        Ok(g)
    }
}

impl GroupSpec {
    /// One layer, `n_1 = N`, identity coefficients.
    pub fn euclidean(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("euclidean dimension", "N must be at least 1"));
        }
        let fields = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| Polynomial::constant(if i == j { 1.0 } else { 0.0 }, dim))
                    .collect()
            })
            .collect();
        let mut g = Self::custom(vec![dim], fields)?;
        g.kind = GroupKind::Euclidean;
        Ok(g)
    }

    /// Heisenberg group `H^n` with coordinates `(x_1..x_n, y_1..y_n, t)` and
    /// fields `X_1..X_n, Y_1..Y_n` in the symmetric convention.
    pub fn heisenberg(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("heisenberg dimension", "n must be at least 1"));
        }
        let dim = 2 * n + 1;
        let t = 2 * n;
        let mut fields = Vec::with_capacity(2 * n);
        for i in 0..n {
            let mut row = vec![Polynomial::zero(); dim];
            row[i] = Polynomial::constant(1.0, dim);
            row[t] = Polynomial::linear(-0.5, n + i, dim);
            fields.push(row);
        }
        for i in 0..n {
            let mut row = vec![Polynomial::zero(); dim];
            row[n + i] = Polynomial::constant(1.0, dim);
            row[t] = Polynomial::linear(0.5, i, dim);
            fields.push(row);
        }
        let mut g = Self::custom(vec![2 * n, 1], fields)?;
        g.kind = GroupKind::Heisenberg;
        Ok(g)
    }

    /// General polynomial-coefficient group.
    ///
    /// Checks the grading: on first-layer coordinates `a_ij = delta_ij`, and a
    /// coefficient on a layer-`k` coordinate may only depend on coordinates of
    /// layers below `k`.
    pub fn custom(layer_dims: Vec<usize>, fields: Vec<Vec<Polynomial>>) -> Result<Self> {
        if layer_dims.is_empty() || layer_dims.contains(&0) {
            return Err(Error::invalid(
                "layer_dims",
                format!("layer dimensions must be positive, got {layer_dims:?}"),
            ));
        }
        let dim: usize = layer_dims.iter().sum();
        let n1 = layer_dims[0];
        if layer_dims.len() > 1 && n1 < 2 {
            return Err(Error::invalid(
                "dim V1 >= 2",
                "a stratified group with more than one layer needs at least two horizontal fields",
            ));
        }
        if fields.len() != n1 {
            return Err(Error::invalid(
                "field count",
                format!("expected {n1} horizontal fields, got {}", fields.len()),
            ));
        }
        let weights: Vec<u32> = layer_dims
            .iter()
            .enumerate()
            .flat_map(|(k, &nk)| std::iter::repeat_n(k as u32 + 1, nk))
            .collect();
        for (i, row) in fields.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::invalid(
                    "coefficient table shape",
                    format!("field {i} has {} coefficients, expected {dim}", row.len()),
                ));
            }
            for (j, poly) in row.iter().enumerate() {
                for m in &poly.terms {
                    if m.powers.len() != dim || !m.coeff.is_finite() {
                        return Err(Error::invalid(
                            "coefficient table shape",
                            format!("a_{i}{j} has a malformed monomial"),
                        ));
                    }
                }
                if weights[j] == 1 {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    if poly.as_constant() != Some(expected) {
                        return Err(Error::invalid(
                            "stratification",
                            format!("a_{i}{j} on a first-layer coordinate must be the constant {expected}"),
                        ));
                    }
                } else if (0..dim).any(|l| weights[l] >= weights[j] && poly.depends_on(l)) {
                    return Err(Error::invalid(
                        "stratification",
                        format!("a_{i}{j} depends on a coordinate of layer >= {}", weights[j]),
                    ));
                }
            }
        }
        let hom_dim = weights.iter().map(|&w| w as usize).sum();
        Ok(Self {
            kind: GroupKind::Custom,
            layer_dims,
            weights,
            hom_dim,
            fields,
        })
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// `N`.
    pub fn total_dim(&self) -> usize {
        self.weights.len()
    }

    /// `n_1`, the number of horizontal fields.
    pub fn horizontal_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// `nu = sum_i i * n_i`.
    pub fn hom_dim(&self) -> usize {
        self.hom_dim
    }

    /// Layer index (1-based) of each coordinate.
    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    pub fn coefficient(&self, field: usize, coord: usize, x: &[f64]) -> f64 {
        self.fields[field][coord].eval(x)
    }

    pub fn fields(&self) -> &[Vec<Polynomial>] {
        &self.fields
    }

    /// `(X_i u)(x)` given the Euclidean partials of `u` at `x`.
    pub fn apply_field(&self, field: usize, x: &[f64], partials: &[f64]) -> f64 {
        self.fields[field]
            .iter()
            .zip(partials)
            .map(|(a, d)| if *d == 0.0 { 0.0 } else { a.eval(x) * d })
            .sum()
    }

    /// Horizontal gradient `(X_1 u, ..., X_{n_1} u)` from Euclidean partials.
    pub fn horizontal_from_partials(&self, x: &[f64], partials: &[f64]) -> Vec<f64> {
        (0..self.horizontal_dim())
            .map(|i| self.apply_field(i, x, partials))
            .collect()
    }
}

/// A point of the group in exponential coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(g: &GroupSpec, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != g.total_dim() {
            return Err(Error::invalid(
                "point dimension",
                format!("expected {} coordinates, got {}", g.total_dim(), coords.len()),
            ));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

pub fn homogeneous_dimension(g: &GroupSpec) -> usize {
    g.hom_dim()
}

/// `delta_t`: scales each coordinate by `t^layer`.
pub fn dilation(g: &GroupSpec, t: f64, x: &Point) -> Result<Point> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid(
            "dilation parameter",
            format!("t must be positive, got {t}"),
        ));
    }
    if x.0.len() != g.total_dim() {
        return Err(Error::invalid("point dimension", "point does not match the group"));
    }
    Ok(Point(
        x.0.iter()
            .zip(g.weights())
            .map(|(&xi, &w)| xi * t.powi(w as i32))
            .collect(),
    ))
}

/// Volume of the image of the box `[lo, hi]` under `delta_t`. Dilations are
/// diagonal, so the image is again a box.
pub fn dilated_box_volume(g: &GroupSpec, t: f64, lo: &[f64], hi: &[f64]) -> Result<f64> {
    let a = dilation(g, t, &Point::new(g, lo.to_vec())?)?;
    let b = dilation(g, t, &Point::new(g, hi.to_vec())?)?;
    Ok(a.0.iter().zip(&b.0).map(|(l, h)| (h - l).abs()).product())
}

/// Sobolev exponent `p* = nu p / (nu - p)`, defined for `1 < p < nu`.
pub fn critical_exponent(nu: usize, p: f64) -> Result<f64> {
    let nu_f = nu as f64;
    if !(p > 1.0 && p < nu_f) {
        return Err(Error::invalid(
            "1 < p < nu (Sobolev embedding hypothesis)",
            format!("p = {p}, nu = {nu}"),
        ));
    }
    Ok(nu_f * p / (nu_f - p))
}

/// Integrability exponent of the source, `m = (p*/(1-delta))'`.
pub fn source_exponent(nu: usize, p: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta ∈ (0,1)", format!("delta = {delta}")));
    }
    let q = critical_exponent(nu, p)? / (1.0 - delta);
    Ok(q / (q - 1.0))
}
