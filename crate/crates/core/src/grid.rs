//! Uniform Cartesian grids, domain masks, difference stencils and interpolation.
//!
//! Everything here is dimension-generic for 1, 2 and 3 space dimensions. Nodes
//! are addressed by a flat index with axis 0 fastest; physical coordinates are
//! exactly `origin + index * h` componentwise.

use crate::error::{Error, Result};
use std::io::Write;
use std::sync::Arc;

pub const MAX_DIM: usize = 3;

/// Uniform lattice with spacing `h` on every axis.
#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    origin: [f64; MAX_DIM],
    shape: [usize; MAX_DIM],
    h: f64,
}

impl Grid {
    /// `shape[a]` is the node count along axis `a`; unused axes must be 1.
    pub fn new(dim: usize, origin: [f64; MAX_DIM], shape: [usize; MAX_DIM], h: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::validation("dim", format!("must be 1, 2 or 3, got {dim}")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::validation("h", format!("spacing must be positive, got {h}")));
        }
        for a in 0..dim {
            if shape[a] < 3 {
                return Err(Error::validation(
                    "extent",
                    format!("axis {a} has {} nodes, need at least 3", shape[a]),
                ));
            }
            if !origin[a].is_finite() {
                return Err(Error::validation("origin", "must be finite"));
            }
        }
        for a in dim..MAX_DIM {
            if shape[a] != 1 {
                return Err(Error::validation("extent", "unused axes must have extent 1"));
            }
        }
        Ok(Grid { dim, origin, shape, h })
    }

    /// Smallest grid whose nodes are multiples of `h` from `lo` and which
    /// covers the descriptor's bounding box with `pad` extra node layers.
    pub fn enclosing(dim: usize, descriptor: &DomainDescriptor, h: f64, pad: usize) -> Result<Self> {
        let (lo, hi) = descriptor.bounding_box(dim);
        let mut origin = [0.0; MAX_DIM];
        let mut shape = [1usize; MAX_DIM];
        for a in 0..dim {
            let span = hi[a] - lo[a];
            let inner = (span / h - 1e-9).ceil() as usize + 1;
            origin[a] = lo[a] - pad as f64 * h;
            shape[a] = inner + 2 * pad;
        }
        Grid::new(dim, origin, shape, h)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape[..self.dim]
    }

    pub fn node_count(&self) -> usize {
        self.shape[..self.dim].iter().product()
    }

    #[inline]
    pub fn flat(&self, idx: [usize; MAX_DIM]) -> usize {
        let mut f = idx[self.dim - 1];
        for a in (0..self.dim - 1).rev() {
            f = f * self.shape[a] + idx[a];
        }
        f
    }

    #[inline]
    pub fn multi(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0usize; MAX_DIM];
        for a in 0..self.dim {
            idx[a] = flat % self.shape[a];
            flat /= self.shape[a];
        }
        idx
    }

    /// Physical coordinates of a node; exact by construction.
    #[inline]
    pub fn coord(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.multi(flat);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = self.origin[a] + idx[a] as f64 * self.h;
        }
        x
    }

    /// Axis neighbor in direction `dir` (+1 or -1), or None at the lattice edge.
    #[inline]
    pub fn neighbor(&self, flat: usize, axis: usize, dir: i32) -> Option<usize> {
        let mut idx = self.multi(flat);
        if dir > 0 {
            if idx[axis] + 1 >= self.shape[axis] {
                return None;
            }
            idx[axis] += 1;
        } else {
            if idx[axis] == 0 {
                return None;
            }
            idx[axis] -= 1;
        }
        Some(self.flat(idx))
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }
}

/// Shape of the computational domain. Membership is evaluated strictly, so a
/// node exactly on the analytic boundary counts as outside.
#[derive(Clone)]
pub enum DomainDescriptor {
    /// 1-D interval (-radius, radius).
    Interval { radius: f64 },
    /// Open ball of the given radius centered at the origin.
    Ball { radius: f64 },
    /// Open annulus inner < |x| < outer.
    Annulus { inner: f64, outer: f64 },
    /// Axis-aligned box centered at the origin; `widths` are full edge lengths.
    Box { widths: [f64; MAX_DIM] },
    /// Arbitrary open set given by a predicate and a bounding box.
    Custom {
        predicate: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>,
        lo: [f64; MAX_DIM],
        hi: [f64; MAX_DIM],
    },
}

impl std::fmt::Debug for DomainDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.summary())
    }
}

impl DomainDescriptor {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            DomainDescriptor::Interval { radius } => {
                if dim != 1 {
                    return Err(Error::validation("domain", "interval is one-dimensional"));
                }
                if !(*radius > 0.0) {
                    return Err(Error::validation("radius", "must be positive"));
                }
            }
            DomainDescriptor::Ball { radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::validation("radius", "must be positive"));
                }
            }
            DomainDescriptor::Annulus { inner, outer } => {
                if !(*inner > 0.0) {
                    return Err(Error::validation("r_in", "must be positive"));
                }
                if !(outer > inner) {
                    return Err(Error::validation("radius", "outer radius must exceed r_in"));
                }
            }
            DomainDescriptor::Box { widths } => {
                for a in 0..dim {
                    if !(widths[a] > 0.0) {
                        return Err(Error::validation("widths", "must be positive on every axis"));
                    }
                }
            }
            DomainDescriptor::Custom { .. } => {}
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            DomainDescriptor::Interval { radius } => x[0].abs() < *radius,
            DomainDescriptor::Ball { radius } => norm(x) < *radius,
            DomainDescriptor::Annulus { inner, outer } => {
                let t = norm(x);
                *inner < t && t < *outer
            }
            DomainDescriptor::Box { widths } => {
                x.iter().zip(widths).all(|(xi, w)| xi.abs() < w / 2.0)
            }
            DomainDescriptor::Custom { predicate, .. } => predicate(x),
        }
    }

    pub fn bounding_box(&self, dim: usize) -> ([f64; MAX_DIM], [f64; MAX_DIM]) {
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        match self {
            DomainDescriptor::Interval { radius } | DomainDescriptor::Ball { radius } => {
                for a in 0..dim {
                    lo[a] = -radius;
                    hi[a] = *radius;
                }
            }
            DomainDescriptor::Annulus { outer, .. } => {
                for a in 0..dim {
                    lo[a] = -outer;
                    hi[a] = *outer;
                }
            }
            DomainDescriptor::Box { widths } => {
                for a in 0..dim {
                    lo[a] = -widths[a] / 2.0;
                    hi[a] = widths[a] / 2.0;
                }
            }
            DomainDescriptor::Custom { lo: l, hi: h, .. } => {
                lo = *l;
                hi = *h;
            }
        }
        (lo, hi)
    }

    pub fn diameter(&self, dim: usize) -> f64 {
        let (lo, hi) = self.bounding_box(dim);
        (0..dim).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt()
    }

    /// Distance from an inside point to the analytic boundary, when known.
    pub fn boundary_distance(&self, x: &[f64]) -> Option<f64> {
        match self {
            DomainDescriptor::Interval { radius } => Some(radius - x[0].abs()),
            DomainDescriptor::Ball { radius } => Some(radius - norm(x)),
            DomainDescriptor::Annulus { inner, outer } => {
                let t = norm(x);
                Some((t - inner).min(outer - t))
            }
            DomainDescriptor::Box { widths } => x
                .iter()
                .zip(widths)
                .map(|(xi, w)| w / 2.0 - xi.abs())
                .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d)))),
            DomainDescriptor::Custom { .. } => None,
        }
    }

    pub fn summary(&self) -> String {
        match self {
            DomainDescriptor::Interval { radius } => format!("interval(radius={radius})"),
            DomainDescriptor::Ball { radius } => format!("ball(radius={radius})"),
            DomainDescriptor::Annulus { inner, outer } => {
                format!("annulus(r_in={inner}, radius={outer})")
            }
            DomainDescriptor::Box { widths } => format!("box(widths={widths:?})"),
            DomainDescriptor::Custom { .. } => "custom".to_string(),
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum NodeLabel {
    Interior,
    Boundary,
    Exterior,
}

/// Node classification for one grid/descriptor pair.
///
/// Interior nodes are exactly the nodes inside the domain; boundary nodes are
/// the outside nodes axis-adjacent to an interior node; the rest is exterior.
#[derive(Debug, Clone)]
pub struct DomainMask {
    labels: Vec<NodeLabel>,
    interior: Vec<u32>,
    boundary: Vec<u32>,
    descriptor: DomainDescriptor,
}

impl DomainMask {
    #[inline]
    pub fn label(&self, flat: usize) -> NodeLabel {
        self.labels[flat]
    }

    #[inline]
    pub fn is_interior(&self, flat: usize) -> bool {
        self.labels[flat] == NodeLabel::Interior
    }

    pub fn interior(&self) -> &[u32] {
        &self.interior
    }

    pub fn boundary(&self) -> &[u32] {
        &self.boundary
    }

    pub fn descriptor(&self) -> &DomainDescriptor {
        &self.descriptor
    }

    pub fn labels(&self) -> &[NodeLabel] {
        &self.labels
    }

    /// Verify the structural invariants; used by tests.
    pub fn check_invariants(&self, grid: &Grid) -> Result<()> {
        for &i in &self.interior {
            for a in 0..grid.dim() {
                for dir in [-1, 1] {
                    let nb = grid
                        .neighbor(i as usize, a, dir)
                        .ok_or(Error::DomainExceedsGrid { node: i as usize })?;
                    if self.labels[nb] == NodeLabel::Exterior {
                        return Err(Error::MissingNeighbor { node: i as usize, axis: a });
                    }
                }
            }
        }
        for (flat, &label) in self.labels.iter().enumerate() {
            if label == NodeLabel::Boundary {
                let adjacent = (0..grid.dim()).any(|a| {
                    [-1, 1].iter().any(|&d| {
                        grid.neighbor(flat, a, d)
                            .map_or(false, |nb| self.labels[nb] == NodeLabel::Interior)
                    })
                });
                if !adjacent {
                    return Err(Error::validation(
                        "mask",
                        format!("boundary node {flat} has no interior neighbor"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Label every node of `grid` against `descriptor`.
pub fn classify_nodes(grid: &Grid, descriptor: &DomainDescriptor) -> Result<DomainMask> {
    descriptor.validate(grid.dim())?;
    let n = grid.node_count();
    let mut labels = vec![NodeLabel::Exterior; n];
    let mut interior = Vec::new();
    for flat in 0..n {
        let x = grid.coord(flat);
        if descriptor.contains(&x[..grid.dim()]) {
            labels[flat] = NodeLabel::Interior;
            interior.push(flat as u32);
        }
    }
    if interior.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let mut boundary = Vec::new();
    for &i in &interior {
        for a in 0..grid.dim() {
            for dir in [-1, 1] {
                let nb = grid
                    .neighbor(i as usize, a, dir)
                    .ok_or(Error::DomainExceedsGrid { node: i as usize })?;
                if labels[nb] == NodeLabel::Exterior {
                    labels[nb] = NodeLabel::Boundary;
                    boundary.push(nb as u32);
                }
            }
        }
    }
    boundary.sort_unstable();
    Ok(DomainMask {
        labels,
        interior,
        boundary,
        descriptor: descriptor.clone(),
    })
}

/// One real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    values: Vec<f64>,
}

impl ScalarField {
    pub fn constant(grid: &Grid, value: f64) -> Self {
        ScalarField {
            values: vec![value; grid.node_count()],
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count())
            .map(|flat| {
                let x = grid.coord(flat);
                f(&x[..grid.dim()])
            })
            .collect();
        ScalarField { values }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        ScalarField { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Check finiteness on interior and boundary nodes.
    pub fn assert_finite(&self, mask: &DomainMask) -> Result<()> {
        for &i in mask.interior().iter().chain(mask.boundary()) {
            if !self.values[i as usize].is_finite() {
                return Err(Error::validation(
                    "field",
                    format!("non-finite value at node {i}"),
                ));
            }
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for ScalarField {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl std::ops::IndexMut<usize> for ScalarField {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.values[i]
    }
}

#[inline]
fn neighbor_value(
    u: &ScalarField,
    grid: &Grid,
    mask: &DomainMask,
    node: usize,
    axis: usize,
    dir: i32,
) -> Result<f64> {
    let nb = grid
        .neighbor(node, axis, dir)
        .ok_or(Error::MissingNeighbor { node, axis })?;
    if mask.label(nb) == NodeLabel::Exterior {
        return Err(Error::MissingNeighbor { node, axis });
    }
    Ok(u[nb])
}

/// Standard 2*dim+1 point Laplacian. Exact on quadratics.
pub fn discrete_laplacian(u: &ScalarField, grid: &Grid, mask: &DomainMask, node: usize) -> Result<f64> {
    if !mask.is_interior(node) {
        return Err(Error::NotInterior { node });
    }
    let h2 = grid.spacing() * grid.spacing();
    let center = u[node];
    let mut acc = 0.0;
    for a in 0..grid.dim() {
        let up = neighbor_value(u, grid, mask, node, a, 1)?;
        let dn = neighbor_value(u, grid, mask, node, a, -1)?;
        acc += up + dn - 2.0 * center;
    }
    Ok(acc / h2)
}

/// Monotone upwind gradient norm in the distance-function orientation:
/// per axis the positive part of (u(x) - neighbor)/h, then the Euclidean norm.
pub fn upwind_gradient_norm(u: &ScalarField, grid: &Grid, mask: &DomainMask, node: usize) -> Result<f64> {
    if !mask.is_interior(node) {
        return Err(Error::NotInterior { node });
    }
    let h = grid.spacing();
    let center = u[node];
    let mut acc = 0.0;
    for a in 0..grid.dim() {
        let up = neighbor_value(u, grid, mask, node, a, 1)?;
        let dn = neighbor_value(u, grid, mask, node, a, -1)?;
        let d = ((center - up) / h).max((center - dn) / h).max(0.0);
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Central-difference gradient vector.
pub fn central_gradient(
    u: &ScalarField,
    grid: &Grid,
    mask: &DomainMask,
    node: usize,
) -> Result<[f64; MAX_DIM]> {
    if !mask.is_interior(node) {
        return Err(Error::NotInterior { node });
    }
    let h = grid.spacing();
    let mut g = [0.0; MAX_DIM];
    for a in 0..grid.dim() {
        let up = neighbor_value(u, grid, mask, node, a, 1)?;
        let dn = neighbor_value(u, grid, mask, node, a, -1)?;
        g[a] = (up - dn) / (2.0 * h);
    }
    Ok(g)
}

pub fn central_gradient_norm(u: &ScalarField, grid: &Grid, mask: &DomainMask, node: usize) -> Result<f64> {
    let g = central_gradient(u, grid, mask, node)?;
    Ok(norm(&g[..grid.dim()]))
}

/// Multilinear interpolation at an arbitrary point.
///
/// Reproduces affine fields exactly and never leaves the range of the cell
/// corner values. All 2^dim corners of the containing cell must be
/// non-exterior nodes.
pub fn multilinear_interpolate(
    u: &ScalarField,
    grid: &Grid,
    mask: &DomainMask,
    point: &[f64],
) -> Result<f64> {
    interpolate_values(u.values(), grid, Some(mask), point)
}

pub(crate) fn interpolate_values(
    values: &[f64],
    grid: &Grid,
    mask: Option<&DomainMask>,
    point: &[f64],
) -> Result<f64> {
    let dim = grid.dim();
    let h = grid.spacing();
    let out_of_domain = || Error::OutOfDomain {
        point: point.to_vec(),
    };
    let mut base = [0usize; MAX_DIM];
    let mut frac = [0.0; MAX_DIM];
    for a in 0..dim {
        let rel = (point[a] - grid.origin()[a]) / h;
        let last = (grid.shape()[a] - 1) as f64;
        if !(-1e-12..=last + 1e-12).contains(&rel) {
            return Err(out_of_domain());
        }
        let cell = (rel.floor() as isize).clamp(0, grid.shape()[a] as isize - 2) as usize;
        base[a] = cell;
        frac[a] = (rel - cell as f64).clamp(0.0, 1.0);
    }
    let mut acc = 0.0;
    let mut lo_corner = f64::INFINITY;
    let mut hi_corner = f64::NEG_INFINITY;
    for corner in 0..(1usize << dim) {
        let mut idx = [0usize; MAX_DIM];
        let mut w = 1.0;
        for a in 0..dim {
            if corner & (1 << a) != 0 {
                idx[a] = base[a] + 1;
                w *= frac[a];
            } else {
                idx[a] = base[a];
                w *= 1.0 - frac[a];
            }
        }
        let flat = grid.flat(idx);
        if let Some(m) = mask {
            if m.label(flat) == NodeLabel::Exterior {
                return Err(out_of_domain());
            }
        }
        acc += w * values[flat];
        lo_corner = lo_corner.min(values[flat]);
        hi_corner = hi_corner.max(values[flat]);
    }
    // Keep the result inside the corner range despite rounding.
    Ok(acc.clamp(lo_corner, hi_corner))
}

/// CSV export: header `x1,...,xd,value`, one row per non-exterior node in flat
/// order. Coordinates carry 12 significant digits.
pub fn export_field_csv(
    u: &ScalarField,
    grid: &Grid,
    mask: &DomainMask,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    let dim = grid.dim();
    for a in 0..dim {
        write!(out, "x{},", a + 1)?;
    }
    writeln!(out, "value")?;
    for flat in 0..grid.node_count() {
        if mask.label(flat) == NodeLabel::Exterior {
            continue;
        }
        let x = grid.coord(flat);
        for a in 0..dim {
            write!(out, "{:.11e},", x[a])?;
        }
        writeln!(out, "{:.14e}", u[flat])?;
    }
    Ok(())
}
