//! Piecewise closed-form radial solutions and an independent radial ODE solver.
//!
//! Radially symmetric solutions of min(-Laplace(u) - rhs, |Du| - 1) = 0 on
//! balls and annuli are piecewise explicit: eikonal pieces `c - t` where the
//! gradient constraint binds, and Poisson pieces
//!
//!     f(t) = A + B * Phi(t) - rhs * t^2 / (2n)
//!
//! where Phi is the radial harmonic profile with Phi'(t) = t^(1-n). The
//! coefficients follow from value matching at the domain boundary and the
//! interface conditions; interfaces carry |f'| = 1 on both sides even where
//! f' itself flips sign.
//!
//! The regime threshold for unit right-hand side is 1/(n-1): an eikonal
//! profile c - t has -Laplace = (n-1)/t, which dominates the right-hand side
//! exactly up to that radius. General rhs > 0 is reduced to rhs = 1 through
//! the Lipschitz scaling v(x) = u(s*x)/s with s = rhs, which maps the unit
//! problem on radius s*R to rhs = s on radius R.

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use serde::Serialize;

/// Radial harmonic profile: Phi'(t) = t^(1-n) for every dimension, so
/// Phi(t) = t for n = 1, log t for n = 2 and t^(2-n)/(2-n) for n >= 3.
#[derive(Debug, Clone, Copy)]
pub struct FundamentalSolution {
    pub dim: usize,
}

impl FundamentalSolution {
    pub fn new(dim: usize) -> Self {
        FundamentalSolution { dim }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.dim {
            1 => t,
            2 => t.ln(),
            _ => t.powi(2 - self.dim as i32) / (2.0 - self.dim as f64),
        }
    }

    pub fn slope(&self, t: f64) -> f64 {
        t.powi(1 - self.dim as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PieceKind {
    /// Value `c + sign * t` with |sign| = 1.
    Eikonal { c: f64, sign: f64 },
    /// Value `a + b * Phi(t) - rhs * t^2 / (2n)`.
    Poisson { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialPiece {
    pub lo: f64,
    pub hi: f64,
    #[serde(flatten)]
    pub kind: PieceKind,
}

/// Piecewise radial solution on `[pieces[0].lo, pieces.last().hi]`.
#[derive(Debug, Clone, Serialize)]
pub struct RadialSolution {
    pub dim: usize,
    pub rhs: f64,
    pub pieces: Vec<RadialPiece>,
    /// Radii separating consecutive pieces.
    pub interfaces: Vec<f64>,
}

impl RadialSolution {
    fn piece_value(&self, piece: &RadialPiece, t: f64) -> f64 {
        match piece.kind {
            PieceKind::Eikonal { c, sign } => c + sign * t,
            PieceKind::Poisson { a, b } => {
                let phi = FundamentalSolution::new(self.dim);
                a + b * phi.value(t) - self.rhs * t * t / (2.0 * self.dim as f64)
            }
        }
    }

    fn piece_slope(&self, piece: &RadialPiece, t: f64) -> f64 {
        match piece.kind {
            PieceKind::Eikonal { sign, .. } => sign,
            PieceKind::Poisson { b, .. } => {
                let phi = FundamentalSolution::new(self.dim);
                b * phi.slope(t) - self.rhs * t / self.dim as f64
            }
        }
    }

    fn piece_second_derivative(&self, piece: &RadialPiece, t: f64) -> f64 {
        match piece.kind {
            PieceKind::Eikonal { .. } => 0.0,
            PieceKind::Poisson { b, .. } => {
                let n = self.dim as f64;
                b * (1.0 - n) * t.powi(-(self.dim as i32)) - self.rhs / n
            }
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.pieces[0].lo, self.pieces[self.pieces.len() - 1].hi)
    }

    /// Piecewise evaluation; at an interface radius the left piece wins.
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.domain();
        if !(lo - 1e-12..=hi + 1e-12).contains(&t) {
            return Err(Error::OutOfDomain { point: vec![t] });
        }
        let t = t.clamp(lo, hi);
        let piece = self
            .pieces
            .iter()
            .find(|p| t <= p.hi)
            .unwrap_or(&self.pieces[self.pieces.len() - 1]);
        Ok((self.piece_value(piece, t), self.piece_slope(piece, t)))
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        Ok(self.eval(t)?.0)
    }

    /// Sample the solution onto a grid as a function of |x|. Nodes outside the
    /// radial domain are clamped to the nearest endpoint, which only affects
    /// exterior and boundary nodes.
    pub fn sample(&self, grid: &Grid) -> ScalarField {
        let (lo, hi) = self.domain();
        ScalarField::from_fn(grid, |x| {
            let t = x.iter().map(|v| v * v).sum::<f64>().sqrt().clamp(lo, hi);
            self.eval(t).map(|(v, _)| v).unwrap_or(0.0)
        })
    }

    /// Structural invariants: pieces tile the domain, the value is continuous
    /// across interfaces, |slope| >= 1 - 1e-8 on sampled radii, |slope| agrees
    /// across interfaces to 1e-8, and Poisson pieces satisfy the radial
    /// equation -(f'' + (n-1) f'/t) = rhs to 1e-8 (checked by differencing).
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::DegenerateMatching(msg);
        if self.pieces.is_empty() {
            return Err(bad("no pieces".into()));
        }
        for w in self.pieces.windows(2) {
            if (w[0].hi - w[1].lo).abs() > 1e-12 {
                return Err(bad(format!("pieces do not tile: {} vs {}", w[0].hi, w[1].lo)));
            }
        }
        if self.interfaces.len() + 1 != self.pieces.len() {
            return Err(bad("interface count mismatch".into()));
        }
        for (k, w) in self.pieces.windows(2).enumerate() {
            let t = w[0].hi;
            let left = self.piece_value(&w[0], t);
            let right = self.piece_value(&w[1], t);
            if (left - right).abs() > 1e-10 {
                return Err(bad(format!("value jump {:.3e} at t={t}", left - right)));
            }
            let ls = self.piece_slope(&w[0], t).abs();
            let rs = self.piece_slope(&w[1], t).abs();
            if (ls - rs).abs() > 1e-8 {
                return Err(bad(format!("|slope| jump {:.3e} at t={t}", ls - rs)));
            }
            if (self.interfaces[k] - t).abs() > 1e-12 {
                return Err(bad("interfaces out of sync with pieces".into()));
            }
        }
        for piece in &self.pieces {
            let samples = 64;
            for s in 0..=samples {
                let t = piece.lo + (piece.hi - piece.lo) * s as f64 / samples as f64;
                if t <= 0.0 {
                    continue;
                }
                let slope = self.piece_slope(piece, t);
                if slope.abs() < 1.0 - 1e-8 {
                    return Err(bad(format!("|slope| = {} < 1 at t={t}", slope.abs())));
                }
                if let PieceKind::Poisson { .. } = piece.kind {
                    let d2 = self.piece_second_derivative(piece, t);
                    let d1 = self.piece_slope(piece, t);
                    let res = -(d2 + (self.dim as f64 - 1.0) * d1 / t) - self.rhs;
                    if res.abs() > 1e-8 {
                        return Err(bad(format!("radial residual {res:.3e} at t={t}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Rescale a unit-rhs solution to right-hand side `s`: v(t) = u(s t)/s.
    fn rescaled(&self, s: f64) -> RadialSolution {
        if (s - 1.0).abs() < 1e-15 {
            return self.clone();
        }
        let n = self.dim;
        let pieces = self
            .pieces
            .iter()
            .map(|p| {
                let kind = match p.kind {
                    PieceKind::Eikonal { c, sign } => PieceKind::Eikonal { c: c / s, sign },
                    PieceKind::Poisson { a, b } => {
                        // Phi(s t) = ln s + Phi(t) in 2-D, s^(2-n) Phi(t) otherwise.
                        if n == 2 {
                            PieceKind::Poisson { a: (a + b * s.ln()) / s, b: b / s }
                        } else {
                            PieceKind::Poisson { a: a / s, b: b * s.powi(1 - n as i32) }
                        }
                    }
                };
                RadialPiece { lo: p.lo / s, hi: p.hi / s, kind }
            })
            .collect();
        RadialSolution {
            dim: n,
            rhs: self.rhs * s,
            pieces,
            interfaces: self.interfaces.iter().map(|t| t / s).collect(),
        }
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::BadParameter { name: "n", message: format!("need n >= 2, got {n}") });
    }
    Ok(())
}

fn regime_threshold(n: usize) -> f64 {
    1.0 / (n as f64 - 1.0)
}

/// Ball in the purely eikonal regime: u(x) = R - |x| for R <= 1/(n-1).
pub fn oracle_eikonal_ball(n: usize, radius: f64) -> Result<RadialSolution> {
    check_dim(n)?;
    if !(radius > 0.0) {
        return Err(Error::BadParameter { name: "radius", message: "must be positive".into() });
    }
    if radius > regime_threshold(n) {
        return Err(Error::WrongRegime {
            radius,
            hint: "R > 1/(n-1): use oracle_ball for the two-regime ball",
        });
    }
    Ok(RadialSolution {
        dim: n,
        rhs: 1.0,
        pieces: vec![RadialPiece { lo: 0.0, hi: radius, kind: PieceKind::Eikonal { c: radius, sign: -1.0 } }],
        interfaces: vec![],
    })
}

/// Two-regime ball for R > 1/(n-1): eikonal core C - t out to 1/(n-1), then a
/// Poisson annulus out to R, glued C^1. The coefficients solve the linear
/// system
///
///     A + B Phi(R)  - R^2/(2n)        = 0
///     A + B Phi(m)  - m^2/(2n)        = C - m      with m = 1/(n-1)
///     B Phi'(m)     - m/n             = -1
///
/// assembled and solved as a 3x3 system in (A, B, C).
pub fn oracle_ball(n: usize, radius: f64, rhs: f64) -> Result<RadialSolution> {
    check_dim(n)?;
    if !(rhs > 0.0) {
        return Err(Error::BadParameter { name: "rhs", message: "must be positive".into() });
    }
    // Reduce to the unit problem on radius rhs * R.
    let scaled_radius = radius * rhs;
    let m = regime_threshold(n);
    if scaled_radius <= m {
        return Err(Error::WrongRegime {
            radius,
            hint: "R <= 1/(n-1) after scaling: purely eikonal, use oracle_eikonal_ball",
        });
    }
    let phi = FundamentalSolution::new(n);
    let nf = n as f64;
    let r = scaled_radius;
    // Rows: coefficients of (A, B, C).
    let system = [
        [1.0, phi.value(r), 0.0, r * r / (2.0 * nf)],
        [1.0, phi.value(m), -1.0, m * m / (2.0 * nf) - m],
        [0.0, phi.slope(m), 0.0, m / nf - 1.0],
    ];
    let [a, b, c] = solve3(system).ok_or_else(|| {
        Error::DegenerateMatching(format!("ball matching system singular for n={n}, R={radius}"))
    })?;
    let unit = RadialSolution {
        dim: n,
        rhs: 1.0,
        pieces: vec![
            RadialPiece { lo: 0.0, hi: m, kind: PieceKind::Eikonal { c, sign: -1.0 } },
            RadialPiece { lo: m, hi: r, kind: PieceKind::Poisson { a, b } },
        ],
        interfaces: vec![m],
    };
    Ok(unit.rescaled(rhs))
}

/// Closed form on the 1-D interval (-R, R):
/// u(x) = (R + R^2/2) - (|x| + x^2/2), as a function of t = |x|.
pub fn oracle_interval(radius: f64) -> Result<RadialSolution> {
    if !(radius > 0.0) {
        return Err(Error::BadParameter { name: "radius", message: "must be positive".into() });
    }
    // Poisson form in 1-D: Phi(t) = t, so A = R + R^2/2 and B = -1.
    Ok(RadialSolution {
        dim: 1,
        rhs: 1.0,
        pieces: vec![RadialPiece {
            lo: 0.0,
            hi: radius,
            kind: PieceKind::Poisson { a: radius + radius * radius / 2.0, b: -1.0 },
        }],
        interfaces: vec![],
    })
}

/// Annulus solutions with zero boundary data on both circles.
///
/// With a = rhs*r_in and b = rhs*R reduced to the unit problem, the structure
/// depends on the threshold m = 1/(n-1):
///
/// * b <= m: inner Poisson piece rising from 0 with f'(rho) = +1, then the
///   eikonal tail b - t. The interface slope condition is |f'(rho)| = 1 with
///   f'(rho) = B Phi'(rho) - rho/n, not the bare B Phi'(rho) = 1; only the
///   full slope keeps |Du| continuous across the interface.
/// * b > m: the outer ring C^1-glued to a decreasing eikonal band is forced
///   to be the two-regime ball tail (its interface sits exactly at m, where
///   the eikonal profile stops satisfying -Laplace >= 1 and the Poisson
///   profile regains |f'| >= 1). The inner Poisson piece climbs from 0 with
///   f'(rho) = +1 and meets the band at a ridge. When the climb cannot reach
///   the band's plateau - r_in too large relative to R - the eikonal band
///   disappears entirely and the solution is two Poisson regimes meeting at
///   a ridge rho > m with slopes +1 / -1. Which regime applies is decided by
///   a bracket test, not by the radii alone.
pub fn oracle_annulus(n: usize, r_in: f64, radius: f64, rhs: f64) -> Result<RadialSolution> {
    check_dim(n)?;
    if !(r_in > 0.0) || !(radius > r_in) {
        return Err(Error::BadParameter {
            name: "r_in",
            message: format!("need 0 < r_in < R, got r_in={r_in}, R={radius}"),
        });
    }
    if !(rhs > 0.0) {
        return Err(Error::BadParameter { name: "rhs", message: "must be positive".into() });
    }
    let a = r_in * rhs;
    let b = radius * rhs;
    let m = regime_threshold(n);
    let unit = if b <= m {
        annulus_two_piece(n, a, b)?
    } else {
        match annulus_three_piece(n, a, b) {
            Ok(sol) => sol,
            // No eikonal band fits between the inner climb and the ball
            // tail; fall back to the single-ridge structure.
            Err(Error::NoInterface(_)) => annulus_ridge(n, a, b)?,
            Err(e) => return Err(e),
        }
    };
    unit.validate()?;
    Ok(unit.rescaled(rhs))
}

/// Inner Poisson piece with f(a) = 0 and f'(rho) = +1: fixing rho determines
/// B = (1 + rho/n) rho^(n-1) and A, leaving a scalar equation in rho.
fn inner_poisson(n: usize, a: f64, rho: f64) -> (f64, f64) {
    let nf = n as f64;
    let phi = FundamentalSolution::new(n);
    let b_coef = (1.0 + rho / nf) * rho.powi(n as i32 - 1);
    let a_coef = a * a / (2.0 * nf) - b_coef * phi.value(a);
    (a_coef, b_coef)
}

fn poisson_value(n: usize, a_coef: f64, b_coef: f64, t: f64) -> f64 {
    let phi = FundamentalSolution::new(n);
    a_coef + b_coef * phi.value(t) - t * t / (2.0 * n as f64)
}

fn annulus_two_piece(n: usize, a: f64, b: f64) -> Result<RadialSolution> {
    // Continuity with the eikonal tail: g(rho) = f(rho) - (b - rho) = 0.
    let g = |rho: f64| {
        let (ac, bc) = inner_poisson(n, a, rho);
        poisson_value(n, ac, bc, rho) - (b - rho)
    };
    let rho = find_root(g, a, b).ok_or_else(|| {
        Error::NoInterface(format!("no eikonal bracket on ({a}, {b}) for n={n}"))
    })?;
    let (ac, bc) = inner_poisson(n, a, rho);
    Ok(RadialSolution {
        dim: n,
        rhs: 1.0,
        pieces: vec![
            RadialPiece { lo: a, hi: rho, kind: PieceKind::Poisson { a: ac, b: bc } },
            RadialPiece { lo: rho, hi: b, kind: PieceKind::Eikonal { c: b, sign: -1.0 } },
        ],
        interfaces: vec![rho],
    })
}

/// Poisson / eikonal / Poisson. The outer ring is the two-regime ball tail
/// (f(b) = 0, C^1 contact with slope -1 at m); the eikonal band K - t joins
/// it at m; the inner piece meets the band at a ridge where f' flips
/// +1 -> -1 with |f'| = 1 on both sides. Fails with `NoInterface` when the
/// inner climb cannot reach the plateau anywhere on (a, m).
fn annulus_three_piece(n: usize, a: f64, b: f64) -> Result<RadialSolution> {
    let nf = n as f64;
    let m = regime_threshold(n);
    let phi = FundamentalSolution::new(n);
    if a >= m {
        return Err(Error::NoInterface(format!("inner radius {a} is past the threshold {m}")));
    }
    let b2 = (m / nf - 1.0) / phi.slope(m);
    let a2 = b * b / (2.0 * nf) - b2 * phi.value(b);
    // Eikonal plateau value K - t on [rho, m] glues to the outer piece at m.
    let k = poisson_value(n, a2, b2, m) + m;
    // Inner ridge: continuity f(rho) = K - rho with f'(rho) = +1.
    let g = |rho: f64| {
        let (ac, bc) = inner_poisson(n, a, rho);
        poisson_value(n, ac, bc, rho) - (k - rho)
    };
    let rho = find_root(g, a, m).ok_or_else(|| {
        Error::NoInterface(format!("no eikonal band bracket on ({a}, {m}) for n={n}"))
    })?;
    let (ac, bc) = inner_poisson(n, a, rho);
    Ok(RadialSolution {
        dim: n,
        rhs: 1.0,
        pieces: vec![
            RadialPiece { lo: a, hi: rho, kind: PieceKind::Poisson { a: ac, b: bc } },
            RadialPiece { lo: rho, hi: m, kind: PieceKind::Eikonal { c: k, sign: -1.0 } },
            RadialPiece { lo: m, hi: b, kind: PieceKind::Poisson { a: a2, b: b2 } },
        ],
        interfaces: vec![rho, m],
    })
}

/// Two Poisson regimes meeting at a ridge with slopes +1 / -1. The outer
/// piece keeps |f'| >= 1 beyond the ridge only for rho >= m, so the root is
/// bracketed on (max(a, m), b).
fn annulus_ridge(n: usize, a: f64, b: f64) -> Result<RadialSolution> {
    let nf = n as f64;
    let m = regime_threshold(n);
    let phi = FundamentalSolution::new(n);
    // Outer Poisson piece with f(b) = 0 and f'(rho) = -1.
    let outer = |rho: f64| {
        let bc = (rho / nf - 1.0) * rho.powi(n as i32 - 1);
        let ac = b * b / (2.0 * nf) - bc * phi.value(b);
        (ac, bc)
    };
    let g = |rho: f64| {
        let (ai, bi) = inner_poisson(n, a, rho);
        let (ao, bo) = outer(rho);
        poisson_value(n, ai, bi, rho) - poisson_value(n, ao, bo, rho)
    };
    let lo = a.max(m);
    let rho = find_root(g, lo, b).ok_or_else(|| {
        Error::NoInterface(format!("no ridge bracket on ({lo}, {b}) for n={n}"))
    })?;
    let (ai, bi) = inner_poisson(n, a, rho);
    let (ao, bo) = outer(rho);
    Ok(RadialSolution {
        dim: n,
        rhs: 1.0,
        pieces: vec![
            RadialPiece { lo: a, hi: rho, kind: PieceKind::Poisson { a: ai, b: bi } },
            RadialPiece { lo: rho, hi: b, kind: PieceKind::Poisson { a: ao, b: bo } },
        ],
        interfaces: vec![rho],
    })
}

/// Bracketed bisection to width 1e-10 followed by five Newton steps with a
/// difference-quotient derivative. Deterministic.
fn find_root(g: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Option<f64> {
    let samples = 256;
    let mut bracket = None;
    let mut prev_t = lo + (hi - lo) * 1e-9;
    let mut prev = g(prev_t);
    for s in 1..=samples {
        let t = lo + (hi - lo) * s as f64 / samples as f64;
        let t = t.min(hi - (hi - lo) * 1e-9);
        let v = g(t);
        if prev == 0.0 {
            bracket = Some((prev_t, prev_t));
            break;
        }
        if prev * v <= 0.0 {
            bracket = Some((prev_t, t));
            break;
        }
        prev_t = t;
        prev = v;
    }
    let (mut x0, mut x1) = bracket?;
    while x1 - x0 > 1e-10 {
        let mid = 0.5 * (x0 + x1);
        if g(x0) * g(mid) <= 0.0 {
            x1 = mid;
        } else {
            x0 = mid;
        }
    }
    let mut root = 0.5 * (x0 + x1);
    for _ in 0..5 {
        let dt = 1e-7 * (1.0 + root.abs());
        let d = (g(root + dt) - g(root - dt)) / (2.0 * dt);
        if d.abs() < 1e-300 {
            break;
        }
        let next = root - g(root) / d;
        if next.is_finite() && next > lo && next < hi {
            root = next;
        }
    }
    Some(root)
}

fn solve3(mut m: [[f64; 4]; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-14 {
            return None;
        }
        m.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Sampled profile produced by the independent radial ODE solver.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub residual: f64,
    pub sweeps: usize,
}

impl RadialProfile {
    pub fn value_at(&self, t: f64) -> f64 {
        let lo = self.radii[0];
        let dt = self.radii[1] - self.radii[0];
        let k = ((t - lo) / dt).floor().clamp(0.0, (self.values.len() - 2) as f64) as usize;
        let w = ((t - self.radii[k]) / dt).clamp(0.0, 1.0);
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }
}

/// Solve the radial reduction min(-(f'' + (n-1) f'/t) - rhs, |f'| - 1) = 0 on
/// an N-interval 1-D grid, with f = 0 at both ends (only the outer end for a
/// ball, r_in = 0). The Laplacian uses the conservative weighting
/// (t^(n-1) f')' / t^(n-1), which keeps the update monotone, and the node
/// update is the larger root of the two local branch equations, as in the
/// full grid scheme.
pub fn radial_ode_solve(n: usize, r_in: f64, radius: f64, rhs: f64, intervals: usize) -> Result<RadialProfile> {
    if intervals < 100 {
        return Err(Error::BadParameter { name: "N", message: "need at least 100 intervals".into() });
    }
    if n == 0 || r_in < 0.0 || !(radius > r_in) || rhs < 0.0 {
        return Err(Error::BadParameter { name: "radial", message: "invalid radial problem".into() });
    }
    let nf = n as f64;
    let dt = (radius - r_in) / intervals as f64;
    let radii: Vec<f64> = (0..=intervals).map(|k| r_in + k as f64 * dt).collect();
    let ball = r_in == 0.0;
    // Supersolution start.
    let top = 2.0 * radius * (1.0 + 2.0 * radius * rhs.max(1.0));
    let mut f = vec![top; intervals + 1];
    f[intervals] = 0.0;
    if !ball {
        f[0] = 0.0;
    }
    let first = if ball { 0 } else { 1 };

    let candidates = |f: &[f64], k: usize| -> (f64, f64) {
        if ball && k == 0 {
            // Radial symmetry at the origin: -Laplace f = -2n (f1 - f0)/dt^2.
            return (f[1] + rhs * dt * dt / (2.0 * nf), f[1] + dt);
        }
        let t = r_in + k as f64 * dt;
        let wp = (t + 0.5 * dt).powi(n as i32 - 1);
        let wm = (t - 0.5 * dt).powi(n as i32 - 1);
        let wc = t.powi(n as i32 - 1);
        let poisson = (wp * f[k + 1] + wm * f[k - 1] + rhs * wc * dt * dt) / (wp + wm);
        let eikonal = f[k + 1].min(f[k - 1]) + dt;
        (poisson, eikonal)
    };
    // Fixed-point residual in value units: how far each node sits from the
    // root of its local equation with frozen neighbors.
    let residual_of = |f: &[f64]| -> f64 {
        let mut worst = 0.0f64;
        for k in first..intervals {
            let (p, e) = candidates(f, k);
            worst = worst.max((p.max(e) - f[k]).abs());
        }
        worst
    };

    // Projected over-relaxation on the elliptic branch; the constraint branch
    // is applied exactly, so the fixed point is unchanged.
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / intervals as f64).sin());
    let max_sweeps = 2_000_000usize;
    let mut sweeps = 0;
    let mut residual = f64::INFINITY;
    while sweeps < max_sweeps {
        // Alternate sweep directions.
        let mut change = 0.0f64;
        let mut body = |f: &mut Vec<f64>, k: usize| {
            let (p, e) = candidates(f, k);
            let v = (f[k] + omega * (p - f[k])).max(e);
            change = change.max((v - f[k]).abs());
            f[k] = v;
        };
        if sweeps % 2 == 0 {
            for k in first..intervals {
                body(&mut f, k);
            }
        } else {
            for k in (first..intervals).rev() {
                body(&mut f, k);
            }
        }
        sweeps += 1;
        if change < 1e-12 {
            residual = residual_of(&f);
            if residual < 1e-10 {
                break;
            }
        }
    }
    if residual >= 1e-10 {
        return Err(Error::NoConvergence { sweeps, residual, history: vec![] });
    }
    Ok(RadialProfile { radii, values: f, residual, sweeps })
}

/// JSON dump of a radial solution with 15 significant digits.
pub fn oracle_to_json(sol: &RadialSolution) -> String {
    let fmt = |v: f64| format!("{v:.14e}");
    let mut out = String::from("{\n");
    out.push_str(&format!("  \"dim\": {},\n", sol.dim));
    out.push_str(&format!("  \"rhs\": {},\n", fmt(sol.rhs)));
    out.push_str("  \"pieces\": [\n");
    for (i, p) in sol.pieces.iter().enumerate() {
        let body = match p.kind {
            PieceKind::Eikonal { c, sign } => format!(
                "\"kind\": \"eikonal\", \"interval\": [{}, {}], \"coefficients\": {{\"c\": {}, \"sign\": {}}}",
                fmt(p.lo), fmt(p.hi), fmt(c), fmt(sign)
            ),
            PieceKind::Poisson { a, b } => format!(
                "\"kind\": \"poisson\", \"interval\": [{}, {}], \"coefficients\": {{\"a\": {}, \"b\": {}}}",
                fmt(p.lo), fmt(p.hi), fmt(a), fmt(b)
            ),
        };
        let comma = if i + 1 < sol.pieces.len() { "," } else { "" };
        out.push_str(&format!("    {{{body}}}{comma}\n"));
    }
    out.push_str("  ],\n");
    let ifs: Vec<String> = sol.interfaces.iter().map(|&t| fmt(t)).collect();
    out.push_str(&format!("  \"interfaces\": [{}]\n", ifs.join(", ")));
    out.push_str("}\n");
    out
}
