//! Orchestrated experiment harness: convergence, regularization, comparison,
//! growth and Lipschitz studies with machine-readable pass/fail reports.
//!
//! Every study is deterministic: random data comes from a seeded generator,
//! runs execute in a fixed order, and reports serialize with sorted keys, so
//! identical inputs reproduce identical bytes.

use crate::error::{Error, Result};
use crate::free_boundary;
use crate::grid::{classify_nodes, DomainDescriptor, DomainMask, Grid, ScalarField};
use crate::radial::{
    oracle_annulus, oracle_ball, oracle_eikonal_ball, oracle_interval, RadialSolution,
};
use crate::solver::{regularized_solve, sweep_solve, BoundaryData, ProblemSpec, SolverConfig};
use serde::Serialize;
use std::collections::BTreeMap;

/// Pass/fail thresholds used by the studies and the acceptance suite.
/// Single source of truth; reports echo the values they were judged against.
pub mod thresholds {
    /// Fitted convergence-rate window for the first-order scheme.
    pub const RATE_LO: f64 = 0.8;
    pub const RATE_HI: f64 = 1.2;
    /// Per-refinement error ratio window (halving h roughly halves the error).
    pub const RATIO_LO: f64 = 0.4;
    pub const RATIO_HI: f64 = 0.7;
    /// Sup-error budget in units of h for the 1-D closed form.
    pub const SUP_ERROR_FACTOR_1D: f64 = 2.0;
    /// Sup-error budget in units of h for the 2-D radial oracles.
    pub const SUP_ERROR_FACTOR_2D: f64 = 3.0;
    /// Interface-radius budget in units of h.
    pub const INTERFACE_FACTOR: f64 = 2.0;
    /// Minimum eikonal share when labeling the purely eikonal ball.
    pub const EIKONAL_FRACTION_MIN: f64 = 0.98;
    /// Region-classification threshold delta.
    pub const CLASSIFY_DELTA: f64 = 0.05;
    /// Final epsilon gap budget as a multiple of the fixture's grid error.
    pub const EPS_GAP_FACTOR: f64 = 5.0;
    /// Comparison-principle slack as a multiple of the solver tolerance.
    pub const COMPARISON_SLACK: f64 = 10.0;
    /// Max ratio spread of the Lipschitz quotient across resolutions.
    pub const LIPSCHITZ_SPREAD_MAX: f64 = 1.5;
    /// Finer-grid Lipschitz quotients must stay within 10% of the coarsest.
    pub const LIPSCHITZ_COARSE_MARGIN: f64 = 1.1;
    /// Distance from the boundary for the Lipschitz subgrid.
    pub const LIPSCHITZ_MARGIN: f64 = 0.25;
    /// Small-gradient fraction bound at the finest resolution.
    pub const SMALL_GRADIENT_MAX: f64 = 0.02;
    pub const SMALL_GRADIENT_DELTA: f64 = 0.05;
    /// Gradient-norm jump bound at the finest ridge resolution.
    pub const JUMP_GRADNORM_MAX: f64 = 0.1;
    /// Gradient-vector jump that must persist across ridges.
    pub const JUMP_GRADVEC_MIN: f64 = 0.5;
    /// DPP vs sweep sup-norm agreement.
    pub const DPP_AGREEMENT: f64 = 5e-2;
    /// Growth study: last probe value must exceed this multiple of the first.
    pub const GROWTH_FACTOR: f64 = 2.0;
    /// Growth study: probe spread allowed in the bounded 1-D contrast case.
    pub const BOUNDED_SPREAD: f64 = 0.15;
}

/// splitmix64; tiny, portable and stable, so seeded studies reproduce
/// bit-identically across platforms and toolchains.
#[derive(Debug, Clone)]
pub struct DeterministicRng {
    state: u64,
}

impl DeterministicRng {
    pub fn new(seed: u64) -> Self {
        DeterministicRng { state: seed }
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Nodewise uniform values in [0, amplitude], smoothed by one stencil
/// averaging pass to avoid pathological oscillation at the grid scale.
pub fn random_smooth_field(grid: &Grid, rng: &mut DeterministicRng, amplitude: f64) -> ScalarField {
    let n = grid.node_count();
    let raw: Vec<f64> = (0..n).map(|_| amplitude * rng.uniform()).collect();
    let mut smooth = vec![0.0; n];
    for flat in 0..n {
        let mut acc = raw[flat];
        let mut count = 1.0;
        for a in 0..grid.dim() {
            for dir in [-1, 1] {
                if let Some(nb) = grid.neighbor(flat, a, dir) {
                    acc += raw[nb];
                    count += 1.0;
                }
            }
        }
        smooth[flat] = acc / count;
    }
    ScalarField::from_values(smooth)
}

// ---------------------------------------------------------------------------
// Fixtures

/// Named problem geometries with radial reference solutions. The two-regime
/// geometries use the scaling identity to stay inside the desk-scale node
/// budget: solving with rhs = s on radius R is the unit problem on radius
/// s*R, so large-radius structure fits on a unit-sized grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    /// 1-D interval, closed-form parabola plus ridge.
    Interval,
    /// Unit ball, purely eikonal cone.
    EikonalBall,
    /// Two-regime ball: eikonal core, Brownian shell (unit ball, rhs = 2).
    Ball,
    /// Annulus with one Poisson-to-eikonal interface.
    Annulus2Piece,
    /// Annulus with Poisson, eikonal and Poisson regions (rhs-scaled).
    Annulus3Piece,
    /// Annulus with two Brownian regimes meeting at a ridge (rhs-scaled).
    RidgeAnnulus,
}

impl Fixture {
    pub const ALL: [Fixture; 6] = [
        Fixture::Interval,
        Fixture::EikonalBall,
        Fixture::Ball,
        Fixture::Annulus2Piece,
        Fixture::Annulus3Piece,
        Fixture::RidgeAnnulus,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Fixture::Interval => "interval",
            Fixture::EikonalBall => "eikonal_ball",
            Fixture::Ball => "ball",
            Fixture::Annulus2Piece => "annulus_2piece",
            Fixture::Annulus3Piece => "annulus_3piece",
            Fixture::RidgeAnnulus => "ridge_annulus",
        }
    }

    pub fn from_name(name: &str) -> Result<Fixture> {
        Fixture::ALL
            .iter()
            .copied()
            .find(|f| f.name() == name)
            .ok_or_else(|| Error::validation("fixture", format!("unknown fixture `{name}`")))
    }

    pub fn dim(&self) -> usize {
        match self {
            Fixture::Interval => 1,
            _ => 2,
        }
    }

    pub fn rhs(&self) -> f64 {
        match self {
            Fixture::Interval
            | Fixture::EikonalBall
            | Fixture::Annulus2Piece
            | Fixture::Annulus3Piece => 1.0,
            Fixture::Ball => 2.0,
            Fixture::RidgeAnnulus => 4.0,
        }
    }

    pub fn descriptor(&self) -> DomainDescriptor {
        match self {
            Fixture::Interval => DomainDescriptor::Interval { radius: 1.0 },
            Fixture::EikonalBall => DomainDescriptor::Ball { radius: 1.0 },
            Fixture::Ball => DomainDescriptor::Ball { radius: 1.0 },
            Fixture::Annulus2Piece => DomainDescriptor::Annulus { inner: 0.1, outer: 0.9 },
            Fixture::Annulus3Piece => DomainDescriptor::Annulus { inner: 0.25, outer: 2.0 },
            Fixture::RidgeAnnulus => DomainDescriptor::Annulus { inner: 0.3, outer: 0.8 },
        }
    }

    pub fn oracle(&self) -> Result<RadialSolution> {
        match self {
            Fixture::Interval => oracle_interval(1.0),
            Fixture::EikonalBall => oracle_eikonal_ball(2, 1.0),
            Fixture::Ball => oracle_ball(2, 1.0, 2.0),
            Fixture::Annulus2Piece => oracle_annulus(2, 0.1, 0.9, 1.0),
            Fixture::Annulus3Piece => oracle_annulus(2, 0.25, 2.0, 1.0),
            Fixture::RidgeAnnulus => oracle_annulus(2, 0.3, 0.8, 4.0),
        }
    }

    pub fn problem(&self) -> ProblemSpec {
        ProblemSpec::new(self.descriptor(), self.dim(), self.rhs())
    }

    pub fn grid(&self, h: f64) -> Result<(Grid, DomainMask)> {
        let desc = self.descriptor();
        let grid = Grid::enclosing(self.dim(), &desc, h, 2)?;
        let mask = classify_nodes(&grid, &desc)?;
        Ok((grid, mask))
    }
}

/// Interior sup-norm error of a field against a radial reference.
pub fn sup_error_vs_radial(
    u: &ScalarField,
    grid: &Grid,
    mask: &DomainMask,
    reference: &RadialSolution,
) -> f64 {
    let (lo, hi) = reference.domain();
    let mut worst = 0.0f64;
    for &i in mask.interior() {
        let x = grid.coord(i as usize);
        let t = x[..grid.dim()]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .clamp(lo, hi);
        let (v, _) = reference.eval(t).expect("in-domain radius");
        worst = worst.max((u[i as usize] - v).abs());
    }
    worst
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Serialize)]
pub struct StudyRun {
    pub param: f64,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Machine-readable study outcome. `pass` is the conjunction of all checks,
/// each of which is recomputable from the stored run values and thresholds.
#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub study: String,
    pub fixture: Option<String>,
    pub seed: Option<u64>,
    pub params: Vec<f64>,
    pub runs: Vec<StudyRun>,
    /// Least-squares slope of log(error) vs log(h); present for >= 3 runs.
    pub rate: Option<f64>,
    pub thresholds: BTreeMap<String, f64>,
    pub checks: Vec<StudyCheck>,
    pub pass: bool,
}

impl StudyReport {
    fn new(study: &str) -> Self {
        StudyReport {
            study: study.to_string(),
            fixture: None,
            seed: None,
            params: Vec::new(),
            runs: Vec::new(),
            rate: None,
            thresholds: BTreeMap::new(),
            checks: Vec::new(),
            pass: true,
        }
    }

    fn threshold(&mut self, name: &str, value: f64) {
        self.thresholds.insert(name.to_string(), value);
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.pass &= pass;
        self.checks.push(StudyCheck { name: name.to_string(), pass, detail });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    /// Per-run table: `param,<sorted value keys...>`.
    pub fn to_csv(&self) -> String {
        let mut keys: Vec<&str> = Vec::new();
        for run in &self.runs {
            for k in run.values.keys() {
                if !keys.contains(&k.as_str()) {
                    keys.push(k);
                }
            }
        }
        keys.sort_unstable();
        let mut out = String::from("param");
        for k in &keys {
            out.push(',');
            out.push_str(k);
        }
        out.push('\n');
        for run in &self.runs {
            out.push_str(&format!("{:.14e}", run.param));
            for k in &keys {
                out.push(',');
                match run.values.get(*k) {
                    Some(v) => out.push_str(&format!("{v:.14e}")),
                    None => out.push_str(""),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Least-squares slope of ln(y) against ln(x).
pub fn fit_log_rate(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(1e-300).ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

// ---------------------------------------------------------------------------
// Studies

/// Sup-norm errors against the fixture oracle over a decreasing h list, with
/// a fitted convergence rate.
pub fn convergence_study(
    fixture: Fixture,
    h_list: &[f64],
    config: &SolverConfig,
) -> Result<StudyReport> {
    if h_list.len() < 3 || h_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::validation("h_list", "need at least 3 strictly decreasing values"));
    }
    let mut report = StudyReport::new("convergence");
    report.fixture = Some(fixture.name().to_string());
    report.params = h_list.to_vec();
    report.threshold("rate_lo", thresholds::RATE_LO);
    report.threshold("rate_hi", thresholds::RATE_HI);
    let oracle = fixture.oracle()?;
    let spec = fixture.problem();
    let mut errors = Vec::new();
    for &h in h_list {
        let (grid, mask) = fixture.grid(h)?;
        let result = sweep_solve(&spec, &grid, &mask, config)?;
        let err = sup_error_vs_radial(&result.solution, &grid, &mask, &oracle);
        let mut values = BTreeMap::new();
        values.insert("sup_error".to_string(), err);
        values.insert("sweeps".to_string(), result.sweeps_used as f64);
        values.insert("residual".to_string(), result.final_residual);
        report.runs.push(StudyRun { param: h, values });
        errors.push(err);
    }
    report.rate = fit_log_rate(h_list, &errors);
    if let Some(rate) = report.rate {
        report.check(
            "rate_in_window",
            (thresholds::RATE_LO..=thresholds::RATE_HI).contains(&rate),
            format!("fitted rate {rate:.3}"),
        );
    }
    let monotone = errors.windows(2).all(|w| w[1] <= w[0]);
    report.check(
        "errors_decreasing",
        monotone,
        format!("errors {errors:?}"),
    );
    Ok(report)
}

/// Gaps |u_eps - u_sweep| at fixed h over a decreasing epsilon list.
pub fn epsilon_study(
    fixture: Fixture,
    eps_list: &[f64],
    h: f64,
    config: &SolverConfig,
) -> Result<StudyReport> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::validation("eps_list", "need a strictly decreasing list"));
    }
    let mut report = StudyReport::new("epsilon");
    report.fixture = Some(fixture.name().to_string());
    report.params = eps_list.to_vec();
    report.threshold("gap_factor", thresholds::EPS_GAP_FACTOR);
    let spec = fixture.problem();
    let (grid, mask) = fixture.grid(h)?;
    let sweep = sweep_solve(&spec, &grid, &mask, config)?;
    let oracle = fixture.oracle()?;
    let grid_error = sup_error_vs_radial(&sweep.solution, &grid, &mask, &oracle);
    let mut gaps = Vec::new();
    for &eps in eps_list {
        let reg = regularized_solve(&spec, &grid, &mask, eps, config)?;
        let gap = mask
            .interior()
            .iter()
            .map(|&i| (reg.solution[i as usize] - sweep.solution[i as usize]).abs())
            .fold(0.0f64, f64::max);
        let mut values = BTreeMap::new();
        values.insert("gap".to_string(), gap);
        values.insert("sweeps".to_string(), reg.sweeps_used as f64);
        report.runs.push(StudyRun { param: eps, values });
        gaps.push(gap);
    }
    if gaps.len() > 1 {
        report.check(
            "gaps_strictly_decreasing",
            gaps.windows(2).all(|w| w[1] < w[0]),
            format!("gaps {gaps:?}"),
        );
        let budget = thresholds::EPS_GAP_FACTOR * grid_error;
        report.check(
            "final_gap_below_grid_error_budget",
            gaps[gaps.len() - 1] < budget,
            format!("final gap {:.3e} vs budget {:.3e}", gaps[gaps.len() - 1], budget),
        );
    }
    Ok(report)
}

/// Seeded random boundary-data pairs g1 <= g2; converged solutions must obey
/// the same ordering within 10x tolerance. Also checks exact determinism and
/// the constant-shift identity.
pub fn comparison_battery(
    spec: &ProblemSpec,
    grid: &Grid,
    mask: &DomainMask,
    trials: usize,
    seed: u64,
    config: &SolverConfig,
) -> Result<StudyReport> {
    if trials < 1 {
        return Err(Error::validation("trials", "need at least one trial"));
    }
    let mut report = StudyReport::new("comparison");
    report.seed = Some(seed);
    report.threshold("slack", thresholds::COMPARISON_SLACK * config.tolerance);
    let slack = thresholds::COMPARISON_SLACK * config.tolerance;
    let mut rng = DeterministicRng::new(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let g1 = random_smooth_field(grid, &mut rng, 0.2);
        let bump = random_smooth_field(grid, &mut rng, 0.2);
        let mut g2 = g1.clone();
        for flat in 0..grid.node_count() {
            g2[flat] += bump[flat];
        }
        let lo = sweep_solve(
            &spec.clone().with_boundary(BoundaryData::Field(g1)),
            grid,
            mask,
            config,
        )?;
        let hi = sweep_solve(
            &spec.clone().with_boundary(BoundaryData::Field(g2)),
            grid,
            mask,
            config,
        )?;
        let violation = mask
            .interior()
            .iter()
            .map(|&i| lo.solution[i as usize] - hi.solution[i as usize])
            .fold(0.0f64, f64::max);
        worst = worst.max(violation);
        let mut values = BTreeMap::new();
        values.insert("violation".to_string(), violation);
        report.runs.push(StudyRun { param: trial as f64, values });
    }
    report.check(
        "no_ordering_violation",
        worst <= slack,
        format!("max violation {worst:.3e} vs slack {slack:.3e}"),
    );

    // Identical data solves bitwise-identically (deterministic solver).
    let g = random_smooth_field(grid, &mut DeterministicRng::new(seed ^ 0xabcd), 0.2);
    let a = sweep_solve(&spec.clone().with_boundary(BoundaryData::Field(g.clone())), grid, mask, config)?;
    let b = sweep_solve(&spec.clone().with_boundary(BoundaryData::Field(g)), grid, mask, config)?;
    report.check(
        "deterministic_rerun_bitwise",
        a.solution == b.solution,
        "two identical solves compared bitwise".to_string(),
    );

    // Constant shift commutes with the solve.
    let base = sweep_solve(spec, grid, mask, config)?;
    let shifted = sweep_solve(
        &spec.clone().with_boundary(BoundaryData::Constant(0.1)),
        grid,
        mask,
        config,
    )?;
    let shift_err = mask
        .interior()
        .iter()
        .map(|&i| (shifted.solution[i as usize] - base.solution[i as usize] - 0.1).abs())
        .fold(0.0f64, f64::max);
    report.check(
        "constant_shift_equivariance",
        shift_err <= slack,
        format!("max deviation {shift_err:.3e}"),
    );
    Ok(report)
}

/// Truncated-domain rendering of the unbounded-domain limit: solve on
/// Annulus(r_in, R) for growing R and probe u at |x| = 2 r_in. In dimension
/// >= 2 the probe grows without bound; in dimension 1 it stays bounded.
/// The grid is kept at `nodes_per_radius` nodes per unit of R.
pub fn growth_study(
    dim: usize,
    r_in: f64,
    r_list: &[f64],
    rhs: f64,
    nodes_per_radius: usize,
    config: &SolverConfig,
) -> Result<StudyReport> {
    if r_list.is_empty() || r_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("r_list", "need a strictly increasing list"));
    }
    if !(r_in > 0.0) || r_list[0] <= 2.0 * r_in {
        return Err(Error::validation("r_in", "need 0 < 2 r_in < smallest R"));
    }
    let mut report = StudyReport::new("growth");
    report.params = r_list.to_vec();
    report.threshold("growth_factor", thresholds::GROWTH_FACTOR);
    report.threshold("bounded_spread", thresholds::BOUNDED_SPREAD);
    let mut probes = Vec::new();
    for &r in r_list {
        let desc = DomainDescriptor::Annulus { inner: r_in, outer: r };
        let h = r / nodes_per_radius as f64;
        let grid = Grid::enclosing(dim, &desc, h, 2)?;
        let mask = classify_nodes(&grid, &desc)?;
        let spec = ProblemSpec::new(desc, dim, rhs);
        let result = sweep_solve(&spec, &grid, &mask, config)?;
        let mut point = [0.0; crate::grid::MAX_DIM];
        point[0] = 2.0 * r_in;
        let probe =
            crate::grid::multilinear_interpolate(&result.solution, &grid, &mask, &point[..dim])?;
        let mut values = BTreeMap::new();
        values.insert("probe".to_string(), probe);
        values.insert("h".to_string(), h);
        report.runs.push(StudyRun { param: r, values });
        probes.push(probe);
    }
    if probes.len() > 1 {
        if dim >= 2 {
            report.check(
                "probe_strictly_increasing",
                probes.windows(2).all(|w| w[1] > w[0]),
                format!("probes {probes:?}"),
            );
            report.check(
                "unbounded_growth_trend",
                probes[probes.len() - 1] > thresholds::GROWTH_FACTOR * probes[0],
                format!("last {:.4} vs first {:.4}", probes[probes.len() - 1], probes[0]),
            );
        } else {
            let lo = probes.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = probes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            report.check(
                "probe_bounded",
                hi - lo <= thresholds::BOUNDED_SPREAD
                    && probes[probes.len() - 1] < thresholds::GROWTH_FACTOR * probes[0],
                format!("probes {probes:?}"),
            );
        }
    }
    Ok(report)
}

/// Discrete Lipschitz quotient max|Du| / (max|u| + 1) on the subgrid at
/// distance >= 0.25 from the boundary, tracked across resolutions.
pub fn lipschitz_study(
    fixture: Fixture,
    h_list: &[f64],
    config: &SolverConfig,
) -> Result<StudyReport> {
    if h_list.len() < 2 || h_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::validation("h_list", "need at least 2 strictly decreasing values"));
    }
    let mut report = StudyReport::new("lipschitz");
    report.fixture = Some(fixture.name().to_string());
    report.params = h_list.to_vec();
    report.threshold("spread_max", thresholds::LIPSCHITZ_SPREAD_MAX);
    report.threshold("coarse_margin", thresholds::LIPSCHITZ_COARSE_MARGIN);
    let spec = fixture.problem();
    let mut ratios = Vec::new();
    for &h in h_list {
        let (grid, mask) = fixture.grid(h)?;
        let result = sweep_solve(&spec, &grid, &mask, config)?;
        let mut grad_max = 0.0f64;
        let mut u_max = 0.0f64;
        for &i in mask.interior() {
            let flat = i as usize;
            u_max = u_max.max(result.solution[flat].abs());
            let x = grid.coord(flat);
            let dist = mask
                .descriptor()
                .boundary_distance(&x[..grid.dim()])
                .unwrap_or(0.0);
            if dist >= thresholds::LIPSCHITZ_MARGIN {
                grad_max = grad_max
                    .max(crate::grid::upwind_gradient_norm(&result.solution, &grid, &mask, flat)?);
            }
        }
        let ratio = grad_max / (u_max + 1.0);
        let mut values = BTreeMap::new();
        values.insert("ratio".to_string(), ratio);
        values.insert("grad_max".to_string(), grad_max);
        values.insert("u_max".to_string(), u_max);
        report.runs.push(StudyRun { param: h, values });
        ratios.push(ratio);
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    report.check(
        "ratio_spread_bounded",
        hi / lo < thresholds::LIPSCHITZ_SPREAD_MAX,
        format!("ratios {ratios:?}"),
    );
    let coarse_bound = ratios[0] * thresholds::LIPSCHITZ_COARSE_MARGIN;
    report.check(
        "coarsest_ratio_bounds_finer_runs",
        ratios.iter().skip(1).all(|&r| r <= coarse_bound),
        format!("bound {coarse_bound:.4}, ratios {ratios:?}"),
    );
    Ok(report)
}

/// Small-gradient fraction of a fixture at one resolution; helper shared by
/// the acceptance suite and the CLI.
pub fn small_gradient_fraction(fixture: Fixture, h: f64, config: &SolverConfig) -> Result<f64> {
    let spec = fixture.problem();
    let (grid, mask) = fixture.grid(h)?;
    let result = sweep_solve(&spec, &grid, &mask, config)?;
    free_boundary::small_gradient_measure(
        &result.solution,
        &grid,
        &mask,
        thresholds::SMALL_GRADIENT_DELTA,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast_config() -> SolverConfig {
        SolverConfig { tolerance: 1e-9, max_sweeps: 200_000, ..SolverConfig::default() }
    }

    #[test]
    fn rng_is_stable() {
        let mut rng = DeterministicRng::new(42);
        let a: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
        let mut rng = DeterministicRng::new(42);
        let b: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.0..1.0).contains(v)));
        assert!(a.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn fixtures_have_valid_oracles() {
        for fixture in Fixture::ALL {
            let oracle = fixture.oracle().unwrap();
            oracle.validate().unwrap();
            assert_eq!(Fixture::from_name(fixture.name()).unwrap(), fixture);
        }
    }

    #[test]
    fn convergence_study_on_interval() {
        let report = convergence_study(
            Fixture::Interval,
            &[1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0],
            &fast_config(),
        )
        .unwrap();
        assert!(report.pass, "{}", report.to_json());
        let rate = report.rate.unwrap();
        assert!((0.8..=1.2).contains(&rate), "rate {rate}");
    }

    #[test]
    fn refinement_halves_the_error_on_oracle_fixtures() {
        for fixture in [Fixture::Interval, Fixture::EikonalBall, Fixture::Annulus2Piece] {
            let report = convergence_study(
                fixture,
                &[1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
                &fast_config(),
            )
            .unwrap();
            let errors: Vec<f64> =
                report.runs.iter().map(|r| r.values["sup_error"]).collect();
            for w in errors.windows(2) {
                let ratio = w[1] / w[0];
                assert!(
                    (thresholds::RATIO_LO..=thresholds::RATIO_HI).contains(&ratio),
                    "{}: ratio {ratio} from {errors:?}",
                    fixture.name()
                );
            }
        }
    }

    #[test]
    fn epsilon_study_on_interval() {
        let report =
            epsilon_study(Fixture::Interval, &[1e-1, 1e-2, 1e-3], 1.0 / 64.0, &fast_config())
                .unwrap();
        assert!(report.pass, "{}", report.to_json());
        // Degenerate single-entry list skips the trend assertions.
        let single = epsilon_study(Fixture::Interval, &[1e-2], 1.0 / 32.0, &fast_config()).unwrap();
        assert!(single.checks.is_empty());
        assert!(single.pass);
    }

    #[test]
    fn comparison_battery_is_clean_and_reproducible() {
        let fixture = Fixture::EikonalBall;
        let (grid, mask) = fixture.grid(1.0 / 16.0).unwrap();
        let spec = fixture.problem();
        let cfg = SolverConfig::default();
        let a = comparison_battery(&spec, &grid, &mask, 5, 7, &cfg).unwrap();
        assert!(a.pass, "{}", a.to_json());
        let b = comparison_battery(&spec, &grid, &mask, 5, 7, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn growth_study_contrast() {
        let cfg = SolverConfig { max_sweeps: 100_000, ..SolverConfig::default() };
        let grown = growth_study(2, 0.5, &[2.0, 4.0, 8.0], 1.0, 32, &cfg).unwrap();
        assert!(grown.pass, "{}", grown.to_json());
        let bounded = growth_study(1, 0.5, &[2.0, 4.0, 8.0], 0.0, 32, &cfg).unwrap();
        assert!(bounded.pass, "{}", bounded.to_json());
        // Single-entry list: no monotonicity assertion.
        let single = growth_study(2, 0.5, &[2.0], 1.0, 32, &cfg).unwrap();
        assert!(single.checks.is_empty() && single.pass);
    }

    #[test]
    fn lipschitz_study_on_fixtures() {
        for fixture in [Fixture::Ball, Fixture::EikonalBall] {
            let report =
                lipschitz_study(fixture, &[1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0], &fast_config())
                    .unwrap();
            assert!(report.pass, "{}: {}", fixture.name(), report.to_json());
        }
    }

    #[test]
    fn lipschitz_quotient_bounded_with_affine_boundary_data_on_a_box() {
        // Box fixture with affine boundary data; not radial, so assembled by
        // hand rather than through the Fixture enum.
        let desc = DomainDescriptor::Box { widths: [2.0, 2.0, 0.0] };
        let mut ratios = Vec::new();
        for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
            let grid = Grid::enclosing(2, &desc, h, 2).unwrap();
            let mask = classify_nodes(&grid, &desc).unwrap();
            let g = BoundaryData::Field(ScalarField::from_fn(&grid, |x| {
                0.1 * x[0] - 0.05 * x[1] + 0.2
            }));
            let spec = ProblemSpec::new(desc.clone(), 2, 1.0).with_boundary(g);
            let result = sweep_solve(&spec, &grid, &mask, &fast_config()).unwrap();
            let mut grad_max = 0.0f64;
            let mut u_max = 0.0f64;
            for &i in mask.interior() {
                let flat = i as usize;
                u_max = u_max.max(result.solution[flat].abs());
                let x = grid.coord(flat);
                if desc.boundary_distance(&x[..2]).unwrap() >= thresholds::LIPSCHITZ_MARGIN {
                    grad_max = grad_max.max(
                        crate::grid::upwind_gradient_norm(&result.solution, &grid, &mask, flat)
                            .unwrap(),
                    );
                }
            }
            ratios.push(grad_max / (u_max + 1.0));
        }
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi / lo < thresholds::LIPSCHITZ_SPREAD_MAX, "ratios {ratios:?}");
    }

    #[test]
    fn report_csv_layout() {
        let report = growth_study(
            2,
            0.5,
            &[2.0, 4.0],
            1.0,
            24,
            &SolverConfig { max_sweeps: 100_000, ..SolverConfig::default() },
        )
        .unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "param,h,probe");
        assert_eq!(lines.count(), 2);
    }
}
