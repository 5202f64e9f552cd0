//! Semi-Lagrangian theta-method with damped start and fixed-point treatment
//! of the jump term.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{PideError, Result};
use crate::fft_conv::{apply_b, build_kernel, build_transfer, CirculantKernel};
use crate::grids::{build_spatial_grid, build_ygrids, sl_departure_grid, SpatialGrid, YGrids};
use crate::levy::{NtsModel, Vec2};
use crate::linsolve::{bicgstab, ilu0, IluFactors};
use crate::payoff::{initial_vector, PayoffSpec};
use crate::quadrature::{build_scheme, build_zgrid, QuadratureScheme};
use crate::sparse::Csr;
use crate::spatial_ops::{build_diffusion, build_fd_coeffs, lagrange_weights, BoundaryPolicy, TensorInterp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub theta: f64,
    pub n_t: usize,
    pub damping_substeps: usize,
    pub tol_fixed_point: f64,
    pub tol_linear: f64,
    pub fp_max_iter: usize,
    pub linear_max_iter: usize,
    /// Start each fixed-point iteration from extrapolated history instead
    /// of the previous time level.
    pub extrapolate_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            theta: 0.5,
            n_t: 100,
            damping_substeps: 4,
            tol_fixed_point: 1e-7,
            tol_linear: 1e-14,
            fp_max_iter: 100,
            linear_max_iter: 1000,
            extrapolate_start: true,
        }
    }
}

/// Grid sizes and domain parameters of one discretisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub n_x: usize,
    pub n_z: usize,
    pub x_int: f64,
    pub x_max: f64,
    pub f_target: f64,
}

/// Everything precomputed before time stepping.
#[derive(Debug)]
pub struct Discretization {
    pub grid: SpatialGrid,
    pub scheme: QuadratureScheme,
    pub ygrids: YGrids,
    pub kernel: CirculantKernel,
    pub t_in: TensorInterp,
    pub t_out: TensorInterp,
    pub diffusion: Csr,
    pub r_w: f64,
    pub kappa_w: Vec2,
}

impl Discretization {
    pub fn build(model: &NtsModel, params: &GridParams) -> Result<Self> {
        model.validate()?;
        let grid = build_spatial_grid(params.n_x, params.x_max, params.x_int, params.f_target)?;
        let (zgrid, partition) = build_zgrid(model, params.n_z)?;
        let scheme = build_scheme(model, &zgrid, &partition)?;
        Self::from_parts(grid, scheme)
    }

    pub fn from_parts(grid: SpatialGrid, scheme: QuadratureScheme) -> Result<Self> {
        let ygrids = build_ygrids(scheme.grid.n_z, scheme.grid.h_z, grid.nodes[1], grid.x_max)?;
        let kernel = build_kernel(&scheme.omega, scheme.grid.n_z, &ygrids)?;
        let (t_in, t_out) = build_transfer(&grid.nodes, &ygrids)?;
        let diffusion = build_diffusion(&grid, &scheme.sigma_w_sq)?;
        Ok(Discretization {
            r_w: scheme.r_w,
            kappa_w: scheme.kappa_w,
            grid,
            scheme,
            ygrids,
            kernel,
            t_in,
            t_out,
            diffusion,
        })
    }

    pub fn apply_jumps(&self, v: &[f64]) -> Result<Vec<f64>> {
        apply_b(&self.kernel, &self.t_in, &self.t_out, v)
    }

    pub fn size(&self) -> usize {
        self.grid.len() * self.grid.len()
    }
}

/// Operators for one step size and theta.
pub struct StepOperators {
    pub h: f64,
    pub theta: f64,
    pub system: Csr,
    pub ilu: IluFactors,
    pub departure: TensorInterp,
}

impl StepOperators {
    pub fn new(disc: &Discretization, h: f64, theta: f64) -> Result<Self> {
        let system = disc.diffusion.shifted(1.0 + h * theta * disc.r_w, -h * theta)?;
        let ilu = ilu0(&system)?;
        let [d1, d2] = sl_departure_grid(&disc.grid, &disc.kappa_w, h);
        let nodes = &disc.grid.nodes;
        let departure = TensorInterp::new([nodes, nodes], [&d1, &d2], BoundaryPolicy::LinearExtrapolation)?;
        Ok(StepOperators {
            h,
            theta,
            system,
            ilu,
            departure,
        })
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StepReport {
    pub fp_iterations: usize,
    pub linear_iterations: usize,
    /// `max |Y^k - Y^{k-1}| / max(1, |Y^k|)` for each fixed-point iteration.
    pub updates: Vec<f64>,
    pub seconds: f64,
}

/// Extrapolated starting vector from up to four previous levels, newest first.
pub fn fp_start(history: &VecDeque<Vec<f64>>, n: usize) -> Vec<f64> {
    let weights: &[f64] = match n.min(history.len()) {
        0 | 1 => &[1.0],
        2 => &[2.0, -1.0],
        3 => &[3.0, -3.0, 1.0],
        _ => &[4.0, -6.0, 4.0, -1.0],
    };
    let len = history[0].len();
    let mut out = vec![0.0; len];
    for (w, v) in weights.iter().zip(history) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

/// Fixed-point stopping measure `max_i |a_i - b_i| / max(1, |a_i|)`.
pub fn fixed_point_update(new: &[f64], old: &[f64]) -> f64 {
    new.iter()
        .zip(old)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// One theta step from `v_prev`, starting the fixed-point iteration at `start`.
pub fn step(
    disc: &Discretization,
    ops: &StepOperators,
    config: &SolverConfig,
    v_prev: &[f64],
    start: Vec<f64>,
) -> Result<(Vec<f64>, StepReport)> {
    let clock = Instant::now();
    let n = v_prev.len();
    let (h, theta) = (ops.h, ops.theta);
    let explicit = h * (1.0 - theta);
    let mut report = StepReport::default();

    // W = T_SL [(I + h(1-theta)(D - r I)) V + h(1-theta) B V]
    let mut pre = v_prev.to_vec();
    if explicit != 0.0 {
        let dv = disc.diffusion.mul_vec(v_prev);
        let bv = disc.apply_jumps(v_prev)?;
        for i in 0..n {
            pre[i] += explicit * (dv[i] - disc.r_w * v_prev[i] + bv[i]);
        }
    }
    let rhs_fixed = ops.departure.apply(&pre);

    let implicit = h * theta;
    let mut y = start;
    let mut rhs = vec![0.0; n];
    loop {
        if report.fp_iterations >= config.fp_max_iter {
            return Err(PideError::FixedPoint {
                iterations: report.fp_iterations,
                update: report.updates.last().copied().unwrap_or(f64::NAN),
            });
        }
        if implicit != 0.0 {
            let by = disc.apply_jumps(&y)?;
            for i in 0..n {
                rhs[i] = implicit * by[i] + rhs_fixed[i];
            }
        } else {
            rhs.copy_from_slice(&rhs_fixed);
        }
        let solved = bicgstab(&ops.system, &ops.ilu, &rhs, &y, config.tol_linear, config.linear_max_iter)?;
        report.fp_iterations += 1;
        report.linear_iterations += solved.iterations;
        let update = fixed_point_update(&solved.solution, &y);
        report.updates.push(update);
        y = solved.solution;
        if update < config.tol_fixed_point || implicit == 0.0 {
            break;
        }
    }
    report.seconds = clock.elapsed().as_secs_f64();
    Ok((y, report))
}

/// Solution with optional sensitivities on the spatial grid.
#[derive(Debug, Clone, Serialize)]
pub struct PriceSurface {
    pub grid: SpatialGrid,
    pub time: f64,
    pub values: Vec<f64>,
    pub delta: Option<[Vec<f64>; 2]>,
    pub gamma: Option<[Vec<f64>; 2]>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveReport {
    pub damping: Vec<StepReport>,
    pub steps: Vec<StepReport>,
    pub setup_seconds: f64,
    pub total_seconds: f64,
}

impl SolveReport {
    pub fn fp_iterations(&self) -> usize {
        self.damping.iter().chain(&self.steps).map(|s| s.fp_iterations).sum()
    }

    pub fn linear_iterations(&self) -> usize {
        self.damping.iter().chain(&self.steps).map(|s| s.linear_iterations).sum()
    }
}

/// Time stepping from the payoff to maturity on a prepared discretisation.
pub fn solve(
    model: &NtsModel,
    payoff: &PayoffSpec,
    disc: &Discretization,
    config: &SolverConfig,
) -> Result<(PriceSurface, SolveReport)> {
    if config.n_t == 0 {
        return Err(PideError::InvalidConfig("N_t must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.theta) {
        return Err(PideError::InvalidConfig(format!("theta {} outside [0, 1]", config.theta)));
    }
    let clock = Instant::now();
    let h = model.maturity / config.n_t as f64;
    let mut report = SolveReport::default();
    let v0 = initial_vector(payoff, &disc.grid);
    let mut history: VecDeque<Vec<f64>> = VecDeque::with_capacity(5);
    history.push_front(v0);

    let main_ops = StepOperators::new(disc, h, config.theta)?;
    let mut first = 1;
    if config.damping_substeps > 0 {
        let sub = StepOperators::new(disc, h / config.damping_substeps as f64, 1.0)?;
        let mut v = history[0].clone();
        for _ in 0..config.damping_substeps {
            let (next, rep) = step(disc, &sub, config, &v, v.clone())?;
            log::debug!("damping substep: {} fixed-point iterations", rep.fp_iterations);
            report.damping.push(rep);
            v = next;
        }
        history.push_front(v);
        first = 2;
    }
    report.setup_seconds = clock.elapsed().as_secs_f64();
    for n in first..=config.n_t {
        let start = if config.extrapolate_start {
            fp_start(&history, n)
        } else {
            history[0].clone()
        };
        let (v, rep) = step(disc, &main_ops, config, &history[0], start)?;
        log::debug!(
            "step {n}/{}: {} fixed-point iterations, {} linear iterations",
            config.n_t,
            rep.fp_iterations,
            rep.linear_iterations
        );
        report.steps.push(rep);
        history.push_front(v);
        history.truncate(4);
    }
    report.total_seconds = clock.elapsed().as_secs_f64();
    let values = history.pop_front().expect("at least one level");
    if let Some(min) = values.iter().copied().reduce(f64::min) {
        if min < -1e-8 * payoff.strike {
            log::warn!("solution has negative values down to {min:e}");
        }
    }
    Ok((
        PriceSurface {
            grid: disc.grid.clone(),
            time: model.maturity,
            values,
            delta: None,
            gamma: None,
        },
        report,
    ))
}

/// Adds per-axis first and second derivatives from the grid stencils.
pub fn greeks(mut surface: PriceSurface) -> Result<PriceSurface> {
    let fd = build_fd_coeffs(&surface.grid)?;
    let n = surface.grid.len();
    let v = &surface.values;
    let mut delta = [vec![0.0; n * n], vec![0.0; n * n]];
    let mut gamma = [vec![0.0; n * n], vec![0.0; n * n]];
    for m2 in 0..n {
        for m1 in 0..n {
            let i = m2 * n + m1;
            for (j, off) in [-1i64, 0, 1].into_iter().enumerate() {
                let c1 = m1 as i64 + off;
                if (0..n as i64).contains(&c1) {
                    let u = v[m2 * n + c1 as usize];
                    delta[0][i] += fd.alpha[m1][j] * u;
                    gamma[0][i] += fd.beta[m1][j] * u;
                }
                let c2 = m2 as i64 + off;
                if (0..n as i64).contains(&c2) {
                    let u = v[c2 as usize * n + m1];
                    delta[1][i] += fd.alpha[m2][j] * u;
                    gamma[1][i] += fd.beta[m2][j] * u;
                }
            }
        }
    }
    surface.delta = Some(delta);
    surface.gamma = Some(gamma);
    Ok(surface)
}

/// Cubic tensor Lagrange interpolation of the surface.
pub fn price_at(surface: &PriceSurface, x: &[f64; 2]) -> Result<f64> {
    let nodes = &surface.grid.nodes;
    let (lo, hi) = (nodes[0], nodes[nodes.len() - 1]);
    if x.iter().any(|&c| !(lo..=hi).contains(&c)) {
        return Err(PideError::Domain(format!("point ({}, {}) outside [{lo}, {hi}]^2", x[0], x[1])));
    }
    let n = nodes.len();
    let w1 = lagrange_weights(nodes, x[0], BoundaryPolicy::Zero);
    let w2 = lagrange_weights(nodes, x[1], BoundaryPolicy::Zero);
    let mut acc = 0.0;
    for &(j2, b) in &w2 {
        for &(j1, a) in &w1 {
            acc += a * b * surface.values[j2 * n + j1];
        }
    }
    Ok(acc)
}
