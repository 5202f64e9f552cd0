//! Run configuration, experiment drivers and file output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{PideError, Result};
use crate::grids::Stretch;
use crate::levy::{Mat2, NtsModel, Preset, Vec2};
use crate::mc::{mc_price, Estimate, McOptions};
use crate::payoff::PayoffSpec;
use crate::quadrature::{build_scheme, build_zgrid, QuadratureScheme};
use crate::spatial_ops::{BoundaryPolicy, TensorInterp};
use crate::stepper::{greeks, price_at, solve, Discretization, GridParams, PriceSurface, SolveReport, SolverConfig};

/// Every knob of a run. Unset optional fields follow the preset couplings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Explicit parameters replacing the preset's model.
    pub model: Option<NtsModel>,
    pub n_x: usize,
    /// Defaults to `2 n_x`.
    pub n_z: Option<usize>,
    /// Defaults to `round(n_x / 2)`.
    pub n_t: Option<usize>,
    /// Defaults to `2.5 K`.
    pub x_int: Option<f64>,
    /// Defaults to the preset's multiple of `K`.
    pub x_max: Option<f64>,
    /// Defaults to `max(0.65, x_int / x_max)`.
    pub f_target: Option<f64>,
    pub theta: f64,
    pub damping_substeps: usize,
    pub tol_fixed_point: f64,
    pub tol_linear: f64,
    pub fp_max_iter: usize,
    pub linear_max_iter: usize,
    pub extrapolate_start: bool,
    pub table_points: Vec<f64>,
    pub converge_sizes: Vec<usize>,
    pub converge_reference: usize,
    /// Error window `[0, w K]^2` of the convergence study.
    pub error_window: f64,
    pub mc_points: Vec<Vec2>,
    pub mc_paths: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        RunConfig {
            preset: Preset::Vg0,
            model: None,
            n_x: 200,
            n_z: None,
            n_t: None,
            x_int: None,
            x_max: None,
            f_target: None,
            theta: solver.theta,
            damping_substeps: solver.damping_substeps,
            tol_fixed_point: solver.tol_fixed_point,
            tol_linear: solver.tol_linear,
            fp_max_iter: solver.fp_max_iter,
            linear_max_iter: solver.linear_max_iter,
            extrapolate_start: solver.extrapolate_start,
            table_points: vec![90.0, 100.0, 110.0],
            converge_sizes: vec![25, 50, 100],
            converge_reference: 200,
            error_window: 3.0,
            mc_points: vec![[100.0, 100.0]],
            mc_paths: 1_000_000,
            seed: 1,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Fully determined parameters of one solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Resolved {
    pub model: NtsModel,
    pub grid: GridParams,
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn for_preset(preset: Preset) -> Self {
        RunConfig {
            preset,
            ..RunConfig::default()
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PideError::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn model(&self) -> NtsModel {
        self.model.unwrap_or_else(|| self.preset.model())
    }

    pub fn payoff(&self) -> PayoffSpec {
        PayoffSpec::put_on_average(self.model().strike)
    }

    /// Parameters at spatial size `n_x`; size-coupled fields follow `n_x`
    /// unless they were set explicitly.
    pub fn resolve_at(&self, n_x: usize) -> Result<Resolved> {
        let model = self.model();
        model.validate()?;
        let k = model.strike;
        let x_int = self.x_int.unwrap_or(2.5 * k);
        let x_max = self.x_max.unwrap_or(self.preset.x_max_factor() * k);
        let f_target = self.f_target.unwrap_or((x_int / x_max).max(0.65));
        let n_t = self.n_t.unwrap_or(((n_x as f64) / 2.0).round() as usize);
        if n_x < 4 {
            return Err(PideError::InvalidConfig(format!("n_x = {n_x} is too small")));
        }
        if self.table_points.iter().chain(self.mc_points.iter().flatten()).any(|&x| !(0.0..=x_max).contains(&x)) {
            return Err(PideError::InvalidConfig("evaluation points must lie in [0, x_max]".into()));
        }
        Ok(Resolved {
            model,
            grid: GridParams {
                n_x,
                n_z: self.n_z.unwrap_or(2 * n_x),
                x_int,
                x_max,
                f_target,
            },
            solver: SolverConfig {
                theta: self.theta,
                n_t,
                damping_substeps: self.damping_substeps,
                tol_fixed_point: self.tol_fixed_point,
                tol_linear: self.tol_linear,
                fp_max_iter: self.fp_max_iter,
                linear_max_iter: self.linear_max_iter,
                extrapolate_start: self.extrapolate_start,
            },
        })
    }
}

/// Derived discretisation quantities echoed into manifests.
#[derive(Debug, Clone, Serialize)]
pub struct SetupInfo {
    pub stretch: Stretch,
    pub fraction_achieved: f64,
    pub h_z: f64,
    pub z_max: [f64; 3],
    pub ny_minus: i64,
    pub ny_plus: i64,
    pub ny_star: i64,
    pub sharp_in: usize,
    pub sharp_out: usize,
    pub r_w: f64,
    pub kappa_w: Vec2,
    pub sigma_w_sq: Mat2,
    pub second_moment_inner: Mat2,
    pub total_weight: f64,
    pub seconds: f64,
}

impl SetupInfo {
    fn new(disc: &Discretization, seconds: f64) -> Self {
        let s = &disc.scheme;
        SetupInfo {
            stretch: disc.grid.stretch,
            fraction_achieved: disc.grid.fraction_below(disc.grid.x_int),
            h_z: s.grid.h_z,
            z_max: [s.partition.z_max_i, s.partition.z_max_ii, s.partition.z_max_iii],
            ny_minus: disc.ygrids.ny_minus,
            ny_plus: disc.ygrids.ny_plus,
            ny_star: disc.ygrids.ny_star,
            sharp_in: disc.ygrids.sharp_in(),
            sharp_out: disc.ygrids.sharp_out(),
            r_w: s.r_w,
            kappa_w: s.kappa_w,
            sigma_w_sq: s.sigma_w_sq,
            second_moment_inner: s.second_moment_ri,
            total_weight: s.total_weight(),
            seconds,
        }
    }
}

/// Result of one PIDE solve.
#[derive(Debug, Clone)]
pub struct PriceRun {
    pub params: Resolved,
    pub setup: SetupInfo,
    pub surface: PriceSurface,
    pub report: SolveReport,
}

impl PriceRun {
    pub fn price(&self, x: &Vec2) -> Result<f64> {
        price_at(&self.surface, x)
    }

    /// Prices on the tensor grid of `points`, `x1` varying slowest.
    pub fn table(&self, points: &[f64]) -> Result<Vec<TableRow>> {
        let mut rows = Vec::with_capacity(points.len() * points.len());
        for &x1 in points {
            for &x2 in points {
                rows.push(TableRow {
                    x1,
                    x2,
                    price: self.price(&[x1, x2])?,
                });
            }
        }
        Ok(rows)
    }
}

/// Solves at size `n_x` and attaches sensitivities.
pub fn price_run(config: &RunConfig, n_x: usize) -> Result<PriceRun> {
    let params = config.resolve_at(n_x)?;
    let clock = Instant::now();
    let disc = Discretization::build(&params.model, &params.grid)?;
    let setup = SetupInfo::new(&disc, clock.elapsed().as_secs_f64());
    log::info!(
        "n_x = {n_x}: setup {:.1}s, transform size {}",
        setup.seconds,
        setup.sharp_in
    );
    let (surface, report) = solve(&params.model, &config.payoff(), &disc, &params.solver)?;
    log::info!(
        "n_x = {n_x}: {} steps in {:.1}s, {} fixed-point iterations",
        params.solver.n_t,
        report.total_seconds,
        report.fp_iterations()
    );
    Ok(PriceRun {
        params,
        setup,
        surface: greeks(surface)?,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub x1: f64,
    pub x2: f64,
    pub price: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub x1: f64,
    pub x2: f64,
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n_x: usize,
    pub error: f64,
    /// Order observed against the previous size; empty on the first row.
    pub observed_order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub quantity: String,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McCheckRow {
    pub x0_1: f64,
    pub x0_2: f64,
    pub pide_price: f64,
    pub mc_price: f64,
    pub mc_se: f64,
    pub z_score: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PideError::Io(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| PideError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_manifest(dir: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PideError::Io(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PideError::Io(format!("{}: {e}", dir.display())))
}

pub fn surface_rows(surface: &PriceSurface) -> Vec<SurfaceRow> {
    let nodes = &surface.grid.nodes;
    let n = nodes.len();
    let zero = || [vec![0.0; n * n], vec![0.0; n * n]];
    let (d, g) = (surface.delta.clone().unwrap_or_else(zero), surface.gamma.clone().unwrap_or_else(zero));
    (0..n * n)
        .map(|i| SurfaceRow {
            x1: nodes[i % n],
            x2: nodes[i / n],
            price: surface.values[i],
            delta1: d[0][i],
            delta2: d[1][i],
            gamma1: g[0][i],
            gamma2: g[1][i],
        })
        .collect()
}

fn run_json(run: &PriceRun) -> serde_json::Value {
    let steps = &run.report.steps;
    json!({
        "parameters": run.params,
        "setup": run.setup,
        "nodes": run.surface.grid.nodes,
        "iterations": {
            "damping_fixed_point": run.report.damping.iter().map(|s| s.fp_iterations).collect::<Vec<_>>(),
            "fixed_point": steps.iter().map(|s| s.fp_iterations).collect::<Vec<_>>(),
            "linear": steps.iter().map(|s| s.linear_iterations).collect::<Vec<_>>(),
            "fixed_point_total": run.report.fp_iterations(),
            "linear_total": run.report.linear_iterations(),
        },
        "timings": {
            "setup_seconds": run.setup.seconds,
            "damping_seconds": run.report.setup_seconds,
            "solve_seconds": run.report.total_seconds,
            "step_seconds": steps.iter().map(|s| s.seconds).collect::<Vec<_>>(),
        },
    })
}

/// Solves at `config.n_x` and writes `surface.csv`, `table.csv` and `manifest.json`.
pub fn run_price(config: &RunConfig) -> Result<PriceRun> {
    let dir = &config.out_dir;
    prepare(dir)?;
    let run = price_run(config, config.n_x)?;
    let table = run.table(&config.table_points)?;
    write_csv(&dir.join("surface.csv"), &surface_rows(&run.surface))?;
    write_csv(&dir.join("table.csv"), &table)?;
    write_manifest(
        dir,
        &json!({
            "command": "price",
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "run": run_json(&run),
            "table": table,
        }),
    )?;
    Ok(run)
}

/// Errors against a reference solution with the fitted order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub sizes: Vec<usize>,
    pub errors: Vec<f64>,
    pub reference: usize,
    pub order: f64,
    /// Root-mean-square residual of the log-log regression.
    pub residual: f64,
}

/// Maximum deviation over nodes of `run` inside `[0, window]^2` from the
/// cubic interpolant of `reference`.
pub fn max_error(run: &PriceSurface, reference: &PriceSurface, window: f64) -> Result<f64> {
    let nodes = &run.grid.nodes;
    let n = nodes.len();
    let inside: Vec<usize> = (0..n).filter(|&m| nodes[m] <= window).collect();
    let targets: Vec<f64> = inside.iter().map(|&m| nodes[m]).collect();
    let r = &reference.grid.nodes;
    let interp = TensorInterp::new([r, r], [&targets, &targets], BoundaryPolicy::Zero)?;
    let expected = interp.apply(&reference.values);
    let k = targets.len();
    let mut err = 0.0f64;
    for (a2, &m2) in inside.iter().enumerate() {
        for (a1, &m1) in inside.iter().enumerate() {
            err = err.max((run.values[m2 * n + m1] - expected[a2 * k + a1]).abs());
        }
    }
    Ok(err)
}

/// Least-squares slope of `ln E` against `ln N`, negated, with the RMS residual.
pub fn fit_order(sizes: &[usize], errors: &[f64]) -> Result<(f64, f64)> {
    if sizes.len() != errors.len() || sizes.len() < 2 {
        return Err(PideError::InvalidConfig("order fit needs at least two sizes".into()));
    }
    if errors.iter().any(|&e| !(e > 0.0)) {
        return Err(PideError::Domain("order fit needs positive errors".into()));
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    Ok((-slope, (rss / m).sqrt()))
}

/// Builds the report from solved runs.
pub fn convergence_report(runs: &[&PriceRun], reference: &PriceRun, window: f64) -> Result<ConvergenceReport> {
    let errors = runs
        .iter()
        .map(|r| max_error(&r.surface, &reference.surface, window))
        .collect::<Result<Vec<_>>>()?;
    let sizes: Vec<usize> = runs.iter().map(|r| r.params.grid.n_x).collect();
    let (order, residual) = fit_order(&sizes, &errors)?;
    Ok(ConvergenceReport {
        sizes,
        errors,
        reference: reference.params.grid.n_x,
        order,
        residual,
    })
}

pub fn convergence_rows(report: &ConvergenceReport) -> Vec<ConvergenceRow> {
    (0..report.sizes.len())
        .map(|i| ConvergenceRow {
            n_x: report.sizes[i],
            error: report.errors[i],
            observed_order: (i > 0).then(|| {
                (report.errors[i - 1] / report.errors[i]).ln()
                    / (report.sizes[i] as f64 / report.sizes[i - 1] as f64).ln()
            }),
        })
        .collect()
}

/// Convergence study; writes `convergence.csv` and `manifest.json`.
pub fn run_converge(config: &RunConfig) -> Result<ConvergenceReport> {
    let dir = &config.out_dir;
    prepare(dir)?;
    let reference_size = config.converge_reference;
    if config.converge_sizes.iter().any(|&n| n >= reference_size) {
        return Err(PideError::InvalidConfig(format!(
            "reference size {reference_size} must exceed every study size"
        )));
    }
    let reference = price_run(config, reference_size)?;
    let runs = config
        .converge_sizes
        .iter()
        .map(|&n| price_run(config, n))
        .collect::<Result<Vec<_>>>()?;
    let window = config.error_window * reference.params.model.strike;
    let report = convergence_report(&runs.iter().collect::<Vec<_>>(), &reference, window)?;
    write_csv(&dir.join("convergence.csv"), &convergence_rows(&report))?;
    write_manifest(
        dir,
        &json!({
            "command": "converge",
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "report": report,
            "reference": run_json(&reference),
            "runs": runs.iter().map(run_json).collect::<Vec<_>>(),
        }),
    )?;
    Ok(report)
}

pub fn weight_rows(scheme: &QuadratureScheme) -> Vec<WeightRow> {
    let len = scheme.grid.len();
    let row = |quantity: &str, i, j, value| WeightRow {
        quantity: quantity.into(),
        i,
        j,
        value,
    };
    let mut rows: Vec<WeightRow> = (0..len * len)
        .map(|f| row("omega", f % len, f / len, scheme.omega[f]))
        .collect();
    for i in 0..2 {
        rows.push(row("kappa_w", i, 0, scheme.kappa_w[i]));
    }
    rows.push(row("r_w", 0, 0, scheme.r_w));
    for i in 0..2 {
        for j in 0..2 {
            rows.push(row("sigma_w_sq", i, j, scheme.sigma_w_sq[i][j]));
        }
    }
    rows
}

/// Builds the jump quadrature at `n_z` and writes `weights.csv` and `manifest.json`.
pub fn run_weights(config: &RunConfig) -> Result<QuadratureScheme> {
    let dir = &config.out_dir;
    prepare(dir)?;
    let params = config.resolve_at(config.n_x)?;
    let (zgrid, partition) = build_zgrid(&params.model, params.grid.n_z)?;
    let scheme = build_scheme(&params.model, &zgrid, &partition)?;
    write_csv(&dir.join("weights.csv"), &weight_rows(&scheme))?;
    write_manifest(
        dir,
        &json!({
            "command": "weights",
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "model": params.model,
            "n_z": zgrid.n_z,
            "h_z": zgrid.h_z,
            "z_max": [partition.z_max_i, partition.z_max_ii, partition.z_max_iii],
            "kappa_w": scheme.kappa_w,
            "r_w": scheme.r_w,
            "sigma_w_sq": scheme.sigma_w_sq,
            "second_moment_inner": scheme.second_moment_ri,
            "total_weight": scheme.total_weight(),
        }),
    )?;
    Ok(scheme)
}

/// Outcome of the Monte Carlo comparison.
#[derive(Debug, Clone, Serialize)]
pub struct McCheck {
    pub rows: Vec<McCheckRow>,
    /// Discounted asset means per point, to be compared with the spot.
    pub martingale: Vec<[Estimate; 2]>,
    pub paths: usize,
    pub flagged: usize,
}

impl McCheck {
    /// Largest `|E[e^{-rT} X_i(T)] - x0_i| / se` over points and assets.
    pub fn martingale_z(&self) -> f64 {
        self.rows
            .iter()
            .zip(&self.martingale)
            .flat_map(|(r, m)| [(r.x0_1, m[0]), (r.x0_2, m[1])])
            .map(|(x0, e)| (e.mean - x0).abs() / e.std_error)
            .fold(0.0, f64::max)
    }
}

/// Compares Monte Carlo prices with an existing PIDE run.
pub fn mc_check(config: &RunConfig, run: &PriceRun) -> Result<McCheck> {
    let model = run.params.model;
    let payoff = config.payoff();
    let opts = McOptions::new(config.mc_paths, config.seed);
    let mut rows = Vec::new();
    let mut martingale = Vec::new();
    let mut paths = 0;
    for x0 in &config.mc_points {
        let pide = run.price(x0)?;
        let mc = mc_price(&model, &payoff, x0, &opts)?;
        paths = mc.paths;
        rows.push(McCheckRow {
            x0_1: x0[0],
            x0_2: x0[1],
            pide_price: pide,
            mc_price: mc.price.mean,
            mc_se: mc.price.std_error,
            z_score: (mc.price.mean - pide) / mc.price.std_error,
        });
        martingale.push(mc.discounted_assets);
    }
    let flagged = rows.iter().filter(|r| r.z_score.abs() > 3.0).count();
    Ok(McCheck {
        rows,
        martingale,
        paths,
        flagged,
    })
}

/// PIDE solve plus Monte Carlo at `config.mc_points`; writes `mc_check.csv`
/// and `manifest.json`.
pub fn run_mc_check(config: &RunConfig) -> Result<McCheck> {
    let dir = &config.out_dir;
    prepare(dir)?;
    let run = price_run(config, config.n_x)?;
    let check = mc_check(config, &run)?;
    if check.flagged > 0 {
        log::warn!("{} point(s) with |z| > 3", check.flagged);
    }
    write_csv(&dir.join("mc_check.csv"), &check.rows)?;
    write_manifest(
        dir,
        &json!({
            "command": "mc-check",
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "run": run_json(&run),
            "check": check,
            "martingale_max_z": check.martingale_z(),
        }),
    )?;
    Ok(check)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_couplings() {
        let c = RunConfig::for_preset(Preset::Nig0);
        let r = c.resolve_at(200).unwrap();
        assert_eq!(r.grid.n_z, 400);
        assert_eq!(r.solver.n_t, 100);
        assert_eq!(r.grid.x_int, 250.0);
        assert_eq!(r.grid.x_max, 600.0);
        assert_eq!(r.grid.f_target, 0.65);
        let r = RunConfig::for_preset(Preset::Vg1).resolve_at(25).unwrap();
        assert_eq!(r.solver.n_t, 13);
        assert_eq!(r.grid.f_target, 0.65);
        let r = RunConfig::for_preset(Preset::Vg0).resolve_at(50).unwrap();
        assert_eq!(r.grid.x_max, 5700.0);
    }

    #[test]
    fn config_overrides_from_json() {
        let c: RunConfig = serde_json::from_str(r#"{"preset": "NIG1", "n_x": 40, "n_t": 7, "seed": 3}"#).unwrap();
        assert_eq!(c.preset, Preset::Nig1);
        let r = c.resolve_at(c.n_x).unwrap();
        assert_eq!((r.grid.n_z, r.solver.n_t), (80, 7));
        assert!(serde_json::from_str::<RunConfig>(r#"{"nx": 40}"#).is_err());
    }

    #[test]
    fn order_fit() {
        let sizes = [25, 50, 100];
        let errors: Vec<f64> = sizes.iter().map(|&n| 3.0 / (n as f64).powi(2)).collect();
        let (p, res) = fit_order(&sizes, &errors).unwrap();
        assert!((p - 2.0).abs() < 1e-12 && res < 1e-12);
        assert!(fit_order(&[10], &[1.0]).is_err());
        assert!(fit_order(&[10, 20], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn weight_rows_layout() {
        let m = Preset::Vg1.model();
        let (g, p) = build_zgrid(&m, 4).unwrap();
        let s = build_scheme(&m, &g, &p).unwrap();
        let rows = weight_rows(&s);
        assert_eq!(rows.len(), 64 + 2 + 1 + 4);
        assert_eq!((rows[9].i, rows[9].j), (1, 1));
        assert_eq!(rows[9].value, s.omega[9]);
        assert_eq!(rows[66].quantity, "r_w");
    }
}
