//! Subcommand implementations. Each writes its artifacts plus a
//! `manifest.json` into the output directory and returns a short summary.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use qwitness::channels::{prepare_pre_initial, BasisSpec, Carrier, PreparationParams, RotationRecord};
use qwitness::constants::{birefringent_delay_ps, mirror_mm_from_delay};
use qwitness::estimation::{
    estimate_birefringence, fit_linewidth, synthesize_visibility, visibility_model, LinewidthFit, VisibilityTrace,
};
use qwitness::oracle::{
    adaptive_quad, dense_apply_unitary, dense_dephase, dense_difference_spectrum, dense_embed, dense_extract_blocks,
    dense_local_operator, dense_phase_unitary, dense_reduce_system, dense_trace_distance, oracle_quantile_grid,
    Integrand,
};
use qwitness::spectrum::{discretize, quad_correlation_integral, FrequencyGrid, SpectralDensity};
use qwitness::states::{qubit_eigenbasis, reduce_system, trace_distance_qubit, QubitDensity};
use qwitness::tomography::{reconstruct, simulate_counts, CountRecord};
use qwitness::witness::{
    analytic_delta_lorentzian, analytic_max_lorentzian, build_reference, delta_total, local_distance_curve,
    prepare_alice_state, witness_max, BasisMode, DelaySweep, WitnessCurve, WitnessMax,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, TauRule, Tomography, DEFAULT_CONFIG};
use crate::error::CliError;
use crate::svg::{Chart, Series, Style, PALETTE};

/// Header of `fig4.csv`.
pub const FIG4_HEADER: [&str; 6] = ["L_mm", "t_ps", "witness_sim", "witness_err", "eq10_theory", "eq7_delta"];

/// Seed streams derived from the master seed.
const STREAM_TOMOGRAPHY: u64 = 1;
const STREAM_NOISE: u64 = 2;

/// Command-line adjustments applied on top of the configuration file.
#[derive(Debug, Clone, Serialize)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub grid_n: Option<usize>,
    pub exact_tomography: bool,
    /// Multiplies every oracle-check tolerance; a test hook.
    pub tolerance_scale: f64,
}

impl Default for Overrides {
    fn default() -> Self {
        Overrides {
            out: None,
            seed: None,
            grid_n: None,
            exact_tomography: false,
            tolerance_scale: 1.0,
        }
    }
}

/// A validated configuration and where it came from.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: RunConfig,
    pub source: String,
    pub text: String,
    pub overrides: Overrides,
}

impl Session {
    /// Reads the file (or the built-in lab configuration), applies the
    /// overrides and validates the result.
    pub fn load(path: Option<&Path>, overrides: Overrides) -> Result<Self, CliError> {
        let (source, text) = match path {
            Some(p) => (
                p.display().to_string(),
                fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
            ),
            None => ("built-in:lab".to_string(), DEFAULT_CONFIG.to_string()),
        };
        let mut config = RunConfig::parse(&text)?;
        if let Some(out) = &overrides.out {
            config.out_dir = out.clone();
        }
        if let Some(seed) = overrides.seed {
            config.protocol.seed = seed;
        }
        if let Some(n) = overrides.grid_n {
            use qwitness::spectrum::GridScheme;
            config.grid = match config.grid {
                GridScheme::Quantile { .. } => GridScheme::Quantile { n_bins: n },
                GridScheme::UniformTruncated { span_kappa, .. } => {
                    GridScheme::UniformTruncated { span_kappa, n_bins: n }
                }
            };
        }
        if overrides.exact_tomography {
            config.protocol.tomography = Tomography::Exact;
        }
        if !(overrides.tolerance_scale >= 0.0 && overrides.tolerance_scale.is_finite()) {
            return Err(CliError::config(0, "`--tolerance-scale` must be a non-negative number"));
        }
        config.revalidate()?;
        Ok(Session {
            config,
            source,
            text,
            overrides,
        })
    }

    pub fn from_config(config: RunConfig) -> Self {
        Session {
            config,
            source: "in-memory".into(),
            text: String::new(),
            overrides: Overrides::default(),
        }
    }
}

/// SplitMix64 finalizer; spreads (master, stream, index) into independent seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `stream` at position (`a`, `b`), e.g. (length index, run).
pub fn derive_seed(master: u64, stream: u64, a: usize, b: usize) -> u64 {
    mix(master ^ mix(stream << 48 ^ (a as u64) << 24 ^ b as u64))
}

#[derive(Debug, Serialize)]
struct SeedInfo {
    master: u64,
    rotation: u64,
    derivation: &'static str,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'static str,
    config_source: &'a str,
    config_text: &'a str,
    overrides: &'a Overrides,
    resolved_config: &'a RunConfig,
    seeds: SeedInfo,
    outputs: &'a [String],
}

/// Collects written files for the manifest.
struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Check(e.to_string()))?;
        s.push('\n');
        self.write(name, s)
    }

    fn finish(mut self, command: &str, session: &Session) -> Result<Vec<String>, CliError> {
        let cfg = &session.config;
        let outputs = self.written.clone();
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_source: &session.source,
            config_text: &session.text,
            overrides: &session.overrides,
            resolved_config: cfg,
            seeds: SeedInfo {
                master: cfg.protocol.seed,
                rotation: cfg.protocol.seed,
                derivation: "rotation = master; tomography(L index i, run r) = derive_seed(master, 1, i, r); \
                             visibility noise = derive_seed(master, 2, 0, 0)",
            },
            outputs: &outputs,
        };
        self.json("manifest.json", &manifest)?;
        Ok(self.written)
    }
}

fn grid_for(cfg: &RunConfig) -> Result<Arc<FrequencyGrid>, CliError> {
    let spec = SpectralDensity::lorentzian(cfg.spectrum.omega0, cfg.spectrum.delta_omega)?;
    Ok(Arc::new(discretize(&spec, cfg.grid)?))
}

fn sweep_for(cfg: &RunConfig, rule: TauRule) -> Result<DelaySweep, CliError> {
    let dw = cfg.spectrum.delta_omega;
    Ok(match rule {
        TauRule::Standard => {
            let standard = DelaySweep::standard(dw)?;
            DelaySweep::new(cfg.sweep.etas.clone(), standard.taus().to_vec())?
        }
        TauRule::Dense => DelaySweep::dense(dw, cfg.sweep.etas.clone())?,
    })
}

fn params_for(cfg: &RunConfig, length_mm: f64) -> Result<PreparationParams, CliError> {
    Ok(PreparationParams::from_crystal(
        cfg.preparation.d,
        0.0,
        length_mm,
        cfg.preparation.delta_n,
    )?)
}

/// Result of the protocol on one crystal, for every tomography run.
#[derive(Debug, Clone)]
pub struct LengthRun {
    pub length_mm: f64,
    pub t_ps: f64,
    /// First run's curve (the only one for exact tomography).
    pub curve: WitnessCurve,
    pub witness: Vec<WitnessMax>,
    pub delta_total: Vec<f64>,
    pub rotation: RotationRecord,
}

impl LengthRun {
    pub fn witness_mean(&self) -> f64 {
        self.witness.iter().map(|w| w.value).sum::<f64>() / self.witness.len() as f64
    }

    /// Sample standard deviation over tomography runs; 0 for a single run.
    pub fn witness_std(&self) -> f64 {
        let n = self.witness.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.witness_mean();
        (self.witness.iter().map(|w| (w.value - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

/// Runs the two-step protocol at one crystal length.
pub fn simulate_length(
    cfg: &RunConfig,
    grid: &Arc<FrequencyGrid>,
    sweep: &DelaySweep,
    index: usize,
    length_mm: f64,
) -> Result<LengthRun, CliError> {
    let params = params_for(cfg, length_mm)?;
    let (state, rotation) = prepare_alice_state(&params, Arc::clone(grid), cfg.protocol.seed, cfg.protocol.rotation)?;
    let modes: Vec<BasisMode> = match cfg.protocol.tomography {
        Tomography::Exact => vec![BasisMode::ExactEigenbasis],
        Tomography::Counts { n, runs } => (0..runs)
            .map(|r| BasisMode::Tomographic {
                n,
                seed: derive_seed(cfg.protocol.seed, STREAM_TOMOGRAPHY, index, r),
            })
            .collect(),
    };
    let runs: Vec<(WitnessCurve, WitnessMax, f64)> = modes
        .par_iter()
        .map(|&mode| {
            let reference = build_reference(&state, mode, cfg.protocol.dephasing)?;
            let mut curve = local_distance_curve(&state, &reference, sweep, Carrier::RotatingFrame)?;
            curve.meta.delta_omega = Some(cfg.spectrum.delta_omega);
            curve.meta.crystal_delay_ps = Some(params.t);
            curve.meta.rotation = Some(rotation);
            let w = witness_max(&curve, cfg.protocol.method, cfg.spectrum.delta_omega)?;
            curve.fit = w.fits.clone();
            let delta = delta_total(&state, &reference.state)?;
            Ok((curve, w, delta))
        })
        .collect::<Result<_, qwitness::Error>>()?;
    let curve = runs[0].0.clone();
    Ok(LengthRun {
        length_mm,
        t_ps: params.t,
        curve,
        witness: runs.iter().map(|r| r.1.clone()).collect(),
        delta_total: runs.iter().map(|r| r.2).collect(),
        rotation,
    })
}

fn eta_label(eta: f64) -> String {
    let m = eta * 16.0 / std::f64::consts::PI;
    if (m - m.round()).abs() < 1e-9 {
        format!("η = {}π/16", m.round())
    } else {
        format!("η = {eta:.4}")
    }
}

fn curve_chart(curve: &WitnessCurve, title: &str, d: f64, delta_omega: f64, style: Style) -> Result<Chart, CliError> {
    let xs = curve.sweep.x_mm();
    let mut series: Vec<Series> = curve
        .sweep
        .etas()
        .iter()
        .zip(&curve.values)
        .enumerate()
        .map(|(m, (&eta, row))| {
            Series::new(
                eta_label(eta),
                xs.iter().copied().zip(row.iter().copied()).collect(),
                PALETTE[m % PALETTE.len()],
                style.clone(),
            )
        })
        .collect();
    if let Some(t) = curve.meta.crystal_delay_ps {
        let (lo, hi) = (
            curve.sweep.taus()[0],
            *curve.sweep.taus().last().expect("non-empty sweep"),
        );
        let pts = (0..=400)
            .map(|k| {
                let tau = lo + (hi - lo) * k as f64 / 400.0;
                Ok((
                    mirror_mm_from_delay(tau),
                    analytic_delta_lorentzian(d, delta_omega, t, tau)?,
                ))
            })
            .collect::<Result<_, qwitness::Error>>()?;
        series.push(Series::new("closed form", pts, "black", Style::Dashed));
    }
    Ok(Chart {
        title: title.to_string(),
        x_label: "mirror displacement x (mm)".into(),
        y_label: "Δ(η, τ)".into(),
        series,
    })
}

#[derive(Debug, Serialize)]
struct WitnessSummary {
    length_mm: f64,
    t_ps: f64,
    n_bins: usize,
    witness_max: f64,
    witness_runs: Vec<f64>,
    witness_err: f64,
    method: qwitness::witness::WitnessMethod,
    fell_back: bool,
    degenerate_basis: bool,
    grid_max: f64,
    delta_total: f64,
    closed_form_max: f64,
    correlation_integral: f64,
}

fn witness_summary(cfg: &RunConfig, run: &LengthRun) -> Result<WitnessSummary, CliError> {
    let spec = SpectralDensity::lorentzian(cfg.spectrum.omega0, cfg.spectrum.delta_omega)?;
    let first = &run.witness[0];
    Ok(WitnessSummary {
        length_mm: run.length_mm,
        t_ps: run.t_ps,
        n_bins: run.curve.meta.n_bins,
        witness_max: run.witness_mean(),
        witness_runs: run.witness.iter().map(|w| w.value).collect(),
        witness_err: run.witness_std(),
        method: first.method,
        fell_back: run.witness.iter().any(|w| w.fell_back),
        degenerate_basis: first.degenerate_basis,
        grid_max: run.curve.grid_max(),
        delta_total: run.delta_total[0],
        closed_form_max: analytic_max_lorentzian(cfg.preparation.d, cfg.spectrum.delta_omega, run.t_ps)?,
        correlation_integral: quad_correlation_integral(&spec, run.t_ps, cfg.preparation.d)?,
    })
}

fn emit_curve(
    art: &mut Artifacts,
    cfg: &RunConfig,
    stem: &str,
    curve: &WitnessCurve,
    title: &str,
    style: Style,
) -> Result<(), CliError> {
    if cfg.formats.csv {
        let mut buf = Vec::new();
        curve.write_csv(&mut buf)?;
        art.write(&format!("{stem}.csv"), buf)?;
    }
    if cfg.formats.json {
        art.write(&format!("{stem}_curve.json"), curve.to_json()? + "\n")?;
    }
    if cfg.formats.svg {
        let chart = curve_chart(curve, title, cfg.preparation.d, cfg.spectrum.delta_omega, style)?;
        art.write(&format!("{stem}.svg"), chart.render())?;
    }
    Ok(())
}

/// Δ(η, τ) at the configured crystal length.
pub fn run_witness(session: &Session) -> Result<Vec<String>, CliError> {
    let cfg = &session.config;
    let grid = grid_for(cfg)?;
    let sweep = sweep_for(cfg, cfg.sweep.taus)?;
    let run = simulate_length(cfg, &grid, &sweep, 0, cfg.preparation.length_mm)?;
    let mut art = Artifacts::new(&cfg.out_dir)?;
    let title = format!("Local distance, L = {} mm", cfg.preparation.length_mm);
    emit_curve(&mut art, cfg, "witness", &run.curve, &title, Style::Line)?;
    art.json("witness_summary.json", &witness_summary(cfg, &run)?)?;
    art.finish("witness", session)
}

/// The η × τ table on the standard 8 × 24 sweep.
pub fn run_fig3(session: &Session) -> Result<Vec<String>, CliError> {
    let cfg = &session.config;
    let grid = grid_for(cfg)?;
    let sweep = DelaySweep::standard(cfg.spectrum.delta_omega)?;
    let run = simulate_length(cfg, &grid, &sweep, 0, cfg.preparation.length_mm)?;
    let mut art = Artifacts::new(&cfg.out_dir)?;
    let title = format!("Δ(η, τ) for η = mπ/16, L = {} mm", cfg.preparation.length_mm);
    emit_curve(&mut art, cfg, "fig3", &run.curve, &title, Style::Markers)?;
    art.json("fig3_summary.json", &witness_summary(cfg, &run)?)?;
    art.finish("fig3", session)
}

/// One `fig4.csv` row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fig4Row {
    pub length_mm: f64,
    pub t_ps: f64,
    pub witness_sim: f64,
    pub witness_err: f64,
    pub max_closed_form: f64,
    pub correlation_integral: f64,
}

impl Fig4Row {
    fn fields(&self) -> [f64; 6] {
        [
            self.length_mm,
            self.t_ps,
            self.witness_sim,
            self.witness_err,
            self.max_closed_form,
            self.correlation_integral,
        ]
    }
}

pub fn write_fig4_csv(rows: &[Fig4Row]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Core(e.into());
    w.write_record(FIG4_HEADER).map_err(io)?;
    for r in rows {
        w.write_record(r.fields().iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Check(e.to_string()))
}

pub fn read_fig4_csv(bytes: &[u8]) -> Result<Vec<Fig4Row>, CliError> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| CliError::Core(e.into()))?;
    if header.iter().ne(FIG4_HEADER) {
        return Err(CliError::Check(format!("unexpected fig4 header {header:?}")));
    }
    r.records()
        .enumerate()
        .map(|(row, rec)| {
            let rec = rec.map_err(|e| CliError::Core(e.into()))?;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::Check(format!("fig4 row {}: bad number", row + 1)))?;
            if v.len() != 6 {
                return Err(CliError::Check(format!("fig4 row {}: expected 6 columns", row + 1)));
            }
            Ok(Fig4Row {
                length_mm: v[0],
                t_ps: v[1],
                witness_sim: v[2],
                witness_err: v[3],
                max_closed_form: v[4],
                correlation_integral: v[5],
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct Fig4Detail {
    row: Fig4Row,
    witness_runs: Vec<f64>,
    delta_total_sim: Vec<f64>,
    fell_back: bool,
    degenerate_basis: bool,
}

/// Computes the fig4 rows (and per-length details) without writing anything.
pub fn fig4_rows(cfg: &RunConfig) -> Result<(Vec<Fig4Row>, Vec<LengthRun>), CliError> {
    let grid = grid_for(cfg)?;
    let sweep = sweep_for(cfg, cfg.sweep.taus)?;
    let spec = SpectralDensity::lorentzian(cfg.spectrum.omega0, cfg.spectrum.delta_omega)?;
    let runs: Vec<LengthRun> = cfg
        .fig4_lengths_mm
        .par_iter()
        .enumerate()
        .map(|(i, &l)| simulate_length(cfg, &grid, &sweep, i, l))
        .collect::<Result<_, _>>()?;
    let rows = runs
        .iter()
        .map(|r| {
            Ok(Fig4Row {
                length_mm: r.length_mm,
                t_ps: r.t_ps,
                witness_sim: r.witness_mean(),
                witness_err: r.witness_std(),
                max_closed_form: analytic_max_lorentzian(cfg.preparation.d, cfg.spectrum.delta_omega, r.t_ps)?,
                correlation_integral: quad_correlation_integral(&spec, r.t_ps, cfg.preparation.d)?,
            })
        })
        .collect::<Result<_, qwitness::Error>>()?;
    Ok((rows, runs))
}

/// Witness versus crystal length with both theory overlays.
pub fn run_fig4(session: &Session) -> Result<Vec<String>, CliError> {
    let cfg = &session.config;
    let (rows, runs) = fig4_rows(cfg)?;
    let mut art = Artifacts::new(&cfg.out_dir)?;
    if cfg.formats.csv {
        art.write("fig4.csv", write_fig4_csv(&rows)?)?;
    }
    if cfg.formats.json {
        let detail: Vec<Fig4Detail> = rows
            .iter()
            .zip(&runs)
            .map(|(row, run)| Fig4Detail {
                row: *row,
                witness_runs: run.witness.iter().map(|w| w.value).collect(),
                delta_total_sim: run.delta_total.clone(),
                fell_back: run.witness.iter().any(|w| w.fell_back),
                degenerate_basis: run.witness[0].degenerate_basis,
            })
            .collect();
        art.json("fig4.json", &detail)?;
    }
    if cfg.formats.svg {
        let l_max = rows.iter().fold(0.0f64, |m, r| m.max(r.length_mm));
        let dense = |f: &dyn Fn(f64) -> Result<f64, qwitness::Error>| -> Result<Vec<(f64, f64)>, CliError> {
            Ok((0..=120)
                .map(|k| {
                    let l = l_max * k as f64 / 120.0;
                    f(birefringent_delay_ps(l, cfg.preparation.delta_n)).map(|v| (l, v))
                })
                .collect::<Result<_, _>>()?)
        };
        let spec = SpectralDensity::lorentzian(cfg.spectrum.omega0, cfg.spectrum.delta_omega)?;
        let d = cfg.preparation.d;
        let dw = cfg.spectrum.delta_omega;
        let chart = Chart {
            title: "Witness versus crystal length".into(),
            x_label: "crystal length L (mm)".into(),
            y_label: "correlation".into(),
            series: vec![
                Series::new(
                    "max_τ Δ closed form",
                    dense(&|t| analytic_max_lorentzian(d, dw, t))?,
                    "#d62728",
                    Style::Line,
                ),
                Series::new(
                    "δ correlation integral",
                    dense(&|t| quad_correlation_integral(&spec, t, d))?,
                    "#1f77b4",
                    Style::Line,
                ),
                Series::new(
                    "simulated witness",
                    rows.iter().map(|r| (r.length_mm, r.witness_sim)).collect(),
                    "black",
                    Style::ErrorBars(rows.iter().map(|r| r.witness_err).collect()),
                ),
            ],
        };
        art.write("fig4.svg", chart.render())?;
    }
    art.finish("fig4", session)
}

#[derive(Debug, Serialize)]
struct LinewidthReport {
    source: String,
    fit: LinewidthFit,
    true_inv_linewidth_ps: Option<f64>,
    relative_error: Option<f64>,
    /// Δn from the fitted envelope shift, when a crystal length is configured.
    birefringence_from_shift: Option<f64>,
}

/// Synthetic (or loaded) visibility trace for the configured estimation.
pub fn visibility_trace(cfg: &RunConfig) -> Result<(VisibilityTrace, String), CliError> {
    let est = &cfg.estimation;
    if let Some(path) = &est.input {
        let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        return Ok((VisibilityTrace::read_csv(file)?, path.display().to_string()));
    }
    let dw = 1.0 / est.inv_linewidth_ps;
    let half = 0.5 * est.span_decays / dw;
    let n = est.n_points;
    let xs: Vec<f64> = (0..n)
        .map(|k| est.x0_mm + mirror_mm_from_delay(-half + 2.0 * half * k as f64 / (n - 1) as f64))
        .collect();
    let seed = derive_seed(cfg.protocol.seed, STREAM_NOISE, 0, 0);
    Ok((
        synthesize_visibility(dw, &xs, est.noise_sigma, seed, est.x0_mm)?,
        "synthetic".into(),
    ))
}

/// Fits the single-photon visibility envelope for 1/δω.
pub fn run_fit_linewidth(session: &Session) -> Result<Vec<String>, CliError> {
    let cfg = &session.config;
    let (trace, source) = visibility_trace(cfg)?;
    let fit = fit_linewidth(&trace)?;
    let synthetic = cfg.estimation.input.is_none();
    let truth = synthetic.then_some(cfg.estimation.inv_linewidth_ps);
    let birefringence = if cfg.preparation.length_mm > 0.0 && fit.x0_mm != 0.0 {
        Some(estimate_birefringence(fit.x0_mm, cfg.preparation.length_mm)?)
    } else {
        None
    };
    let mut art = Artifacts::new(&cfg.out_dir)?;
    if cfg.formats.csv {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf)?;
        art.write("visibility.csv", buf)?;
    }
    art.json(
        "linewidth_fit.json",
        &LinewidthReport {
            source,
            fit,
            true_inv_linewidth_ps: truth,
            relative_error: truth.map(|t| (fit.inv_linewidth_ps - t) / t),
            birefringence_from_shift: birefringence,
        },
    )?;
    if cfg.formats.svg {
        let (lo, hi) = trace
            .samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| {
                (a.min(s.x_mm), b.max(s.x_mm))
            });
        let model: Vec<(f64, f64)> = (0..=300)
            .map(|k| {
                let x = lo + (hi - lo) * k as f64 / 300.0;
                (x, visibility_model(x, fit.delta_omega, fit.x0_mm, fit.amplitude))
            })
            .collect();
        let chart = Chart {
            title: format!("Visibility envelope, 1/δω = {:.3} ps", fit.inv_linewidth_ps),
            x_label: "mirror displacement x (mm)".into(),
            y_label: "visibility".into(),
            series: vec![
                Series::new(
                    "data",
                    trace.samples.iter().map(|s| (s.x_mm, s.visibility)).collect(),
                    PALETTE[0],
                    Style::Markers,
                ),
                Series::new("fit", model, PALETTE[3], Style::Line),
            ],
        };
        art.write("linewidth.svg", chart.render())?;
    }
    art.finish("fit-linewidth", session)
}

#[derive(Debug, Serialize)]
struct TomographyReport {
    length_mm: f64,
    photons_per_setting: u64,
    seed: u64,
    truth: QubitDensity,
    estimate: QubitDensity,
    truth_bloch: [f64; 3],
    estimate_bloch: [f64; 3],
    trace_distance: f64,
    /// Angle between true and estimated eigenbases on the Bloch sphere (degrees).
    basis_angle_deg: f64,
}

/// Simulates one tomography of Alice's reduced state.
pub fn run_tomography_demo(session: &Session) -> Result<Vec<String>, CliError> {
    let cfg = &session.config;
    let grid = grid_for(cfg)?;
    let params = params_for(cfg, cfg.preparation.length_mm)?;
    let (state, _) = prepare_alice_state(&params, grid, cfg.protocol.seed, cfg.protocol.rotation)?;
    let truth = reduce_system(&state);
    let n = match cfg.protocol.tomography {
        Tomography::Counts { n, .. } => n,
        Tomography::Exact => 100_000,
    };
    let seed = derive_seed(cfg.protocol.seed, STREAM_TOMOGRAPHY, 0, 0);
    let counts: CountRecord = simulate_counts(&truth, n, seed)?;
    let estimate = reconstruct(&counts);
    let (a, b) = (truth.bloch(), estimate.bloch());
    let norm = |v: [f64; 3]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b));
    let report = TomographyReport {
        length_mm: cfg.preparation.length_mm,
        photons_per_setting: n,
        seed,
        truth,
        estimate,
        truth_bloch: a,
        estimate_bloch: b,
        trace_distance: trace_distance_qubit(&truth, &estimate),
        basis_angle_deg: cos.clamp(-1.0, 1.0).acos().to_degrees(),
    };
    let mut art = Artifacts::new(&cfg.out_dir)?;
    if cfg.formats.csv {
        let mut buf = Vec::new();
        counts.write_csv(&mut buf)?;
        art.write("counts.csv", buf)?;
    }
    art.json("tomography.json", &report)?;
    art.finish("tomography-demo", session)
}

/// One oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleCheck {
    fn new(name: String, deviation: f64, tolerance: f64) -> Self {
        OracleCheck {
            passed: deviation <= tolerance,
            name,
            deviation,
            tolerance,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: deviation {:.3e} (tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.deviation,
            self.tolerance
        )
    }
}

/// Dense-versus-block equivalence suite at one grid size.
pub fn oracle_checks_at(cfg: &RunConfig, n_bins: usize, scale: f64) -> Result<Vec<OracleCheck>, CliError> {
    let grid = Arc::new(oracle_quantile_grid(
        cfg.spectrum.omega0,
        cfg.spectrum.delta_omega,
        n_bins,
    )?);
    let params = params_for(cfg, cfg.preparation.length_mm)?;
    let sweep = DelaySweep::new(
        cfg.sweep.etas.clone(),
        DelaySweep::standard(cfg.spectrum.delta_omega)?.taus().to_vec(),
    )?;
    let tag = |s: &str| format!("N={n_bins} {s}");

    // Block pipeline.
    let (state, rotation) = prepare_alice_state(&params, Arc::clone(&grid), cfg.protocol.seed, cfg.protocol.rotation)?;
    let reference = build_reference(
        &state,
        BasisMode::ExactEigenbasis,
        qwitness::witness::DephasingMode::Projective,
    )?;
    let curve = local_distance_curve(&state, &reference, &sweep, Carrier::RotatingFrame)?;
    let delta_block = delta_total(&state, &reference.state)?;

    // Dense pipeline, from the pre-initial state.
    let pre = prepare_pre_initial(&params, Arc::clone(&grid))?;
    let dense = dense_embed(&pre)?;
    let dense = dense_apply_unitary(
        &dense,
        &dense_phase_unitary(&grid, &BasisSpec::hv(), params.t, Carrier::RotatingFrame)?,
    )?;
    let dense = dense_apply_unitary(&dense, &dense_local_operator(&rotation.unitary, n_bins))?;
    let eig = qubit_eigenbasis(&dense_reduce_system(&dense)?);
    let basis = BasisSpec::custom(eig.basis[0])?;
    let dense_ref = dense_dephase(&dense, &basis);

    let mut checks = Vec::new();

    // Prepared states agree.
    let blocks = dense_extract_blocks(&dense)?;
    let dev = blocks
        .blocks()
        .iter()
        .zip(state.blocks())
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0, f64::max);
    checks.push(OracleCheck::new(
        tag("prepared state (dense vs block)"),
        dev,
        1e-12 * scale,
    ));

    let blocks = dense_extract_blocks(&dense_ref)?;
    let dev = blocks
        .blocks()
        .iter()
        .zip(reference.state.blocks())
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0, f64::max);
    checks.push(OracleCheck::new(
        tag("dephased reference (dense vs block)"),
        dev,
        1e-12 * scale,
    ));

    // Δ(η, τ) on every sweep point.
    let points: Vec<(usize, usize)> = (0..sweep.etas().len())
        .flat_map(|m| (0..sweep.taus().len()).map(move |k| (m, k)))
        .collect();
    let dense_values: Vec<f64> = points
        .par_iter()
        .map(|&(m, k)| {
            let u = dense_phase_unitary(
                &grid,
                &BasisSpec::eta(sweep.etas()[m]),
                sweep.taus()[k],
                Carrier::RotatingFrame,
            )?;
            let a = dense_reduce_system(&dense_apply_unitary(&dense, &u)?)?;
            let b = dense_reduce_system(&dense_apply_unitary(&dense_ref, &u)?)?;
            Ok(2.0 * trace_distance_qubit(&a, &b))
        })
        .collect::<Result<_, qwitness::Error>>()?;
    let dev = points
        .iter()
        .zip(&dense_values)
        .map(|(&(m, k), v)| (curve.values[m][k] - v).abs())
        .fold(0.0, f64::max);
    checks.push(OracleCheck::new(tag("Δ(η,τ) (dense vs block)"), dev, 1e-11 * scale));

    // Total correlation and the ± pairing of the difference spectrum.
    let dense_delta = 2.0 * dense_trace_distance(&dense, &dense_ref)?;
    checks.push(OracleCheck::new(
        tag("δ (dense vs block)"),
        (dense_delta - delta_block).abs(),
        1e-12 * scale,
    ));
    let spectrum = dense_difference_spectrum(&dense, &dense_ref)?;
    let pairing = (0..spectrum.len() / 2)
        .map(|k| (spectrum[k] + spectrum[spectrum.len() - 1 - k]).abs())
        .fold(0.0, f64::max);
    checks.push(OracleCheck::new(
        tag("± eigenvalue pairing of ρ − ρ′"),
        pairing,
        1e-12 * scale,
    ));

    // Zero-discord certificate of the reference.
    let p = reference.basis.projector();
    let commut = reference
        .state
        .blocks()
        .iter()
        .map(|b| b.commutator(&p).max_abs())
        .fold(0.0, f64::max);
    checks.push(OracleCheck::new(
        tag("reference commutes with projector"),
        commut,
        1e-12 * scale,
    ));
    let marg = reduce_system(&state)
        .matrix()
        .max_abs_diff(reduce_system(&reference.state).matrix());
    checks.push(OracleCheck::new(
        tag("reduced states of ρ and ρ′ coincide"),
        marg,
        1e-12 * scale,
    ));
    Ok(checks)
}

/// Quadrature checks against closed forms, independent of the grid.
pub fn quadrature_checks(cfg: &RunConfig, scale: f64) -> Result<Vec<OracleCheck>, CliError> {
    let spec = SpectralDensity::lorentzian(cfg.spectrum.omega0, cfg.spectrum.delta_omega)?;
    let t = params_for(cfg, cfg.preparation.length_mm)?.t;
    let tol = qwitness::spectrum::QUAD_ABS_TOL;
    let mut checks = Vec::new();
    let norm = adaptive_quad(&Integrand::constant(1.0), &spec, 0.1 * tol)?.value;
    checks.push(OracleCheck::new(
        "quadrature normalization".into(),
        (norm - 1.0).abs(),
        tol * scale,
    ));
    let quad = spec.expect_phase(t)?;
    let closed = spec.coherence(t)?;
    checks.push(OracleCheck::new(
        "quadrature coherence vs closed form".into(),
        (quad - closed).norm(),
        tol * scale,
    ));
    Ok(checks)
}

/// All oracle checks for the configured grid sizes.
pub fn oracle_report(cfg: &RunConfig, scale: f64) -> Result<Vec<OracleCheck>, CliError> {
    let mut checks = quadrature_checks(cfg, scale)?;
    for &n in &cfg.oracle.n_bins {
        checks.extend(oracle_checks_at(cfg, n, scale)?);
    }
    Ok(checks)
}

/// Prints one PASS/FAIL line per invariant; fails if any check fails.
pub fn run_oracle_check(session: &Session) -> Result<Vec<String>, CliError> {
    let cfg = &session.config;
    let checks = oracle_report(cfg, session.overrides.tolerance_scale)?;
    for c in &checks {
        println!("{}", c.line());
    }
    let mut art = Artifacts::new(&cfg.out_dir)?;
    art.json("oracle_report.json", &checks)?;
    let written = art.finish("oracle-check", session)?;
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(OracleCheck::line).collect();
    if failed.is_empty() {
        Ok(written)
    } else {
        Err(CliError::Check(failed.join("; ")))
    }
}
