//! Sectioned `key = value` run configuration.
//!
//! ```text
//! # comment
//! [spectrum]
//! wavelength_nm = 914
//! inv_linewidth_ps = 9.703
//! ```
//!
//! Lists are comma separated. Every key is validated at load time and all
//! errors carry the line of the offending key.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use qwitness::channels::{RotationSampler, RESOLUTION_GUARD_RAD};
use qwitness::constants::{
    birefringent_delay_ps, omega_from_wavelength_nm, CALCITE_DELTA_N, CRYSTAL_LENGTH_MM, CRYSTAL_STEP_MM,
    FIBER_DELTA_N, FIBER_LENGTH_M, INV_LINEWIDTH_PS, WAVELENGTH_NM,
};
use qwitness::spectrum::GridScheme;
use qwitness::witness::{DephasingMode, WitnessMethod};
use serde::Serialize;

use crate::error::CliError;

/// Built-in configuration reproducing the calcite/fiber lab setup.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/lab.conf");

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumConfig {
    pub omega0: f64,
    pub delta_omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreparationConfig {
    pub d: f64,
    /// Crystal for the witness, fig3 and tomography-demo commands.
    pub length_mm: f64,
    pub delta_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Tomography {
    Exact,
    Counts { n: u64, runs: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolConfig {
    pub dephasing: DephasingMode,
    pub tomography: Tomography,
    pub rotation: RotationSampler,
    pub seed: u64,
    pub method: WitnessMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TauRule {
    Standard,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub etas: Vec<f64>,
    pub taus: TauRule,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationConfig {
    /// Fit this CSV instead of synthesizing a trace.
    pub input: Option<PathBuf>,
    pub inv_linewidth_ps: f64,
    pub noise_sigma: f64,
    pub n_points: usize,
    pub span_decays: f64,
    pub x0_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleConfig {
    pub n_bins: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
    pub svg: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub spectrum: SpectrumConfig,
    pub preparation: PreparationConfig,
    pub grid: GridScheme,
    pub protocol: ProtocolConfig,
    pub sweep: SweepConfig,
    pub fig4_lengths_mm: Vec<f64>,
    pub estimation: EstimationConfig,
    pub oracle: OracleConfig,
    pub out_dir: PathBuf,
    pub formats: Formats,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw `section.key → value` map with line numbers.
#[derive(Debug, Default)]
struct RawConfig {
    entries: BTreeMap<(String, String), Entry>,
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    ("spectrum", &["wavelength_nm", "omega0_rad_per_ps", "inv_linewidth_ps"]),
    ("preparation", &["d", "length_mm", "delta_n"]),
    ("grid", &["scheme", "n_bins", "span_kappa"]),
    (
        "protocol",
        &[
            "dephasing",
            "fiber_length_m",
            "fiber_delta_n",
            "fiber_delay_ps",
            "tomography",
            "tomography_n",
            "tomography_runs",
            "rotation",
            "seed",
            "witness_method",
        ],
    ),
    ("sweep", &["etas", "taus"]),
    ("fig4", &["lengths_mm"]),
    (
        "estimation",
        &[
            "input",
            "inv_linewidth_ps",
            "noise_sigma",
            "n_points",
            "span_decays",
            "x0_mm",
        ],
    ),
    ("oracle", &["n_bins"]),
    ("output", &["dir", "formats"]),
];

fn parse_raw(text: &str) -> Result<RawConfig, CliError> {
    let mut raw = RawConfig::default();
    let mut section: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| CliError::config(lineno, "unterminated section header"))?
                .trim();
            if !KNOWN_KEYS.iter().any(|(s, _)| *s == name) {
                return Err(CliError::config(lineno, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| CliError::config(lineno, format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section
            .as_deref()
            .ok_or_else(|| CliError::config(lineno, format!("key `{key}` outside any section")))?;
        let allowed = KNOWN_KEYS
            .iter()
            .find(|(s, _)| *s == sec)
            .map(|(_, k)| *k)
            .unwrap_or(&[]);
        if !allowed.contains(&key) {
            return Err(CliError::config(lineno, format!("unknown key `{key}` in [{sec}]")));
        }
        if value.is_empty() {
            return Err(CliError::config(lineno, format!("empty value for `{key}`")));
        }
        let slot = (sec.to_string(), key.to_string());
        if let Some(prev) = raw.entries.get(&slot) {
            return Err(CliError::config(
                lineno,
                format!("duplicate key `{key}` in [{sec}] (first set on line {})", prev.line),
            ));
        }
        raw.entries.insert(
            slot,
            Entry {
                value: value.to_string(),
                line: lineno,
            },
        );
    }
    Ok(raw)
}

impl RawConfig {
    fn get(&self, sec: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(sec.to_string(), key.to_string()))
    }

    fn line(&self, sec: &str, key: &str) -> usize {
        self.get(sec, key).map_or(0, |e| e.line)
    }

    fn f64_or(&self, sec: &str, key: &str, default: f64) -> Result<f64, CliError> {
        match self.get(sec, key) {
            None => Ok(default),
            Some(e) => parse_number(&e.value, e.line, key),
        }
    }

    fn u64_or(&self, sec: &str, key: &str, default: u64) -> Result<u64, CliError> {
        match self.get(sec, key) {
            None => Ok(default),
            Some(e) => parse_count(&e.value, e.line, key),
        }
    }

    fn str_or<'a>(&'a self, sec: &str, key: &str, default: &'a str) -> &'a str {
        self.get(sec, key).map_or(default, |e| e.value.as_str())
    }

    fn f64_list(&self, sec: &str, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.get(sec, key)
            .map(|e| split_list(&e.value).map(|v| parse_number(v, e.line, key)).collect())
            .transpose()
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim)
}

fn parse_number(s: &str, line: usize, key: &str) -> Result<f64, CliError> {
    let v: f64 = s
        .parse()
        .map_err(|_| CliError::config(line, format!("`{key}`: expected a number, got `{s}`")))?;
    if !v.is_finite() {
        return Err(CliError::config(line, format!("`{key}`: value must be finite")));
    }
    Ok(v)
}

fn parse_count(s: &str, line: usize, key: &str) -> Result<u64, CliError> {
    let s = s.replace('_', "");
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    // Accept integral scientific notation such as 1e5.
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(63) => Ok(v as u64),
        _ => Err(CliError::config(
            line,
            format!("`{key}`: expected a non-negative integer, got `{s}`"),
        )),
    }
}

fn ensure(cond: bool, line: usize, msg: impl Into<String>) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::config(line, msg))
    }
}

impl RunConfig {
    /// Parses and validates a configuration text.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw = parse_raw(text)?;

        // [spectrum]
        let omega0 = match (
            raw.get("spectrum", "omega0_rad_per_ps"),
            raw.get("spectrum", "wavelength_nm"),
        ) {
            (Some(a), Some(b)) => {
                return Err(CliError::config(
                    a.line.max(b.line),
                    "set either `omega0_rad_per_ps` or `wavelength_nm`, not both",
                ))
            }
            (Some(e), None) => parse_number(&e.value, e.line, "omega0_rad_per_ps")?,
            (None, Some(e)) => {
                let nm = parse_number(&e.value, e.line, "wavelength_nm")?;
                ensure(nm > 0.0, e.line, "`wavelength_nm` must be positive")?;
                omega_from_wavelength_nm(nm)
            }
            (None, None) => omega_from_wavelength_nm(WAVELENGTH_NM),
        };
        let inv_lw = raw.f64_or("spectrum", "inv_linewidth_ps", INV_LINEWIDTH_PS)?;
        ensure(
            inv_lw > 0.0,
            raw.line("spectrum", "inv_linewidth_ps"),
            "`inv_linewidth_ps` must be positive",
        )?;
        ensure(
            omega0 > 0.0,
            raw.line("spectrum", "omega0_rad_per_ps"),
            "`omega0_rad_per_ps` must be positive",
        )?;
        let spectrum = SpectrumConfig {
            omega0,
            delta_omega: 1.0 / inv_lw,
        };

        // [preparation]
        let d = raw.f64_or("preparation", "d", 0.5)?;
        ensure(
            (0.0..=0.5).contains(&d),
            raw.line("preparation", "d"),
            "`d` must lie in [0, 0.5]",
        )?;
        let length_mm = raw.f64_or("preparation", "length_mm", CRYSTAL_LENGTH_MM)?;
        ensure(
            length_mm >= 0.0,
            raw.line("preparation", "length_mm"),
            "`length_mm` must be non-negative",
        )?;
        let delta_n = raw.f64_or("preparation", "delta_n", CALCITE_DELTA_N)?;
        ensure(
            delta_n >= 0.0,
            raw.line("preparation", "delta_n"),
            "`delta_n` must be non-negative",
        )?;
        let preparation = PreparationConfig { d, length_mm, delta_n };

        // [grid]
        let scheme_line = raw.line("grid", "scheme");
        let n_bins = raw.u64_or("grid", "n_bins", 65_536)? as usize;
        ensure(n_bins >= 64, raw.line("grid", "n_bins"), "`n_bins` must be at least 64")?;
        let grid = match raw.str_or("grid", "scheme", "quantile") {
            "quantile" => GridScheme::Quantile { n_bins },
            "uniform" => {
                let span_kappa = raw.f64_or("grid", "span_kappa", 100.0)?;
                ensure(
                    span_kappa >= 10.0,
                    raw.line("grid", "span_kappa"),
                    "`span_kappa` must be at least 10",
                )?;
                GridScheme::UniformTruncated { span_kappa, n_bins }
            }
            other => {
                return Err(CliError::config(
                    scheme_line,
                    format!("`scheme`: expected `quantile` or `uniform`, got `{other}`"),
                ))
            }
        };

        // [protocol]
        let dephasing_line = raw.line("protocol", "dephasing");
        let dephasing = match raw.str_or("protocol", "dephasing", "projective") {
            "projective" => DephasingMode::Projective,
            "fiber" => {
                let s = match raw.get("protocol", "fiber_delay_ps") {
                    Some(e) => parse_number(&e.value, e.line, "fiber_delay_ps")?,
                    None => {
                        let l_m = raw.f64_or("protocol", "fiber_length_m", FIBER_LENGTH_M)?;
                        let dn = raw.f64_or("protocol", "fiber_delta_n", FIBER_DELTA_N)?;
                        birefringent_delay_ps(l_m * 1e3, dn)
                    }
                };
                ensure(s >= 0.0, dephasing_line, "fiber delay must be non-negative")?;
                let width = max_bin_width(&grid, spectrum.delta_omega);
                ensure(
                    width * s <= RESOLUTION_GUARD_RAD,
                    dephasing_line,
                    format!(
                        "fiber dephasing with s = {s:.3} ps needs bins no wider than {:.3e} rad/ps; the [grid] \
                         section gives {width:.3e} (use scheme = uniform with more bins)",
                        RESOLUTION_GUARD_RAD / s
                    ),
                )?;
                DephasingMode::Fiber { s }
            }
            other => {
                return Err(CliError::config(
                    dephasing_line,
                    format!("`dephasing`: expected `projective` or `fiber`, got `{other}`"),
                ))
            }
        };
        let tomography = match raw.str_or("protocol", "tomography", "exact") {
            "exact" => Tomography::Exact,
            "counts" => {
                let n = raw.u64_or("protocol", "tomography_n", 100_000)?;
                ensure(
                    n >= 1,
                    raw.line("protocol", "tomography_n"),
                    "`tomography_n` must be at least 1",
                )?;
                let runs = raw.u64_or("protocol", "tomography_runs", 20)? as usize;
                ensure(
                    runs >= 1,
                    raw.line("protocol", "tomography_runs"),
                    "`tomography_runs` must be at least 1",
                )?;
                Tomography::Counts { n, runs }
            }
            other => {
                return Err(CliError::config(
                    raw.line("protocol", "tomography"),
                    format!("`tomography`: expected `exact` or `counts`, got `{other}`"),
                ))
            }
        };
        let rotation = match raw.str_or("protocol", "rotation", "hwp") {
            "hwp" => RotationSampler::HalfWavePlate,
            "haar" => RotationSampler::Haar,
            "identity" => RotationSampler::Identity,
            other => {
                return Err(CliError::config(
                    raw.line("protocol", "rotation"),
                    format!("`rotation`: expected `hwp`, `haar` or `identity`, got `{other}`"),
                ))
            }
        };
        let method = match raw.str_or("protocol", "witness_method", "fit") {
            "fit" => WitnessMethod::FitClosedForm,
            "gridmax" => WitnessMethod::GridMax,
            other => {
                return Err(CliError::config(
                    raw.line("protocol", "witness_method"),
                    format!("`witness_method`: expected `fit` or `gridmax`, got `{other}`"),
                ))
            }
        };
        let protocol = ProtocolConfig {
            dephasing,
            tomography,
            rotation,
            seed: raw.u64_or("protocol", "seed", 1)?,
            method,
        };

        // [sweep]
        let etas = match raw.get("sweep", "etas") {
            None => standard_etas(),
            Some(e) if e.value == "standard" => standard_etas(),
            Some(_) => raw.f64_list("sweep", "etas")?.expect("key present"),
        };
        ensure(
            etas.iter().all(|e| (0.0..PI).contains(e)),
            raw.line("sweep", "etas"),
            "`etas` must lie in [0, π)",
        )?;
        let taus = match raw.str_or("sweep", "taus", "standard") {
            "standard" => TauRule::Standard,
            "dense" => TauRule::Dense,
            other => {
                return Err(CliError::config(
                    raw.line("sweep", "taus"),
                    format!("`taus`: expected `standard` or `dense`, got `{other}`"),
                ))
            }
        };

        // [fig4]
        let fig4_lengths_mm = raw
            .f64_list("fig4", "lengths_mm")?
            // k × step, rounded to the 0.01 mm the lengths are quoted at.
            .unwrap_or_else(|| {
                (0..7)
                    .map(|k| (k as f64 * CRYSTAL_STEP_MM * 100.0).round() / 100.0)
                    .collect()
            });
        ensure(
            !fig4_lengths_mm.is_empty(),
            raw.line("fig4", "lengths_mm"),
            "`lengths_mm` is empty",
        )?;
        ensure(
            fig4_lengths_mm.iter().all(|&l| l >= 0.0),
            raw.line("fig4", "lengths_mm"),
            "`lengths_mm` must be non-negative",
        )?;

        // [estimation]
        let estimation = EstimationConfig {
            input: raw.get("estimation", "input").map(|e| PathBuf::from(&e.value)),
            inv_linewidth_ps: raw.f64_or("estimation", "inv_linewidth_ps", inv_lw)?,
            noise_sigma: raw.f64_or("estimation", "noise_sigma", 0.01)?,
            n_points: raw.u64_or("estimation", "n_points", 50)? as usize,
            span_decays: raw.f64_or("estimation", "span_decays", 4.0)?,
            x0_mm: raw.f64_or("estimation", "x0_mm", 0.0)?,
        };
        ensure(
            estimation.inv_linewidth_ps > 0.0,
            raw.line("estimation", "inv_linewidth_ps"),
            "`inv_linewidth_ps` must be positive",
        )?;
        ensure(
            estimation.noise_sigma >= 0.0,
            raw.line("estimation", "noise_sigma"),
            "`noise_sigma` must be non-negative",
        )?;
        ensure(
            estimation.n_points >= 8,
            raw.line("estimation", "n_points"),
            "`n_points` must be at least 8",
        )?;
        ensure(
            estimation.span_decays > 0.0,
            raw.line("estimation", "span_decays"),
            "`span_decays` must be positive",
        )?;

        // [oracle]
        let oracle_bins = match raw.get("oracle", "n_bins") {
            None => vec![8, 32, 64],
            Some(e) => split_list(&e.value)
                .map(|v| parse_count(v, e.line, "n_bins").map(|n| n as usize))
                .collect::<Result<_, _>>()?,
        };
        ensure(
            !oracle_bins.is_empty()
                && oracle_bins
                    .iter()
                    .all(|&n| (1..=qwitness::oracle::DENSE_MAX_BINS).contains(&n)),
            raw.line("oracle", "n_bins"),
            format!("oracle `n_bins` must lie in 1..={}", qwitness::oracle::DENSE_MAX_BINS),
        )?;

        // [output]
        let out_dir = PathBuf::from(raw.str_or("output", "dir", "out"));
        let mut formats = Formats {
            csv: false,
            json: false,
            svg: false,
        };
        for f in split_list(raw.str_or("output", "formats", "csv, json, svg")) {
            match f {
                "csv" => formats.csv = true,
                "json" => formats.json = true,
                "svg" => formats.svg = true,
                other => {
                    return Err(CliError::config(
                        raw.line("output", "formats"),
                        format!("unknown output format `{other}`"),
                    ))
                }
            }
        }

        Ok(RunConfig {
            spectrum,
            preparation,
            grid,
            protocol,
            sweep: SweepConfig { etas, taus },
            fig4_lengths_mm,
            estimation,
            oracle: OracleConfig { n_bins: oracle_bins },
            out_dir,
            formats,
        })
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("built-in configuration is valid")
    }

    /// Re-checks constraints that command-line overrides can break.
    pub fn revalidate(&self) -> Result<(), CliError> {
        if self.grid.n_bins() < 64 {
            return Err(CliError::config(0, "`--grid-n` must be at least 64"));
        }
        if let DephasingMode::Fiber { s } = self.protocol.dephasing {
            let width = max_bin_width(&self.grid, self.spectrum.delta_omega);
            if width * s > RESOLUTION_GUARD_RAD {
                return Err(CliError::config(
                    0,
                    format!(
                        "fiber dephasing needs bins no wider than {:.3e} rad/ps",
                        RESOLUTION_GUARD_RAD / s
                    ),
                ));
            }
        }
        Ok(())
    }
}

fn standard_etas() -> Vec<f64> {
    (0..8).map(|m| m as f64 * PI / 16.0).collect()
}

/// Widest bin a scheme will produce, without building the grid.
fn max_bin_width(scheme: &GridScheme, delta_omega: f64) -> f64 {
    match *scheme {
        GridScheme::UniformTruncated { span_kappa, n_bins } => 2.0 * span_kappa * delta_omega / n_bins as f64,
        // Outermost quantile bins reach into the far tails.
        GridScheme::Quantile { .. } => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_of(err: CliError) -> usize {
        match err {
            CliError::Config { line, .. } => line,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn builtin_config_is_valid() {
        let c = RunConfig::builtin();
        assert_eq!(c.sweep.etas.len(), 8);
        assert_eq!(c.fig4_lengths_mm.len(), 7);
        assert!((c.spectrum.delta_omega - 1.0 / 9.703).abs() < 1e-15);
        assert!((c.preparation.length_mm - 35.92).abs() < 1e-12);
    }

    #[test]
    fn empty_text_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.grid, GridScheme::Quantile { n_bins: 65_536 });
        assert_eq!(c.protocol.tomography, Tomography::Exact);
        assert_eq!(c.oracle.n_bins, vec![8, 32, 64]);
    }

    #[test]
    fn errors_name_the_line() {
        assert_eq!(line_of(RunConfig::parse("[grid]\nn_bins = 32\n").unwrap_err()), 2);
        assert_eq!(line_of(RunConfig::parse("\n\n[grid]\nfoo = 1\n").unwrap_err()), 4);
        assert_eq!(line_of(RunConfig::parse("[nope]\n").unwrap_err()), 1);
        assert_eq!(line_of(RunConfig::parse("d = 0.5\n").unwrap_err()), 1);
        assert_eq!(line_of(RunConfig::parse("[preparation]\nd = 0.7\n").unwrap_err()), 2);
        assert_eq!(line_of(RunConfig::parse("[preparation]\nd = abc\n").unwrap_err()), 2);
        assert_eq!(
            line_of(RunConfig::parse("[preparation]\nd = 0.1\nd = 0.2\n").unwrap_err()),
            3
        );
        assert_eq!(line_of(RunConfig::parse("[grid]\nscheme\n").unwrap_err()), 2);
    }

    #[test]
    fn fiber_requires_fine_uniform_grid() {
        let coarse = "[grid]\nscheme = quantile\n[protocol]\ndephasing = fiber\n";
        assert_eq!(line_of(RunConfig::parse(coarse).unwrap_err()), 4);
        let fine = "[grid]\nscheme = uniform\nn_bins = 16384\nspan_kappa = 100\n[protocol]\ndephasing = fiber\n";
        let c = RunConfig::parse(fine).unwrap();
        match c.protocol.dephasing {
            DephasingMode::Fiber { s } => assert!((s - 120.083).abs() < 1e-3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comments_lists_and_counts() {
        let c = RunConfig::parse(
            "# header\n[fig4]\nlengths_mm = 0, 8.98 # trailing\n[protocol]\ntomography = counts\ntomography_n = 1e5\n",
        )
        .unwrap();
        assert_eq!(c.fig4_lengths_mm, vec![0.0, 8.98]);
        assert_eq!(c.protocol.tomography, Tomography::Counts { n: 100_000, runs: 20 });
    }
}
