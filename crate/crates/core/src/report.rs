//! Run configuration, deterministic artifact writers, and the run manifest.
//!
//! Every artifact is built as a complete string and written in one pass.
//! Floats in CSV files are printed with 17 significant digits, rows follow
//! the order of the producing computation, and each file opens with a
//! `#`-prefixed comment carrying the configuration hash; JSON files carry
//! the same hash as their first field. Identical configurations therefore
//! produce byte-identical artifacts, with the single exception of the run
//! manifest, whose wall-clock timings vary between runs.

use crate::continuation::{BranchStatus, BranchTrace, ContinuationConfig};
use crate::dual::{ContinuumPoint, FreeBoundarySolution};
use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, Mesh};
use crate::probe::{ProbeConfig, ProbeReport};
use crate::spectrum::SpectrumResult;
use crate::variational::DensityIterate;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Settings for the variational λ sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    /// Explicit λ grid; when absent, `grid_points` values are spread evenly
    /// over (0, 0.9·Λ(Ω,2p)/p].
    pub lambda_grid: Option<Vec<f64>>,
    pub grid_points: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            lambda_grid: None,
            grid_points: 20,
        }
    }
}

/// One parsed configuration file. Every field except `p` has a default;
/// the file is echoed verbatim into the run manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_domain")]
    pub domain: DomainSpec,
    pub p: f64,
    #[serde(default = "default_resolution")]
    pub resolution: u32,
    #[serde(default)]
    pub continuation: ContinuationConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub sweep: SweepSettings,
    /// Target λ for the single-state subcommands (spectrum, dual).
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_eigen_count")]
    pub eigen_count: usize,
    /// Output directory; overridden by `--out`, then by `PLASMA_BRANCH_OUT`.
    #[serde(default)]
    pub outputs: Option<String>,
    #[serde(default)]
    pub verbosity: u8,
}

fn default_domain() -> DomainSpec {
    DomainSpec::disk()
}

fn default_resolution() -> u32 {
    64
}

fn default_lambda() -> f64 {
    1.0
}

fn default_eigen_count() -> usize {
    6
}

impl RunConfig {
    /// A fully-defaulted configuration around the one required field.
    pub fn with_p(p: f64) -> Self {
        serde_json::from_str(&format!("{{\"p\": {p}}}")).expect("defaulted config")
    }

    /// Parse a configuration file, mapping serde errors (missing `p`,
    /// unknown fields, bad types) to usage errors with their position.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Usage(format!("config error: {e}")))
    }

    /// FNV-1a hash of the canonical JSON echo, the stamp every artifact
    /// carries. Presentation knobs (verbosity, output directory) are
    /// zeroed first: artifact bytes depend only on scientific inputs.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.verbosity = 0;
        canon.outputs = None;
        let echo = serde_json::to_string(&canon).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in echo.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// 17-significant-digit float used in every CSV cell.
pub fn csv_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn preamble(kind: &str, hash: &str) -> String {
    format!("# plasma-branch {kind}\n# config_hash = {hash}\n")
}

fn status_label(status: &BranchStatus) -> String {
    match status {
        BranchStatus::ReachedAlphaStop => "reached_alpha_stop".into(),
        BranchStatus::ReachedLambdaCap => "reached_lambda_cap".into(),
        BranchStatus::ReachedMaxSteps => "reached_max_steps".into(),
        BranchStatus::Stalled(why) => format!("stalled: {why}"),
    }
}

/// The branch trace as CSV, one row per accepted point.
pub fn branch_csv(hash: &str, trace: &BranchTrace) -> String {
    let mut out = preamble("branch trace", hash);
    out.push_str("s,lambda,alpha,energy,sigma1,sigma2,mass_residual,psi_sup,t_lambda,is_fold\n");
    for pt in &trace.points {
        let sig1 = pt.sigma1.map(|v| csv_float(v)).unwrap_or_default();
        let sig2 = pt.sigma2.map(|v| csv_float(v)).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            csv_float(pt.s),
            csv_float(pt.lambda),
            csv_float(pt.alpha),
            csv_float(pt.energy),
            sig1,
            sig2,
            csv_float(pt.mass_residual),
            csv_float(pt.psi_sup),
            csv_float(pt.t_lambda),
            u8::from(pt.is_fold),
        );
    }
    out
}

#[derive(Serialize)]
struct FoldSummary {
    s: f64,
    lambda: f64,
    alpha: f64,
    sigma1: f64,
    sigma2: f64,
    kernel_gap: f64,
    indicator: f64,
    sign_consistent: bool,
}

#[derive(Serialize)]
struct BranchSummary<'a> {
    config_hash: &'a str,
    status: String,
    points: usize,
    lambda_one: f64,
    lambda_max: f64,
    lambda_infinity: Option<f64>,
    endpoint_energy: Option<f64>,
    extrapolation_gap: Option<f64>,
    endpoint_targets: Vec<[f64; 3]>,
    min_sigma1: f64,
    alpha_monotone: bool,
    fold_count: usize,
    folds: Vec<FoldSummary>,
}

/// Headline numbers of a traced branch as a JSON document.
pub fn summary_json(hash: &str, trace: &BranchTrace) -> String {
    let summary = BranchSummary {
        config_hash: hash,
        status: status_label(&trace.status),
        points: trace.points.len(),
        lambda_one: trace.lambda_one,
        lambda_max: trace.max_lambda(),
        lambda_infinity: trace.endpoint.as_ref().map(|e| e.lambda_infinity),
        endpoint_energy: trace.endpoint.as_ref().map(|e| e.endpoint_energy),
        extrapolation_gap: trace.endpoint.as_ref().map(|e| e.extrapolation_gap),
        endpoint_targets: trace
            .endpoint
            .as_ref()
            .map(|e| e.targets.iter().map(|&(a, l, en)| [a, l, en]).collect())
            .unwrap_or_default(),
        min_sigma1: trace.min_sigma1,
        alpha_monotone: trace.alpha_monotone,
        fold_count: trace.folds.len(),
        folds: trace
            .folds
            .iter()
            .map(|f| FoldSummary {
                s: f.s,
                lambda: f.lambda,
                alpha: f.alpha,
                sigma1: f.sigma1,
                sigma2: f.sigma2,
                kernel_gap: f.kernel_gap,
                indicator: f.indicator,
                sign_consistent: f.sign_consistent,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    text
}

#[derive(Serialize)]
struct SpectrumDoc<'a> {
    config_hash: &'a str,
    lambda: f64,
    alpha: f64,
    sigmas: &'a [f64],
    nus: &'a [f64],
    means: &'a [f64],
    psi_projections: &'a [f64],
    identity_residuals: &'a [f64],
    identity_rel_residuals: &'a [f64],
    eigen_residuals: &'a [f64],
    sweeps: usize,
}

/// The eigenpair report of one solved state as a JSON document.
pub fn spectrum_json(hash: &str, lambda: f64, alpha: f64, spec: &SpectrumResult) -> String {
    let doc = SpectrumDoc {
        config_hash: hash,
        lambda,
        alpha,
        sigmas: &spec.sigmas,
        nus: &spec.nus,
        means: &spec.means,
        psi_projections: &spec.psi_projections,
        identity_residuals: &spec.identity_residuals,
        identity_rel_residuals: &spec.identity_rel_residuals,
        eigen_residuals: &spec.eigen_residuals,
        sweeps: spec.sweeps,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("spectrum serializes");
    text.push('\n');
    text
}

/// The variational λ sweep as CSV, one row per grid value.
pub fn variational_csv(hash: &str, rows: &[(f64, DensityIterate)]) -> String {
    let mut out = preamble("variational sweep", hash);
    out.push_str("lambda,j_value,alpha,defect,iterations,newton_polished\n");
    for (lambda, it) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            csv_float(*lambda),
            csv_float(it.j_value),
            csv_float(it.alpha),
            csv_float(it.defect),
            it.iterations,
            u8::from(it.newton_polished),
        );
    }
    out
}

/// Free-boundary data along a branch as CSV.
pub fn dual_csv(hash: &str, rows: &[(f64, FreeBoundarySolution)]) -> String {
    let mut out = preamble("dual free-boundary map", hash);
    out.push_str("lambda,i_param,gamma,plasma_measure,interface_size,flux_defect\n");
    for (lambda, fb) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            csv_float(*lambda),
            csv_float(fb.i_param),
            csv_float(fb.gamma),
            csv_float(fb.plasma_region_measure),
            csv_float(fb.interface_size),
            csv_float(fb.flux_defect),
        );
    }
    out
}

/// The Gelfand diagram of a branch as CSV.
pub fn continuum_csv(hash: &str, points: &[ContinuumPoint]) -> String {
    let mut out = preamble("Rabinowitz continuum", hash);
    out.push_str("lambda,alpha,mu,sup_u,residual_limit_eq\n");
    for cp in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_float(cp.lambda),
            csv_float(cp.alpha),
            csv_float(cp.mu),
            csv_float(cp.sup_u),
            csv_float(cp.residual_limit_eq),
        );
    }
    out
}

#[derive(Serialize)]
struct ProbeDoc<'a> {
    config_hash: &'a str,
    amplitude: f64,
    modes: &'a [u32],
    reports: &'a [ProbeReport],
}

/// All seed verdicts of a probe run as a JSON document.
pub fn probe_json(hash: &str, cfg: &ProbeConfig, reports: &[ProbeReport]) -> String {
    let doc = ProbeDoc {
        config_hash: hash,
        amplitude: cfg.amplitude,
        modes: &cfg.modes,
        reports,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("probe serializes");
    text.push('\n');
    text
}

#[derive(Serialize)]
struct MeshStats<'a> {
    config_hash: &'a str,
    nodes: usize,
    interior_nodes: usize,
    cells: usize,
    h_max: f64,
    bandwidth: usize,
    measure: f64,
}

/// Size and quality numbers of a built mesh as a JSON document.
pub fn mesh_stats_json(hash: &str, mesh: &Mesh) -> String {
    let doc = MeshStats {
        config_hash: hash,
        nodes: mesh.node_count(),
        interior_nodes: mesh.interior_count(),
        cells: mesh.cell_count(),
        h_max: mesh.h_max,
        bandwidth: mesh.bandwidth,
        measure: mesh.measure(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("mesh stats serialize");
    text.push('\n');
    text
}

/// Plain-text plotting script referencing whichever CSV files the run
/// produced. The script needs matplotlib at run time; the toolkit itself
/// has no plotting dependency.
pub fn plot_script(hash: &str, files: &[String]) -> String {
    let has = |name: &str| files.iter().any(|f| f == name);
    let mut s = String::new();
    let _ = writeln!(s, "#!/usr/bin/env python3");
    let _ = writeln!(s, "# plasma-branch plot script");
    let _ = writeln!(s, "# config_hash = {hash}");
    s.push_str(
        "import csv\nimport matplotlib.pyplot as plt\n\n\
         def load(name):\n\
         \x20   with open(name) as fh:\n\
         \x20       rows = [r for r in csv.reader(fh) if r and not r[0].startswith('#')]\n\
         \x20   head, data = rows[0], rows[1:]\n\
         \x20   cols = {k: [] for k in head}\n\
         \x20   for r in data:\n\
         \x20       for k, v in zip(head, r):\n\
         \x20           cols[k].append(float(v) if v else float('nan'))\n\
         \x20   return cols\n\n",
    );
    if has("branch.csv") {
        s.push_str(
            "b = load('branch.csv')\n\
             fig, ax = plt.subplots(1, 3, figsize=(13, 4))\n\
             ax[0].plot(b['lambda'], b['alpha'], '.-')\n\
             ax[0].set(xlabel='lambda', ylabel='alpha', title='branch')\n\
             ax[1].plot(b['lambda'], b['energy'], '.-')\n\
             ax[1].set(xlabel='lambda', ylabel='energy')\n\
             ax[2].plot(b['lambda'], b['sigma1'], '.-')\n\
             ax[2].axhline(0.0, color='k', lw=0.5)\n\
             ax[2].set(xlabel='lambda', ylabel='sigma1')\n\
             fig.tight_layout()\n\
             fig.savefig('branch.png', dpi=150)\n\n",
        );
    }
    if has("continuum.csv") {
        s.push_str(
            "c = load('continuum.csv')\n\
             fig, ax = plt.subplots(figsize=(5, 4))\n\
             ax.plot(c['mu'], c['sup_u'], '.-')\n\
             ax.set(xlabel='mu', ylabel='sup u', title='Rabinowitz continuum')\n\
             fig.tight_layout()\n\
             fig.savefig('continuum.png', dpi=150)\n\n",
        );
    }
    if has("variational.csv") {
        s.push_str(
            "v = load('variational.csv')\n\
             fig, ax = plt.subplots(1, 2, figsize=(9, 4))\n\
             ax[0].plot(v['lambda'], v['j_value'], '.-')\n\
             ax[0].set(xlabel='lambda', ylabel='J', title='free energy')\n\
             ax[1].plot(v['lambda'], v['alpha'], '.-')\n\
             ax[1].set(xlabel='lambda', ylabel='alpha')\n\
             fig.tight_layout()\n\
             fig.savefig('variational.png', dpi=150)\n\n",
        );
    }
    if has("dual.csv") {
        s.push_str(
            "d = load('dual.csv')\n\
             fig, ax = plt.subplots(figsize=(5, 4))\n\
             ax.plot(d['i_param'], d['gamma'], '.-')\n\
             ax.set(xlabel='I', ylabel='gamma', title='dual threshold')\n\
             fig.tight_layout()\n\
             fig.savefig('dual.png', dpi=150)\n\n",
        );
    }
    s.push_str("print('plots written')\n");
    s
}

#[derive(Serialize)]
struct StageTime {
    stage: String,
    ms: f64,
}

#[derive(Serialize)]
struct ManifestDoc<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    config_hash: &'a str,
    config: &'a RunConfig,
    files: &'a [String],
    wall_times_ms: &'a [StageTime],
}

/// One run's output directory: collects files and stage timings, then
/// closes with the plot script and the run manifest.
pub struct OutputSession {
    out_dir: PathBuf,
    subcommand: String,
    pub config: RunConfig,
    pub hash: String,
    files: Vec<String>,
    times: Vec<StageTime>,
    started: Instant,
}

impl OutputSession {
    pub fn new(config: RunConfig, subcommand: &str, out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| {
            Error::Usage(format!("cannot create output directory {}: {e}", out_dir.display()))
        })?;
        let hash = config.hash();
        Ok(OutputSession {
            out_dir: out_dir.to_path_buf(),
            subcommand: subcommand.into(),
            config,
            hash,
            files: Vec::new(),
            times: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn hash(&self) -> String {
        self.hash.clone()
    }

    /// Record the wall time since the last mark under `stage`.
    pub fn mark(&mut self, stage: &str) {
        let ms = self.started.elapsed().as_secs_f64() * 1e3;
        self.started = Instant::now();
        self.times.push(StageTime {
            stage: stage.into(),
            ms,
        });
    }

    pub fn write(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, content)
            .map_err(|e| Error::Internal(format!("writing {}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Emit the plot script (when any CSV was written) and the manifest.
    pub fn finish(mut self) -> Result<()> {
        if self.files.iter().any(|f| f.ends_with(".csv")) {
            let script = plot_script(&self.hash, &self.files);
            self.write("plot.py", &script)?;
        }
        self.mark("finalize");
        let doc = ManifestDoc {
            tool: "plasma-branch",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: &self.subcommand,
            config_hash: &self.hash,
            config: &self.config,
            files: &self.files,
            wall_times_ms: &self.times,
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        text.push('\n');
        let path = self.out_dir.join("run_manifest.json");
        std::fs::write(&path, text)
            .map_err(|e| Error::Internal(format!("writing {}: {e}", path.display())))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::trace_branch;
    use crate::geometry::build_mesh;
    use crate::newton::PlasmaConfig;
    use crate::operators::Operators;

    #[test]
    fn missing_p_is_a_usage_error_naming_the_field() {
        let err = RunConfig::parse("{\"resolution\": 16}").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains('p') && msg.contains("missing"), "got: {msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_fields_are_rejected_with_their_name() {
        let err = RunConfig::parse("{\"p\": 2.0, \"resolutoin\": 16}").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("resolutoin"), "got: {msg}");
    }

    #[test]
    fn defaults_fill_every_omitted_field() {
        let cfg = RunConfig::parse("{\"p\": 2.0}").unwrap();
        assert_eq!(cfg.resolution, 64);
        assert_eq!(cfg.domain, DomainSpec::disk());
        assert_eq!(cfg.continuation.alpha_stop, 1e-3);
        assert_eq!(cfg.probe.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(cfg.eigen_count, 6);
        assert!(cfg.outputs.is_none());
    }

    #[test]
    fn config_hash_tracks_content_not_formatting() {
        let a = RunConfig::parse("{\"p\": 2.0}").unwrap();
        let b = RunConfig::parse("{ \"p\" : 2.0 }").unwrap();
        let c = RunConfig::parse("{\"p\": 2.0, \"resolution\": 32}").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn artifacts_are_deterministic_and_stamped() {
        let mesh = build_mesh(&DomainSpec::disk(), 12).unwrap();
        let ops = Operators::assemble(&mesh).unwrap();
        let pcfg = PlasmaConfig::new(2.0);
        let ccfg = ContinuationConfig {
            lambda_cap: Some(1.0),
            ..ContinuationConfig::default()
        };
        let cfg = RunConfig::with_p(2.0);
        let hash = cfg.hash();
        let make = || {
            let trace = trace_branch(&mesh, &ops, &pcfg, &ccfg).unwrap();
            (branch_csv(&hash, &trace), summary_json(&hash, &trace))
        };
        let (csv1, json1) = make();
        let (csv2, json2) = make();
        assert_eq!(csv1, csv2);
        assert_eq!(json1, json2);
        assert!(csv1.starts_with("# plasma-branch"));
        assert!(csv1.contains(&format!("# config_hash = {hash}")));
        assert!(json1.contains(&hash));
    }

    #[test]
    fn csv_floats_carry_17_significant_digits() {
        let s = csv_float(std::f64::consts::PI);
        assert_eq!(s, "3.1415926535897931e0");
        let parsed: f64 = s.parse().unwrap();
        assert_eq!(parsed, std::f64::consts::PI);
    }
}
