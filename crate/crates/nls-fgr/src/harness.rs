//! Experiment configuration, orchestration and artifact bookkeeping.
//!
//! Every command reads one TOML file, writes its outputs below
//! `<output_dir>/<command>/` and finishes with a `manifest.json` listing each
//! produced file with its SHA-256. Keys that carry a physical quantity end in
//! a unit suffix: `_len` (length), `_energy` (inverse length squared),
//! `_time` (length squared), `_rate` (inverse time) or `_rad`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evolution::{
    fit_decay, initial_guess, linear_fit, measure_equipartition, residual_sources, synthesize_initial_data, track_run,
    Corrections, DecayFit, Decomposer, Equipartition, EvolutionConfig, ModeTable, NoCorrections, Propagator,
    RunDiagnostics, SourceIntegrals,
};
use crate::fgr::{
    aligned_linear_modes, certify_positivity, gamma_matrices, gamma_near_degenerate, h22_identity_check, random_z, FgrData,
    LeadingInputs, PositivityCertificate, VanishingIdentity,
};
use crate::grid::Grid;
use crate::ground_state::{branch_cache_dir, branch_point, cached_branch, predicted_delta, BranchPoint, GroundStateBranch};
use crate::linear_spectrum::{check_assumptions, discrete_spectrum, AssumptionReport, LinearSpectrum, SpectrumEntry};
use crate::linearization::{
    build_linearization, check_threshold_resonance, neutral_modes, riesz_projections, LinearizedOperator, NeutralModeSet,
    RieszProjector, ThresholdReport,
};
use crate::normal_form::{build_normal_form, NormalForm, NormalFormConfig, Pi22Report};
use crate::pair::Pair;
use crate::potential::{Potential, PotentialSpec};
use crate::reduced_ode::{envelopes, integrate_reduced, predict_equipartition, scalar_closed_form, Envelopes, MassRate, ReducedModel, ReducedState, Trajectory};
use crate::resolvent::{plemelj_check, PlemeljCheck, ResolventConfig};

fn default_workers() -> usize {
    1
}
fn default_levels() -> usize {
    2
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub grid: GridSection,
    pub potential: PotentialSection,
    pub nonlinearity: NonlinearitySection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    pub branch: BranchSection,
    #[serde(default)]
    pub fgr: FgrSection,
    #[serde(default)]
    pub evolution: EvolutionSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub reduced: ReducedSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub points: usize,
    pub box_len: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    pub kind: String,
    pub nu: Option<f64>,
    pub width_len: Option<f64>,
    pub depth_energy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySection {
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Recompute on a grid with twice the points and report the level shifts.
    #[serde(default = "yes")]
    pub doubling_check: bool,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            levels: default_levels(),
            doubling_check: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BranchSection {
    pub lambda_min_energy: f64,
    pub lambda_max_energy: f64,
    pub points: usize,
    /// Offsets λ + e₀ at which the bifurcation law is sampled.
    #[serde(default)]
    pub delta_law_offsets_energy: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Γ, Λ, Γ₀ as defined from the displayed quadratic source.
    #[default]
    Literal,
    /// The same tensors scaled by ¼.
    Dynamic,
}

impl Normalization {
    pub fn apply(self, f: &FgrData) -> FgrData {
        match self {
            Normalization::Literal => f.clone(),
            Normalization::Dynamic => f.dynamic(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FgrSection {
    pub lambdas_energy: Vec<f64>,
    pub positivity_samples: usize,
    /// Random directions z at which the identities are evaluated.
    pub identity_samples: usize,
    /// Largest frequency split treated by the near-degenerate formulas.
    pub near_degenerate_split_energy: f64,
    pub defect_tol: f64,
    /// ε schedule as fractions of the resonance energy, largest first.
    pub eps_schedule: [f64; 3],
    pub normal_form: bool,
    /// Energies of the free-operator quadrature oracle.
    pub plemelj_energies: Vec<f64>,
    pub plemelj_width_len: f64,
}

impl Default for FgrSection {
    fn default() -> Self {
        let r = ResolventConfig::default();
        FgrSection {
            lambdas_energy: Vec::new(),
            positivity_samples: 100,
            identity_samples: 4,
            near_degenerate_split_energy: 1e-2,
            defect_tol: r.defect_tol,
            eps_schedule: r.schedule,
            normal_form: true,
            plemelj_energies: vec![0.5, 1.5, 3.0],
            plemelj_width_len: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionSection {
    pub dt_time: f64,
    pub t_end_time: f64,
    pub sponge_strength_rate: f64,
    pub sponge_fraction: f64,
    pub cadence_steps: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// ε in |α₀|+|β₀| ≤ ε‖φ^{λ₀}‖.
    pub smallness: f64,
}

impl Default for EvolutionSection {
    fn default() -> Self {
        let e = EvolutionConfig::default();
        EvolutionSection {
            dt_time: e.dt,
            t_end_time: e.t_end,
            sponge_strength_rate: e.sponge_strength,
            sponge_fraction: e.sponge_fraction,
            cadence_steps: e.cadence,
            newton_tol: e.newton_tol,
            newton_max_iter: e.newton_max_iter,
            smallness: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub lambda0_energy: Option<f64>,
    /// Initial |z₀| in units of δ(λ₀).
    pub amplitudes_over_delta: Vec<f64>,
    pub phase_rad: f64,
    pub normal_form: bool,
    /// Choose t_end from the predicted decay so that |z(t_end)|² ≈ final_fraction·|z₀|².
    pub auto_t_end: bool,
    pub final_fraction: f64,
    pub max_t_end_time: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            lambda0_energy: None,
            amplitudes_over_delta: vec![0.05, 0.1, 0.2],
            phase_rad: 0.0,
            normal_form: true,
            auto_t_end: true,
            final_fraction: 0.035,
            max_t_end_time: 40000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum MassRateChoice {
    #[default]
    Gamma0,
    Gamma,
    Pi22,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ReducedSection {
    pub dt_time: f64,
    pub record_every: usize,
    pub mass_rate: MassRateChoice,
    pub normalization: Normalization,
    pub interpolate: bool,
    /// Used by `reduce`; the sweep integrates to the PDE end time.
    pub t_end_time: f64,
    pub envelope_samples: usize,
}

impl Default for ReducedSection {
    fn default() -> Self {
        ReducedSection {
            dt_time: 0.02,
            record_every: 50,
            mass_rate: MassRateChoice::Gamma0,
            normalization: Normalization::Literal,
            interpolate: false,
            t_end_time: 2000.0,
            envelope_samples: 200,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Usage(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// SHA-256 of the canonical JSON form; comments and key order do not matter.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(Error::Usage(m));
        if !(1..=3).contains(&self.grid.dim) || self.grid.points < 8 || !(self.grid.box_len > 0.0) {
            return usage("grid needs dim in 1..=3, at least 8 points and a positive box_len".into());
        }
        if !(self.nonlinearity.sigma > 0.0) {
            return usage("nonlinearity.sigma must be positive".into());
        }
        self.potential_spec()?;
        let b = &self.branch;
        if !(b.lambda_min_energy < b.lambda_max_energy) || b.points < 2 {
            return usage("branch needs lambda_min_energy < lambda_max_energy and at least two points".into());
        }
        if let Some(l0) = self.sweep.lambda0_energy {
            if !(b.lambda_min_energy..=b.lambda_max_energy).contains(&l0) {
                return usage(format!("sweep.lambda0_energy = {l0} lies outside the branch range"));
            }
        }
        if self.sweep.amplitudes_over_delta.iter().any(|a| !(*a > 0.0)) {
            return usage("sweep amplitudes must be positive".into());
        }
        if self.workers == 0 {
            return usage("workers must be at least one".into());
        }
        Ok(())
    }

    pub fn potential_spec(&self) -> Result<PotentialSpec> {
        let p = &self.potential;
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Error::Usage(format!("potential.{key} is required for kind {}", p.kind)));
        match p.kind.as_str() {
            "poschl_teller" => Ok(PotentialSpec::PoschlTeller {
                nu: need(p.nu, "nu")?,
                width: p.width_len.unwrap_or(1.0),
            }),
            "gaussian_well" => Ok(PotentialSpec::GaussianWell {
                depth: need(p.depth_energy, "depth_energy")?,
                width: need(p.width_len, "width_len")?,
            }),
            "zero" => Ok(PotentialSpec::Zero),
            other => Err(Error::Usage(format!("unknown potential kind '{other}'"))),
        }
    }

    pub fn branch_lambdas(&self) -> Vec<f64> {
        let b = &self.branch;
        (0..b.points)
            .map(|i| b.lambda_min_energy + (b.lambda_max_energy - b.lambda_min_energy) * i as f64 / (b.points - 1) as f64)
            .collect()
    }

    pub fn evolution_config(&self) -> EvolutionConfig {
        let e = &self.evolution;
        EvolutionConfig {
            dt: e.dt_time,
            t_end: e.t_end_time,
            sponge_strength: e.sponge_strength_rate,
            sponge_fraction: e.sponge_fraction,
            cadence: e.cadence_steps,
            newton_tol: e.newton_tol,
            newton_max_iter: e.newton_max_iter,
        }
    }

    pub fn resolvent_config(&self) -> ResolventConfig {
        ResolventConfig {
            schedule: self.fgr.eps_schedule,
            defect_tol: self.fgr.defect_tol,
            ..ResolventConfig::default()
        }
    }

    pub fn lambda0(&self) -> f64 {
        self.sweep
            .lambda0_energy
            .unwrap_or(0.5 * (self.branch.lambda_min_energy + self.branch.lambda_max_energy))
    }

    fn fgr_lambdas(&self) -> Result<Vec<f64>> {
        if self.fgr.lambdas_energy.is_empty() {
            return Err(Error::Usage("fgr.lambdas_energy must list at least one branch point".into()));
        }
        Ok(self.fgr.lambdas_energy.clone())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub created_unix: u64,
    pub files: Vec<FileEntry>,
    /// Inputs read from outside the command directory, such as the branch cache.
    pub references: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl RunArtifacts {
    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

/// Collects the files of one command and writes its manifest.
pub struct ArtifactWriter {
    dir: PathBuf,
    command: String,
    files: Vec<String>,
    references: Vec<String>,
}

impl ArtifactWriter {
    pub fn new(cfg: &ExperimentConfig, command: &str) -> Result<ArtifactWriter> {
        let dir = cfg.output_dir.join(command);
        fs::create_dir_all(&dir)?;
        Ok(ArtifactWriter {
            dir,
            command: command.to_string(),
            files: Vec::new(),
            references: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn register(&mut self, rel: impl Into<String>) {
        self.files.push(rel.into());
    }

    pub fn reference(&mut self, r: impl Into<String>) {
        self.references.push(r.into());
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        write_json(&self.dir.join(rel), value)?;
        self.register(rel);
        Ok(())
    }

    pub fn csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        write_csv(&self.dir.join(rel), header, rows)?;
        self.register(rel);
        Ok(())
    }

    pub fn finish(mut self, cfg: &ExperimentConfig) -> Result<RunArtifacts> {
        self.files.sort();
        self.files.dedup();
        let mut files = Vec::new();
        for rel in &self.files {
            let bytes = fs::read(self.dir.join(rel))?;
            files.push(FileEntry {
                path: rel.clone(),
                sha256: hex(&Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            });
        }
        let manifest = Manifest {
            command: self.command.clone(),
            config_hash: cfg.hash(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            files,
            references: self.references.clone(),
        };
        write_json(&self.dir.join("manifest.json"), &manifest)?;
        Ok(RunArtifacts { dir: self.dir, manifest })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("missing artifact {}: {e} (run the producing command first)", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Grid, potential and linear spectrum shared by every command.
pub struct Setup {
    pub grid: Arc<Grid>,
    pub pot: Potential,
    pub spec: LinearSpectrum,
    pub assumptions: AssumptionReport,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Setup> {
        let grid = Grid::new(cfg.grid.dim, cfg.grid.points, cfg.grid.box_len)?;
        let pot = Potential::new(cfg.potential_spec()?, &grid)?;
        let spec = discrete_spectrum(&pot, cfg.spectrum.levels.max(2))?;
        let assumptions = check_assumptions(&spec);
        Ok(Setup {
            grid,
            pot,
            spec,
            assumptions,
        })
    }

    /// Fails with the assumption exit code when the trapped levels are unsuitable.
    pub fn require_assumptions(&self) -> Result<()> {
        if self.assumptions.passed() {
            Ok(())
        } else {
            Err(Error::Assumption(self.assumptions.messages.join("; ")))
        }
    }
}

/// Everything attached to one branch point.
pub struct PointAnalysis {
    pub point: BranchPoint,
    pub op: LinearizedOperator,
    pub modes: NeutralModeSet,
    pub proj: RieszProjector,
}

impl PointAnalysis {
    pub fn new(setup: &Setup, lambda: f64, sigma: f64) -> Result<PointAnalysis> {
        let point = branch_point(&setup.pot, &setup.spec, lambda, sigma)?;
        let op = build_linearization(&setup.pot, &point)?;
        let modes = neutral_modes(&op, &setup.spec)?;
        let proj = riesz_projections(&op, &modes)?;
        Ok(PointAnalysis { point, op, modes, proj })
    }

    pub fn delta(&self) -> f64 {
        self.point.profile.delta
    }

    pub fn fgr(&self, setup: &Setup, cfg: &ExperimentConfig) -> Result<(FgrData, Option<String>)> {
        let rc = cfg.resolvent_config();
        if self.modes.count() > 1 && !self.modes.is_degenerate() {
            gamma_near_degenerate(
                &self.op,
                &self.modes,
                &self.proj,
                &setup.spec,
                self.delta(),
                cfg.fgr.near_degenerate_split_energy,
                &rc,
            )
        } else {
            Ok((gamma_matrices(&self.op, &self.modes, &self.proj, &setup.spec, self.delta(), &rc)?, None))
        }
    }

    pub fn normal_form(&self, cfg: &ExperimentConfig) -> Result<NormalForm> {
        let nc = NormalFormConfig {
            resolvent: cfg.resolvent_config(),
            ..NormalFormConfig::default()
        };
        build_normal_form(&self.op, &self.modes, &self.proj, &nc)
    }
}

fn f(x: f64) -> String {
    x.to_string()
}

fn branch_with_cache(cfg: &ExperimentConfig, setup: &Setup) -> Result<(GroundStateBranch, bool, PathBuf)> {
    let dir = branch_cache_dir(&cfg.output_dir.join("cache")).join(&setup.pot.hash()[..16]);
    let (b, hit) = cached_branch(&dir, &setup.pot, &setup.spec, cfg.nonlinearity.sigma, &cfg.branch_lambdas())?;
    Ok((b, hit, dir))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub entries: Vec<SpectrumEntry>,
    pub analytic: Option<Vec<f64>>,
    pub max_analytic_error: Option<f64>,
    /// max |e_j(n) − e_j(2n)| over the requested levels.
    pub doubling_shift: Option<f64>,
    pub orthonormality_residual: f64,
    pub assumptions: AssumptionReport,
    pub threshold: ThresholdReport,
    pub warnings: Vec<String>,
}

pub fn cmd_spectrum(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let setup = Setup::new(cfg)?;
    let mut w = ArtifactWriter::new(cfg, "spectrum")?;
    for j in 0..setup.spec.states.len() {
        setup.spec.state_field(j).save(&w.dir().join(format!("state_{j}")))?;
        w.register(format!("state_{j}.bin"));
        w.register(format!("state_{j}.json"));
    }
    let analytic = if cfg.grid.dim == 1 { cfg.potential_spec()?.analytic_levels_1d() } else { None };
    let max_analytic_error = analytic.as_ref().map(|a| {
        setup
            .spec
            .energies
            .iter()
            .zip(a)
            .map(|(e, x)| (e - x).abs())
            .fold(0.0, f64::max)
    });
    let doubling_shift = if cfg.spectrum.doubling_check {
        let g2 = Grid::new(cfg.grid.dim, 2 * cfg.grid.points, cfg.grid.box_len)?;
        let p2 = Potential::new(cfg.potential_spec()?, &g2)?;
        let s2 = discrete_spectrum(&p2, setup.spec.energies.len())?;
        Some(
            setup
                .spec
                .energies
                .iter()
                .zip(&s2.energies)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    let report = SpectrumReport {
        entries: setup.spec.export(),
        analytic,
        max_analytic_error,
        doubling_shift,
        orthonormality_residual: setup.spec.orthonormality_residual(),
        assumptions: setup.assumptions.clone(),
        threshold: check_threshold_resonance(&setup.pot),
        warnings: setup.spec.warnings.clone(),
    };
    w.json("spectrum.json", &report)?;
    w.finish(cfg)?;
    setup.require_assumptions()?;
    Ok(RunArtifacts {
        dir: cfg.output_dir.join("spectrum"),
        manifest: read_json(&cfg.output_dir.join("spectrum/manifest.json"))?,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchReport {
    pub cache_hit: bool,
    pub cache_dir: String,
    pub points: usize,
    pub lambda_range: (f64, f64),
    /// Slope of ln δ against ln|e₀ + λ| over the sampled offsets.
    pub delta_law_slope: Option<f64>,
    pub delta_law_expected: f64,
}

pub fn cmd_branch(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let setup = Setup::new(cfg)?;
    setup.require_assumptions()?;
    let sigma = cfg.nonlinearity.sigma;
    let (branch, hit, cache) = branch_with_cache(cfg, &setup)?;
    let mut w = ArtifactWriter::new(cfg, "branch")?;
    w.reference(cache.display().to_string());
    let rows: Vec<Vec<String>> = branch
        .points
        .iter()
        .map(|p| {
            vec![
                f(p.lambda()),
                f(p.mass),
                f(p.dmass),
                f(p.profile.delta),
                f(predicted_delta(&setup.spec, p.lambda(), sigma)),
                f(p.profile.residual),
            ]
        })
        .collect();
    w.csv("branch.csv", &["lambda", "mass", "dmass", "delta", "delta_predicted", "residual"], &rows)?;
    let mut law = Vec::new();
    for &off in &cfg.branch.delta_law_offsets_energy {
        let lambda = off - setup.spec.e0();
        let p = branch_point(&setup.pot, &setup.spec, lambda, sigma)?;
        law.push((off, lambda, p.profile.delta, predicted_delta(&setup.spec, lambda, sigma)));
    }
    let slope = (law.len() >= 2).then(|| {
        let x: Vec<f64> = law.iter().map(|r| r.0.ln()).collect();
        let y: Vec<f64> = law.iter().map(|r| r.2.ln()).collect();
        linear_fit(&x, &y).0
    });
    let law_rows: Vec<Vec<String>> = law.iter().map(|r| vec![f(r.0), f(r.1), f(r.2), f(r.3)]).collect();
    w.csv("delta_law.csv", &["offset", "lambda", "delta", "delta_predicted"], &law_rows)?;
    w.json(
        "branch.json",
        &BranchReport {
            cache_hit: hit,
            cache_dir: cache.display().to_string(),
            points: branch.points.len(),
            lambda_range: branch.range(),
            delta_law_slope: slope,
            delta_law_expected: 0.5 / sigma,
        },
    )?;
    w.finish(cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeRow {
    pub lambda: f64,
    pub delta: f64,
    pub energies: Vec<f64>,
    /// max_k |E_k − (e_k − e₀)|
    pub frequency_shift: f64,
    pub zero_mode_residual: f64,
    pub generalized_residual: f64,
    pub biorthogonality_residual: f64,
    pub idempotency_residual: f64,
    pub eigen_residuals: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModesReport {
    pub rows: Vec<ModeRow>,
    /// Slope of ln|E − (e₁ − e₀)| against ln δ.
    pub frequency_slope: Option<f64>,
    pub frequency_slope_expected: f64,
}

fn random_pair(rng: &mut ChaCha8Rng, grid: &Grid) -> Pair {
    let r2 = grid.radius_squared();
    let mut draw = || -> Vec<C64> {
        let z = random_z(rng, r2.len());
        z.iter().zip(&r2).map(|(c, r)| c * (-r / 50.0).exp()).collect()
    };
    Pair { u: draw(), v: draw() }
}

pub fn cmd_modes(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let setup = Setup::new(cfg)?;
    setup.require_assumptions()?;
    let sigma = cfg.nonlinearity.sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for lambda in cfg.fgr_lambdas()? {
        let a = PointAnalysis::new(&setup, lambda, sigma)?;
        let lin: Vec<f64> = setup.spec.energies[1..=a.modes.count()].iter().map(|e| e - setup.spec.e0()).collect();
        let f = random_pair(&mut rng, &setup.grid);
        rows.push(ModeRow {
            lambda,
            delta: a.delta(),
            frequency_shift: a.modes.energies.iter().zip(&lin).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
            energies: a.modes.energies.clone(),
            zero_mode_residual: a.op.zero_mode_residual,
            generalized_residual: a.op.generalized_residual,
            biorthogonality_residual: a.modes.biorthogonality_residual(&setup.grid),
            idempotency_residual: a.proj.idempotency_residual(&f),
            eigen_residuals: a.modes.residuals.clone(),
        });
    }
    let slope = (rows.len() >= 2).then(|| {
        let x: Vec<f64> = rows.iter().map(|r| r.delta.ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.frequency_shift.ln()).collect();
        linear_fit(&x, &y).0
    });
    let mut w = ArtifactWriter::new(cfg, "modes")?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                f(r.lambda),
                f(r.delta),
                f(r.energies[0]),
                f(r.frequency_shift),
                f(r.zero_mode_residual),
                f(r.generalized_residual),
                f(r.biorthogonality_residual),
                f(r.idempotency_residual),
            ]
        })
        .collect();
    w.csv(
        "modes.csv",
        &[
            "lambda",
            "delta",
            "energy_1",
            "frequency_shift",
            "zero_mode_residual",
            "generalized_residual",
            "biorthogonality_residual",
            "idempotency_residual",
        ],
        &csv_rows,
    )?;
    w.json(
        "modes.json",
        &ModesReport {
            rows,
            frequency_slope: slope,
            frequency_slope_expected: 2.0 * sigma,
        },
    )?;
    w.finish(cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentitySample {
    pub z: Vec<[f64; 2]>,
    pub gamma_form: f64,
    pub gamma0_form: f64,
    /// (z*Γz − z*Γ₀z) / (δ^{4σ−1}|z|⁴)
    pub approx_scaled: f64,
    pub h22: VanishingIdentity,
    pub pi22: Option<Pi22Report>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FgrPointReport {
    pub lambda: f64,
    pub delta: f64,
    pub energies: Vec<f64>,
    pub near_degenerate: bool,
    pub certificate: PositivityCertificate,
    pub symmetry_residuals: (f64, f64),
    pub decomposition_residual: f64,
    pub max_defect: f64,
    pub samples: Vec<IdentitySample>,
    pub normal_form_relation_residual: Option<f64>,
    pub normal_form_driven_residual: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FgrReport {
    pub points: Vec<FgrPointReport>,
    pub plemelj: Vec<PlemeljCheck>,
    /// max/min over branch points of the mean |approx_scaled|.
    pub approx_variation: f64,
}

pub fn cmd_fgr(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let setup = Setup::new(cfg)?;
    setup.require_assumptions()?;
    let sigma = cfg.nonlinearity.sigma;
    let mut w = ArtifactWriter::new(cfg, "fgr")?;
    let mut points = Vec::new();
    let mut defect_rows = Vec::new();
    for (i, lambda) in cfg.fgr_lambdas()?.into_iter().enumerate() {
        let a = PointAnalysis::new(&setup, lambda, sigma)?;
        let (data, warning) = a.fgr(&setup, cfg)?;
        let certificate = certify_positivity(&data, cfg.fgr.positivity_samples, cfg.seed)?;
        let xi_lin = aligned_linear_modes(&setup.spec, &a.modes);
        let inp = LeadingInputs {
            spec: &setup.spec,
            v: &a.op.v,
            lambda,
            sigma,
            delta: a.delta(),
            energies: &a.modes.energies,
            xi_lin: &xi_lin,
        };
        let nf = if cfg.fgr.normal_form { Some(a.normal_form(cfg)?) } else { None };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let mut samples = Vec::new();
        for _ in 0..cfg.fgr.identity_samples {
            let z = random_z(&mut rng, a.modes.count());
            let z2: f64 = z.iter().map(|x| x.norm_sqr()).sum();
            let g = data.gamma_form(&z);
            let g0 = data.gamma0_form(&z);
            let pi22 = match &nf {
                Some(nf) => Some(nf.pi22_identity(&data, &z, &setup.spec, &a.op.v)?),
                None => None,
            };
            samples.push(IdentitySample {
                z: z.iter().map(|c| [c.re, c.im]).collect(),
                gamma_form: g,
                gamma0_form: g0,
                approx_scaled: (g - g0) / (a.delta().powf(4.0 * sigma - 1.0) * z2 * z2),
                h22: h22_identity_check(&inp, &z)?,
                pi22,
            });
        }
        for s in &data.solves {
            defect_rows.push(vec![f(lambda), s.label.clone(), f(s.shift), f(s.defect), s.iterations.to_string()]);
        }
        w.json(&format!("fgr_{i:02}.json"), &data)?;
        if let Some(nf) = &nf {
            fs::write(w.dir().join(format!("normal_form_{i:02}.json")), nf.coefficients_json()? + "\n")?;
            w.register(format!("normal_form_{i:02}.json"));
        }
        let mut warnings: Vec<String> = warning.into_iter().collect();
        if let Some(nf) = &nf {
            warnings.extend(nf.warnings.iter().cloned());
        }
        points.push(FgrPointReport {
            lambda,
            delta: a.delta(),
            energies: a.modes.energies.clone(),
            near_degenerate: data.near_degenerate,
            certificate,
            symmetry_residuals: data.symmetry_residuals(),
            decomposition_residual: data.decomposition_residual(),
            max_defect: data.max_defect(),
            samples,
            normal_form_relation_residual: nf.as_ref().map(|n| n.relation_residual),
            normal_form_driven_residual: nf.as_ref().map(|n| n.driven_residual),
            warnings,
        });
    }
    w.csv("defects.csv", &["lambda", "solve", "shift", "defect", "iterations"], &defect_rows)?;
    let mut plemelj = Vec::new();
    if cfg.grid.dim == 1 {
        for &e in &cfg.fgr.plemelj_energies {
            plemelj.push(plemelj_check(&setup.grid, e, cfg.fgr.plemelj_width_len, &cfg.resolvent_config())?);
        }
    }
    let means: Vec<f64> = points
        .iter()
        .map(|p| p.samples.iter().map(|s| s.approx_scaled.abs()).sum::<f64>() / p.samples.len().max(1) as f64)
        .collect();
    let approx_variation = means.iter().cloned().fold(0.0, f64::max) / means.iter().cloned().fold(f64::INFINITY, f64::min);
    w.json(
        "fgr_summary.json",
        &FgrReport {
            points,
            plemelj,
            approx_variation,
        },
    )?;
    w.finish(cfg)
}

fn mass_rate(choice: MassRateChoice, nf: Option<&NormalForm>) -> Result<MassRate> {
    Ok(match choice {
        MassRateChoice::Gamma0 => MassRate::Gamma0,
        MassRateChoice::Gamma => MassRate::Gamma,
        MassRateChoice::Pi22 => MassRate::Pi22(
            nf.ok_or_else(|| Error::Usage("mass_rate = pi22 needs the normal form".into()))?
                .pi22_poly()?,
        ),
    })
}

/// Initial z₀ of modulus `amp`, spread evenly over the modes with a common phase.
fn initial_z(amp: f64, phase: f64, n: usize) -> Vec<C64> {
    vec![C64::from_polar(amp / (n as f64).sqrt(), phase); n]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReduceRun {
    pub amplitude_over_delta: f64,
    pub z0_abs: f64,
    pub lambda_final: f64,
    pub lambda_predicted: f64,
    pub max_invariant_drift: f64,
    pub envelopes: Envelopes,
    pub band_violation: f64,
    /// max |z²(t) − (|z₀|⁻² + 2γ̂t)⁻¹| relative, for one frozen mode.
    pub closed_form_error: Option<f64>,
    pub file: String,
}

pub fn cmd_reduce(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let setup = Setup::new(cfg)?;
    setup.require_assumptions()?;
    let (branch, _, cache) = branch_with_cache(cfg, &setup)?;
    let lambda0 = cfg.lambda0();
    let a = PointAnalysis::new(&setup, lambda0, cfg.nonlinearity.sigma)?;
    let (literal, _) = a.fgr(&setup, cfg)?;
    let data = cfg.reduced.normalization.apply(&literal);
    let nf = if cfg.reduced.mass_rate == MassRateChoice::Pi22 { Some(a.normal_form(cfg)?) } else { None };
    let mut model = ReducedModel::new(&branch, vec![data.clone()], mass_rate(cfg.reduced.mass_rate, nf.as_ref())?)?;
    model.interpolate = cfg.reduced.interpolate;
    model.use_gamma0_in_z = cfg.reduced.mass_rate == MassRateChoice::Gamma0;
    let mut w = ArtifactWriter::new(cfg, "reduce")?;
    w.reference(cache.display().to_string());
    let mut runs = Vec::new();
    for (i, amp) in cfg.sweep.amplitudes_over_delta.iter().enumerate() {
        let z0 = initial_z(amp * a.delta(), cfg.sweep.phase_rad, a.modes.count());
        let st = ReducedState {
            t: 0.0,
            lambda: lambda0,
            z: z0.clone(),
        };
        let traj = integrate_reduced(&model, &st, cfg.reduced.t_end_time, cfg.reduced.dt_time, cfg.reduced.record_every)?;
        let env = envelopes(&data, amp * a.delta(), cfg.reduced.envelope_samples, cfg.seed)?;
        let closed_form_error = (model.modes() == 1 && !model.interpolate).then(|| {
            let one = [C64::new(1.0, 0.0)];
            let g = if model.use_gamma0_in_z { data.gamma0_form(&one) } else { data.gamma_form(&one) };
            let z0_sq = amp * amp * a.delta() * a.delta();
            traj.points
                .iter()
                .map(|p| {
                    let c = scalar_closed_form(z0_sq, g, p.t);
                    (p.z_norm_sq - c).abs() / c
                })
                .fold(0.0, f64::max)
        });
        let name = format!("reduced_{i:02}.csv");
        traj.write_csv(fs::File::create(w.dir().join(&name))?)?;
        w.register(&name);
        runs.push(ReduceRun {
            amplitude_over_delta: *amp,
            z0_abs: amp * a.delta(),
            lambda_final: traj.final_point().lambda,
            lambda_predicted: predict_equipartition(&model, lambda0, &z0)?.lambda_inf,
            max_invariant_drift: traj.points.iter().map(|p| p.drift.abs()).fold(0.0, f64::max),
            band_violation: env.band_violation(&traj),
            envelopes: env,
            closed_form_error,
            file: name,
        });
    }
    w.json("reduce_summary.json", &runs)?;
    w.finish(cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedComparison {
    pub label: String,
    pub lambda_inf_reduced: f64,
    /// max |λ_full − λ_reduced| over the decay window.
    pub max_gap: f64,
    /// |λ_∞ − λ(0)| of the full run.
    pub excursion: f64,
    pub relative_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberResult {
    pub dir: String,
    pub amplitude_over_delta: f64,
    pub z0_abs: f64,
    pub t_end: f64,
    pub lambda0: f64,
    pub lambda0_decomposed: f64,
    pub z0_decomposed_sq: f64,
    pub lambda_inf: f64,
    pub delta_inf: f64,
    pub z0_over_delta_inf: f64,
    pub equipartition: Option<Equipartition>,
    pub equipartition_error: Option<String>,
    pub decay: Option<DecayFit>,
    /// 2z*Γz/|z|⁴ in the initial direction, literal and dynamic normalizations.
    pub predicted_quartic_rate: (f64, f64),
    pub sources_literal: SourceIntegrals,
    pub sources_dynamic: SourceIntegrals,
    pub reduced: Vec<ReducedComparison>,
    pub envelopes: Envelopes,
    pub max_budget_error: f64,
    pub max_r_h2: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub lambda0: f64,
    pub delta0: f64,
    pub normal_form: bool,
    pub members: Vec<MemberResult>,
}

struct SweepContext<'a> {
    cfg: &'a ExperimentConfig,
    setup: &'a Setup,
    branch: &'a GroundStateBranch,
    table: &'a ModeTable,
    analysis: &'a PointAnalysis,
    literal: &'a FgrData,
    nf: Option<&'a NormalForm>,
}

fn comparison(label: &str, diag: &RunDiagnostics, traj: &Trajectory) -> ReducedComparison {
    let z0 = diag.samples[0].z_norm_sq.sqrt();
    let excursion = (diag.lambda_inf - diag.samples[0].lambda).abs();
    let max_gap = diag
        .samples
        .iter()
        .filter(|s| (0.1..=0.8).contains(&(s.z_norm_sq.sqrt() / z0)))
        .map(|s| (s.lambda - traj.lambda_at(s.t)).abs())
        .fold(0.0, f64::max);
    ReducedComparison {
        label: label.to_string(),
        lambda_inf_reduced: traj.final_point().lambda,
        max_gap,
        excursion,
        relative_gap: if excursion > 0.0 { max_gap / excursion } else { f64::NAN },
    }
}

fn run_member(ctx: &SweepContext, amp: f64, dir: &Path) -> Result<(MemberResult, Vec<String>)> {
    let cfg = ctx.cfg;
    let a = ctx.analysis;
    let lambda0 = a.point.lambda();
    let n = a.modes.count();
    let z0 = initial_z(amp * a.delta(), cfg.sweep.phase_rad, n);
    let z0_sq: f64 = z0.iter().map(|x| x.norm_sqr()).sum();
    let unit: Vec<C64> = z0.iter().map(|x| x / z0_sq.sqrt()).collect();
    let dynamic = ctx.literal.dynamic();
    let rate = (2.0 * ctx.literal.gamma_form(&unit), 2.0 * dynamic.gamma_form(&unit));
    let mut ev = cfg.evolution_config();
    if cfg.sweep.auto_t_end {
        let t = (1.0 / cfg.sweep.final_fraction - 1.0) / (z0_sq * rate.1);
        ev.t_end = t.min(cfg.sweep.max_t_end_time);
    }
    let steps = (ev.t_end / ev.dt).ceil();
    ev.t_end = steps * ev.dt;
    let modes0 = ctx.table.at(lambda0);
    let alpha: Vec<f64> = z0.iter().map(|c| c.re).collect();
    let beta: Vec<f64> = z0.iter().map(|c| c.im).collect();
    let (psi0, warn) = synthesize_initial_data(ctx.branch, &modes0, lambda0, 0.0, &alpha, &beta, None, cfg.evolution.smallness)?;
    let prop = Propagator::new(&ctx.setup.pot, cfg.nonlinearity.sigma, &ev)?;
    let none = NoCorrections;
    let corr: &dyn Corrections = match ctx.nf {
        Some(nf) if cfg.sweep.normal_form => nf,
        _ => &none,
    };
    let mut dec = Decomposer::new(ctx.branch, ctx.table, corr);
    dec.tol = ev.newton_tol;
    dec.max_iter = ev.newton_max_iter;
    let guess = initial_guess(lambda0, 0.0, &z0, ctx.setup.grid.len());
    let diag = track_run(&psi0, &ev, &prop, &dec, guess, lambda0, &z0)?;
    fs::create_dir_all(dir)?;
    let mut files = vec!["run.csv".to_string(), "diagnostics.json".to_string()];
    diag.write_csv(fs::File::create(dir.join("run.csv"))?)?;
    write_json(&dir.join("diagnostics.json"), &diag)?;
    let (equipartition, equipartition_error) = match measure_equipartition(&diag, ctx.branch) {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let decay = fit_decay(&diag).ok();
    let (_, sources_literal) = residual_sources(&diag, |z| ctx.literal.gamma0_form(z));
    let (_, sources_dynamic) = residual_sources(&diag, |z| dynamic.gamma0_form(z));
    let first = &diag.samples[0];
    let st = ReducedState {
        t: 0.0,
        lambda: first.lambda,
        z: first.z.iter().map(|c| C64::new(c[0], c[1])).collect(),
    };
    let configured = cfg.reduced.normalization.apply(ctx.literal);
    let env = envelopes(&configured, z0_sq.sqrt(), cfg.reduced.envelope_samples, cfg.seed)?;
    let variants = [
        ("configured", configured, mass_rate(cfg.reduced.mass_rate, ctx.nf)?),
        ("literal_gamma0", ctx.literal.clone(), MassRate::Gamma0),
    ];
    let mut reduced = Vec::new();
    for (label, data, rate_kind) in variants {
        let mut model = ReducedModel::new(ctx.branch, vec![data], rate_kind)?;
        model.interpolate = cfg.reduced.interpolate;
        let dt = cfg.reduced.dt_time.min(0.1 / model.max_energy());
        let traj = integrate_reduced(&model, &st, ev.t_end, dt, cfg.reduced.record_every)?;
        let name = format!("reduced_{label}.json");
        write_json(&dir.join(&name), &traj)?;
        files.push(name);
        reduced.push(comparison(label, &diag, &traj));
    }
    let (phi_inf, _) = ctx.branch.interpolate(diag.lambda_inf)?;
    let delta_inf = ctx.setup.grid.cell_volume() * phi_inf.iter().zip(ctx.setup.spec.phi_lin()).map(|(a, b)| a * b).sum::<f64>();
    let result = MemberResult {
        dir: dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        amplitude_over_delta: amp,
        z0_abs: z0_sq.sqrt(),
        t_end: ev.t_end,
        lambda0,
        lambda0_decomposed: first.lambda,
        z0_decomposed_sq: first.z_norm_sq,
        lambda_inf: diag.lambda_inf,
        delta_inf,
        z0_over_delta_inf: z0_sq.sqrt() / delta_inf,
        equipartition,
        equipartition_error,
        decay,
        predicted_quartic_rate: rate,
        sources_literal,
        sources_dynamic,
        reduced,
        envelopes: env,
        max_budget_error: diag.max_budget_error,
        max_r_h2: diag.max_r_h2,
        warnings: warn.into_iter().collect(),
    };
    Ok((result, files))
}

fn run_sweep(cfg: &ExperimentConfig, command: &str, amplitudes: &[f64]) -> Result<RunArtifacts> {
    let setup = Setup::new(cfg)?;
    setup.require_assumptions()?;
    let (branch, _, cache) = branch_with_cache(cfg, &setup)?;
    let table = ModeTable::build(&setup.pot, &setup.spec, &branch)?;
    let analysis = PointAnalysis::new(&setup, cfg.lambda0(), cfg.nonlinearity.sigma)?;
    let (literal, _) = analysis.fgr(&setup, cfg)?;
    let need_nf = cfg.sweep.normal_form || cfg.reduced.mass_rate == MassRateChoice::Pi22;
    let nf = if need_nf { Some(analysis.normal_form(cfg)?) } else { None };
    let mut w = ArtifactWriter::new(cfg, command)?;
    w.reference(cache.display().to_string());
    w.json("fgr.json", &literal)?;
    let ctx = SweepContext {
        cfg,
        setup: &setup,
        branch: &branch,
        table: &table,
        analysis: &analysis,
        literal: &literal,
        nf: nf.as_ref(),
    };
    let workers = cfg.workers.min(amplitudes.len()).max(1);
    let base = w.dir().to_path_buf();
    let mut outcomes: Vec<Option<Result<(MemberResult, Vec<String>)>>> = (0..amplitudes.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|k| {
                let ctx = &ctx;
                let base = &base;
                s.spawn(move || {
                    (0..amplitudes.len())
                        .filter(|i| i % workers == k)
                        .map(|i| (i, run_member(ctx, amplitudes[i], &base.join(format!("run_{i:02}")))))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("sweep worker panicked") {
                outcomes[i] = Some(r);
            }
        }
    });
    let mut members = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        let (m, files) = o.expect("every member is scheduled")?;
        for name in files {
            w.register(format!("run_{i:02}/{name}"));
        }
        members.push(m);
    }
    let summary = SweepSummary {
        lambda0: analysis.point.lambda(),
        delta0: analysis.delta(),
        normal_form: cfg.sweep.normal_form,
        members,
    };
    w.json("summary.json", &summary)?;
    w.finish(cfg)
}

pub fn cmd_evolve(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let first = *cfg
        .sweep
        .amplitudes_over_delta
        .first()
        .ok_or_else(|| Error::Usage("sweep.amplitudes_over_delta is empty".into()))?;
    run_sweep(cfg, "evolve", &[first])
}

pub fn cmd_equipartition(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    if cfg.sweep.amplitudes_over_delta.is_empty() {
        return Err(Error::Usage("sweep.amplitudes_over_delta is empty".into()));
    }
    run_sweep(cfg, "equipartition", &cfg.sweep.amplitudes_over_delta)
}

/// Tidy plot tables derived from the newest sweep (`equipartition`, else `evolve`).
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let source = ["equipartition", "evolve"]
        .iter()
        .map(|c| cfg.output_dir.join(c))
        .find(|d| d.join("summary.json").exists())
        .ok_or_else(|| Error::Usage("no sweep output found; run equipartition or evolve first".into()))?;
    let summary: SweepSummary = read_json(&source.join("summary.json"))?;
    let literal: FgrData = read_json(&source.join("fgr.json"))?;
    let dynamic = literal.dynamic();
    if summary.members.is_empty() {
        return Err(Error::invalid("empty run: the sweep has no members"));
    }
    let mut decay = Vec::new();
    let mut mass = Vec::new();
    let mut sources = Vec::new();
    let mut bands = Vec::new();
    for m in &summary.members {
        let diag: RunDiagnostics = read_json(&source.join(&m.dir).join("diagnostics.json"))?;
        if diag.samples.len() < 3 {
            return Err(Error::invalid(format!("empty run in {}", m.dir)));
        }
        let reduced: Trajectory = read_json(&source.join(&m.dir).join("reduced_configured.json"))?;
        let z0 = diag.samples[0].z_norm_sq.sqrt();
        let (slope, rate) = m.decay.map(|d| (d.exponent, d.quartic_rate)).unwrap_or((f64::NAN, f64::NAN));
        for s in &diag.samples {
            let r = s.z_norm_sq.sqrt();
            if s.t > 0.0 {
                let inside = (0.1..=0.8).contains(&(r / z0));
                decay.push(vec![m.dir.clone(), f(s.t), f(s.t.ln()), f(r.ln()), inside.to_string(), f(slope), f(rate)]);
            }
            mass.push(vec![m.dir.clone(), f(s.t), f(s.lambda), f(s.soliton_mass), f(reduced.lambda_at(s.t))]);
            let e = &m.envelopes;
            bands.push(vec![
                m.dir.clone(),
                f(s.t),
                f(r),
                f(e.lower(s.t)),
                f(e.upper(s.t)),
                f(0.2 * e.lower(s.t)),
                f(5.0 * e.upper(s.t)),
            ]);
        }
        let (lit, _) = residual_sources(&diag, |z| literal.gamma0_form(z));
        let (dy, _) = residual_sources(&diag, |z| dynamic.gamma0_form(z));
        for (a, b) in lit.iter().zip(&dy) {
            sources.push(vec![m.dir.clone(), f(a.0), f(a.1), f(a.2), f(b.1), f(b.2)]);
        }
    }
    let mut w = ArtifactWriter::new(cfg, "report")?;
    w.reference(source.display().to_string());
    w.csv("decay.csv", &["run", "t", "log_t", "log_abs_z", "in_window", "fit_exponent", "fit_quartic_rate"], &decay)?;
    w.csv("soliton_mass.csv", &["run", "t", "lambda_full", "mass_full", "lambda_reduced"], &mass)?;
    w.csv("sources.csv", &["run", "t", "s_lambda_literal", "s_z_literal", "s_lambda_dynamic", "s_z_dynamic"], &sources)?;
    w.csv("envelopes.csv", &["run", "t", "abs_z", "z_lower", "z_upper", "band_low", "band_high"], &bands)?;
    w.finish(cfg)
}

pub const COMMANDS: [&str; 8] = ["spectrum", "branch", "modes", "fgr", "reduce", "evolve", "equipartition", "report"];

pub fn run_command(name: &str, cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    match name {
        "spectrum" => cmd_spectrum(cfg),
        "branch" => cmd_branch(cfg),
        "modes" => cmd_modes(cfg),
        "fgr" => cmd_fgr(cfg),
        "reduce" => cmd_reduce(cfg),
        "evolve" => cmd_evolve(cfg),
        "equipartition" => cmd_equipartition(cfg),
        "report" => cmd_report(cfg),
        other => Err(Error::Usage(format!("unknown command '{other}'"))),
    }
}
