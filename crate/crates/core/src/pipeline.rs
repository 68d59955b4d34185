//! End-to-end experiment: generate → identify → evaluate.
//!
//! Each stage reads its inputs from and writes its outputs to the
//! experiment's output directory, so later stages can be rerun on a frozen
//! dataset. `manifest.json` records the resolved configuration and every
//! output file.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::edmd::{
    build_snapshots, full_system_matrix_from, svd_thin, truncated_system_matrix, Fingerprint,
    IdentifiedModel, ModelDocument, RankRule, RankSelector, SnapshotPair, SvdFactors,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    benchmark_solve, build_table, format_summary, one_step_rmse, table_violations,
    write_spectrum_csv, write_table_csv, EvalRow, ModelRun, Reference, TimeScope,
};
use crate::lane_change::{self, LaneConfig, Trajectory};
use crate::observables::{lift_trajectory, sample_radial_centers, BasisSpec};
use crate::rng;

pub const TRAJECTORIES_CSV: &str = "trajectories.csv";
pub const METADATA_CSV: &str = "trajectories_meta.csv";
pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const TABLE_CSV: &str = "table1.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const MODELS_DIR: &str = "models";

/// A requested observable dictionary. Radial centers left unset are drawn
/// from the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisRequest {
    Monomial { order: u32 },
    Radial { centers: Option<(f64, f64)> },
}

impl BasisRequest {
    pub fn resolve(&self, w_l: f64, master_seed: u64) -> BasisSpec {
        match *self {
            BasisRequest::Monomial { order } => BasisSpec::Monomial { order },
            BasisRequest::Radial { centers: Some((c_s, c_y)) } => {
                BasisSpec::ThinPlateRadial { c_s, c_y }
            }
            BasisRequest::Radial { centers: None } => {
                let (c_s, c_y) = sample_radial_centers(w_l, &mut rng::center_stream(master_seed));
                BasisSpec::ThinPlateRadial { c_s, c_y }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    pub repeats: usize,
    pub warmups: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            repeats: 100,
            warmups: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub lane: LaneConfig,
    pub bases: Vec<BasisRequest>,
    pub rules: Vec<RankRule>,
    pub master_seed: u64,
    pub timing: TimingConfig,
    pub output_dir: PathBuf,
    pub energy_slack: f64,
    pub energy_squared: bool,
    pub ht_rank_fallback: bool,
    pub time_scope: TimeScope,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            lane: LaneConfig::default(),
            bases: vec![
                BasisRequest::Monomial { order: 2 },
                BasisRequest::Radial { centers: None },
            ],
            rules: vec![
                RankRule::Energy {
                    threshold_percent: 90.0,
                },
                RankRule::Energy {
                    threshold_percent: 99.0,
                },
                RankRule::HardThreshold,
            ],
            master_seed: 42,
            timing: TimingConfig::default(),
            output_dir: PathBuf::from("out"),
            energy_slack: 1.5,
            energy_squared: false,
            ht_rank_fallback: true,
            time_scope: TimeScope::Solve,
        }
    }
}

impl ExperimentConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.lane.violations();
        if self.bases.is_empty() {
            out.push("at least one basis is required".into());
        }
        for b in &self.bases {
            match *b {
                BasisRequest::Monomial { order } if order < 1 => {
                    out.push("N_m must be >= 1".into())
                }
                BasisRequest::Radial { centers: Some((c_s, c_y)) }
                    if !(c_s.is_finite() && c_y.is_finite()) =>
                {
                    out.push("c_s and c_y must be finite".into())
                }
                _ => {}
            }
        }
        if self.rules.is_empty() {
            out.push("at least one rank rule is required".into());
        }
        for r in &self.rules {
            if !r.is_valid() {
                out.push(format!("rank rule {r} out of range"));
            }
        }
        if self.timing.repeats < 1 {
            out.push("repeats must be >= 1".into());
        }
        if !(self.energy_slack >= 0.0 && self.energy_slack < 100.0) {
            out.push(format!("energy_slack must lie in [0, 100) (got {})", self.energy_slack));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn selector(&self) -> RankSelector {
        RankSelector {
            energy_slack: self.energy_slack,
            energy_squared: self.energy_squared,
            ht_rank_fallback: self.ht_rank_fallback,
        }
    }

    pub fn resolved_bases(&self) -> Vec<BasisSpec> {
        self.bases
            .iter()
            .map(|b| b.resolve(self.lane.w_l, self.master_seed))
            .collect()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let lane = serde_json::to_string(&self.lane).expect("lane config serializes");
        let mut h = Sha256::new();
        h.update(lane.as_bytes());
        h.update(self.master_seed.to_le_bytes());
        Fingerprint {
            seed: self.master_seed,
            n_traj: self.lane.n_traj,
            config_hash: hex::encode(h.finalize()),
        }
    }
}

/// Flat config file. Key names follow the experiment parameter names; every
/// key is optional and unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct ConfigFile {
    w_L: Option<f64>,
    w_V: Option<f64>,
    sigma_a_s: Option<f64>,
    sigma_y_L: Option<f64>,
    T: Option<f64>,
    s_0: Option<f64>,
    v_0: Option<f64>,
    a_0: Option<f64>,
    /// Degrees.
    psi_0_max: Option<f64>,
    N_T: Option<usize>,
    max_samples: Option<usize>,
    N_m: Option<u32>,
    c_s: Option<f64>,
    c_y: Option<f64>,
    bases: Option<Vec<String>>,
    rules: Option<Vec<String>>,
    seed: Option<u64>,
    repeats: Option<usize>,
    warmups: Option<usize>,
    energy_slack: Option<f64>,
    energy_squared: Option<bool>,
    ht_rank_fallback: Option<bool>,
    time_scope: Option<String>,
    output_dir: Option<PathBuf>,
}

impl ConfigFile {
    fn into_config(self) -> Result<ExperimentConfig> {
        let d = ExperimentConfig::default();
        let mut problems = Vec::new();

        let w_l = self.w_L.unwrap_or(d.lane.w_l);
        let w_v = self.w_V.unwrap_or(d.lane.w_v);
        let lane = LaneConfig {
            w_l,
            w_v,
            sigma_a: self.sigma_a_s.unwrap_or(d.lane.sigma_a),
            sigma_y: self.sigma_y_L.unwrap_or((w_l - w_v) / 6.0),
            t: self.T.unwrap_or(d.lane.t),
            psi0_max: self.psi_0_max.map_or(d.lane.psi0_max, f64::to_radians),
            s0: self.s_0.unwrap_or(d.lane.s0),
            v0: self.v_0.unwrap_or(d.lane.v0),
            a0: self.a_0.unwrap_or(d.lane.a0),
            n_traj: self.N_T.unwrap_or(d.lane.n_traj),
            max_samples: self.max_samples.unwrap_or(d.lane.max_samples),
        };

        let order = self.N_m.unwrap_or(2);
        let centers = match (self.c_s, self.c_y) {
            (Some(c_s), Some(c_y)) => Some((c_s, c_y)),
            (None, None) => None,
            _ => {
                problems.push("c_s and c_y must be given together".to_string());
                None
            }
        };
        let bases = match self.bases {
            None => vec![
                BasisRequest::Monomial { order },
                BasisRequest::Radial { centers },
            ],
            Some(names) => names
                .iter()
                .filter_map(|n| match n.trim().to_ascii_lowercase().as_str() {
                    "monomial" => Some(BasisRequest::Monomial { order }),
                    "radial" | "thin_plate" | "tps" => Some(BasisRequest::Radial { centers }),
                    other => {
                        problems.push(format!("unknown basis `{other}` (expected monomial or radial)"));
                        None
                    }
                })
                .collect(),
        };
        let rules = match self.rules {
            None => d.rules.clone(),
            Some(names) => names
                .iter()
                .filter_map(|n| n.parse::<RankRule>().map_err(|e| problems.push(e)).ok())
                .collect(),
        };
        let time_scope = match self.time_scope {
            None => d.time_scope,
            Some(s) => s.parse().unwrap_or_else(|e| {
                problems.push(e);
                d.time_scope
            }),
        };

        let cfg = ExperimentConfig {
            lane,
            bases,
            rules,
            master_seed: self.seed.unwrap_or(d.master_seed),
            timing: TimingConfig {
                repeats: self.repeats.unwrap_or(d.timing.repeats),
                warmups: self.warmups.unwrap_or(d.timing.warmups),
            },
            output_dir: self.output_dir.unwrap_or(d.output_dir),
            energy_slack: self.energy_slack.unwrap_or(d.energy_slack),
            energy_squared: self.energy_squared.unwrap_or(d.energy_squared),
            ht_rank_fallback: self.ht_rank_fallback.unwrap_or(d.ht_rank_fallback),
            time_scope,
        };
        problems.extend(cfg.violations());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Parses a TOML config; absent keys take the default experiment values.
pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::ConfigParse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    file.into_config()
}

/// Loads a TOML config, or the config recorded in a `manifest.json`.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: ExperimentManifest =
            serde_json::from_str(&text).map_err(|e| Error::ConfigParse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        manifest.config.validate()?;
        return Ok(manifest.config);
    }
    parse_config(&text, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_traj: usize,
    pub total_samples: usize,
    pub snapshot_columns: usize,
    pub total_rejections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool: String,
    pub version: String,
    pub libraries: BTreeMap<String, String>,
    pub config: ExperimentConfig,
    pub fingerprint: Fingerprint,
    pub resolved_bases: Vec<BasisSpec>,
    pub dataset: Option<DatasetSummary>,
    /// Condition number `σ₁/σ_r` of `X` per basis label.
    pub condition_numbers: BTreeMap<String, f64>,
    pub stage_durations_ms: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub created_unix: u64,
}

impl ExperimentManifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let libraries = [("nalgebra", "0.35"), ("rand_chacha", "0.9"), ("rand_distr", "0.5")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            libraries,
            config: cfg.clone(),
            fingerprint: cfg.fingerprint(),
            resolved_bases: cfg.resolved_bases(),
            dataset: None,
            condition_numbers: BTreeMap::new(),
            stage_durations_ms: BTreeMap::new(),
            outputs: Vec::new(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    /// Reuses the manifest on disk when it describes the same experiment.
    fn load_or_new(cfg: &ExperimentConfig) -> Self {
        let path = cfg.output_dir.join(MANIFEST_JSON);
        fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str::<ExperimentManifest>(&t).ok())
            .filter(|m| m.fingerprint == cfg.fingerprint())
            .map(|mut m| {
                m.config = cfg.clone();
                m.resolved_bases = cfg.resolved_bases();
                m
            })
            .unwrap_or_else(|| Self::new(cfg))
    }

    fn record(&mut self, file: &str) {
        if !self.outputs.iter().any(|o| o == file) {
            self.outputs.push(file.to_string());
            self.outputs.sort();
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_JSON);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        Error::Format { message, .. } => Error::Format {
            path: path.to_path_buf(),
            message,
        },
        e => e,
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

pub fn model_file_name(basis: &BasisSpec, rule: Option<&RankRule>) -> String {
    match rule {
        Some(r) => format!("{}_{}.json", basis.label(), r.slug()),
        None => format!("{}_reference.json", basis.label()),
    }
}

#[derive(Debug)]
pub struct GenerateOutput {
    pub trajectories: Vec<Trajectory>,
    pub manifest: ExperimentManifest,
}

/// Generates the trajectory dataset and writes it as CSV.
pub fn run_generate(cfg: &ExperimentConfig) -> Result<GenerateOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let trajectories = lane_change::generate_dataset(&cfg.lane, cfg.master_seed)?;

    let path = dir.join(TRAJECTORIES_CSV);
    lane_change::write_samples_csv(create(&path)?, &trajectories).map_err(|e| with_path(e, &path))?;
    let path = dir.join(METADATA_CSV);
    lane_change::write_metadata_csv(create(&path)?, &trajectories).map_err(|e| with_path(e, &path))?;

    let mut manifest = ExperimentManifest::new(cfg);
    manifest.dataset = Some(DatasetSummary {
        n_traj: trajectories.len(),
        total_samples: trajectories.iter().map(Trajectory::len).sum(),
        snapshot_columns: trajectories.iter().map(|t| t.len() - 1).sum(),
        total_rejections: trajectories.iter().map(|t| t.rejections).sum(),
    });
    manifest.record(TRAJECTORIES_CSV);
    manifest.record(METADATA_CSV);
    manifest
        .stage_durations_ms
        .insert("generate".into(), elapsed_ms(start));
    manifest.save(dir)?;
    Ok(GenerateOutput {
        trajectories,
        manifest,
    })
}

pub fn read_trajectories(dir: &Path) -> Result<Vec<Trajectory>> {
    let samples = dir.join(TRAJECTORIES_CSV);
    let meta = dir.join(METADATA_CSV);
    lane_change::read_dataset(open(&samples)?, open(&meta)?).map_err(|e| with_path(e, &samples))
}

/// Lifted snapshots and their factorization for one basis.
#[derive(Debug, Clone)]
pub struct BasisData {
    pub basis: BasisSpec,
    pub pair: SnapshotPair,
    pub factors: SvdFactors,
}

pub fn prepare_basis(trajectories: &[Trajectory], basis: BasisSpec) -> Result<BasisData> {
    let lifted: Vec<_> = trajectories
        .iter()
        .map(|t| lift_trajectory(t, &basis))
        .collect();
    let pair = build_snapshots(&lifted)?;
    let factors = svd_thin(&pair.x)?;
    Ok(BasisData {
        basis,
        pair,
        factors,
    })
}

#[derive(Debug, Clone)]
pub struct IdentifiedBasis {
    pub data: BasisData,
    pub reference: IdentifiedModel,
    pub models: Vec<IdentifiedModel>,
}

/// Full-rank reference plus one model per configured rule.
pub fn identify_basis(cfg: &ExperimentConfig, data: BasisData) -> Result<IdentifiedBasis> {
    let selector = cfg.selector();
    let dims = (data.pair.dim(), data.pair.columns());
    let reference = full_system_matrix_from(&data.pair, &data.factors)?.with_basis(data.basis);
    let models = cfg
        .rules
        .iter()
        .map(|&rule| {
            let r = selector.select(&data.factors, rule, dims)?;
            Ok(truncated_system_matrix(&data.pair, &data.factors, r)?
                .with_rule(rule)
                .with_basis(data.basis))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IdentifiedBasis {
        data,
        reference,
        models,
    })
}

fn energy(cfg: &ExperimentConfig, sigma: &[f64]) -> Vec<f64> {
    if cfg.energy_squared {
        crate::edmd::energy_profile_squared(sigma)
    } else {
        crate::edmd::energy_profile(sigma)
    }
}

fn write_model(dir: &Path, name: &str, doc: &ModelDocument) -> Result<()> {
    let path = dir.join(MODELS_DIR).join(name);
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, doc).expect("model serializes");
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))
}

/// Lifts the stored dataset with every basis, identifies the reference and
/// rule-selected models, and writes them along with the spectrum.
pub fn run_identify(cfg: &ExperimentConfig) -> Result<Vec<IdentifiedBasis>> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = &cfg.output_dir;
    let trajectories = read_trajectories(dir)?;
    let fingerprint = cfg.fingerprint();
    let mut manifest = ExperimentManifest::load_or_new(cfg);

    let mut out = Vec::new();
    let mut spectra = Vec::new();
    for basis in cfg.resolved_bases() {
        let data = prepare_basis(&trajectories, basis).map_err(|e| {
            Error::Domain(format!("basis {basis}: {e}"))
        })?;
        let identified = identify_basis(cfg, data)?;
        let sigma = identified.data.factors.sigma.as_slice().to_vec();
        manifest.condition_numbers.insert(
            basis.label().into(),
            sigma[0] / sigma[sigma.len() - 1],
        );
        spectra.push((basis, sigma.clone(), energy(cfg, &sigma)));

        let name = model_file_name(&basis, None);
        write_model(dir, &name, &ModelDocument::new(&identified.reference, basis, fingerprint.clone()))?;
        manifest.record(&format!("{MODELS_DIR}/{name}"));
        for m in &identified.models {
            let name = model_file_name(&basis, Some(&m.rule));
            write_model(dir, &name, &ModelDocument::new(m, basis, fingerprint.clone()))?;
            manifest.record(&format!("{MODELS_DIR}/{name}"));
        }
        out.push(identified);
    }

    let path = dir.join(SPECTRUM_CSV);
    write_spectrum_csv(create(&path)?, &spectra).map_err(|e| with_path(e, &path))?;
    manifest.record(SPECTRUM_CSV);
    manifest
        .stage_durations_ms
        .insert("identify".into(), elapsed_ms(start));
    manifest.save(dir)?;
    Ok(out)
}

fn read_model(path: &Path, fingerprint: &Fingerprint) -> Result<IdentifiedModel> {
    let doc: ModelDocument = serde_json::from_reader(open(path)?).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if &doc.fingerprint != fingerprint {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "model was trained on a different dataset".into(),
        });
    }
    doc.to_model()
}

#[derive(Debug, Clone)]
pub struct EvaluateOutput {
    pub rows: Vec<EvalRow>,
    pub summary: String,
}

/// Benchmarks and scores the stored models, writing `table1.csv` and a text
/// report. Fails with [`Error::Invariant`] after writing when a full-rank
/// row is not exact or a truncated solve is not cheaper in flops.
pub fn run_evaluate(cfg: &ExperimentConfig) -> Result<EvaluateOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = &cfg.output_dir;
    let trajectories = read_trajectories(dir)?;
    let fingerprint = cfg.fingerprint();
    let mut manifest = ExperimentManifest::load_or_new(cfg);
    let (repeats, warmups, scope) = (cfg.timing.repeats, cfg.timing.warmups, cfg.time_scope);

    let mut references = Vec::new();
    let mut runs = Vec::new();
    for basis in cfg.resolved_bases() {
        let data = prepare_basis(&trajectories, basis)?;
        let path = dir.join(MODELS_DIR).join(model_file_name(&basis, None));
        let reference = read_model(&path, &fingerprint).map_err(|e| match e {
            Error::Io { .. } => Error::MissingReference(basis.to_string()),
            e => e,
        })?;
        let timing = benchmark_solve(&data.pair, &data.factors, None, repeats, warmups, scope)?;
        for rule in &cfg.rules {
            let path = dir.join(MODELS_DIR).join(model_file_name(&basis, Some(rule)));
            let model = read_model(&path, &fingerprint)?;
            let timing = if model.rank_used < data.factors.r_max() {
                Some(benchmark_solve(
                    &data.pair,
                    &data.factors,
                    Some(model.rank_used),
                    repeats,
                    warmups,
                    scope,
                )?)
            } else {
                None
            };
            runs.push(ModelRun {
                basis,
                one_step_rmse: one_step_rmse(&model, &data.pair),
                model,
                timing,
            });
        }
        references.push(Reference {
            basis,
            model: reference,
            timing,
            sigma: data.factors.sigma.as_slice().to_vec(),
        });
    }

    let rows = build_table(&runs, &references, cfg.energy_squared)?;
    let path = dir.join(TABLE_CSV);
    write_table_csv(create(&path)?, &rows).map_err(|e| with_path(e, &path))?;
    manifest.record(TABLE_CSV);

    let summary = format_summary(&rows);
    let mut report = summary.clone();
    report.push_str(&format!(
        "\ntime scope: {}; repeats {}, warmups {}\n",
        match scope {
            TimeScope::Solve => "solve",
            TimeScope::SvdAndSolve => "svd+solve",
        },
        repeats,
        warmups
    ));
    for r in &rows {
        report.push_str(&format!(
            "{}/{}: flops {} vs {} full, one-step RMSE {:.6e} m, cond(X) {:.3e}, E_r {:?}\n",
            r.basis_label,
            r.rule_label,
            r.flops_trunc,
            r.flops_full,
            r.one_step_rmse,
            r.condition_number,
            r.energy
        ));
    }
    let path = dir.join(REPORT_TXT);
    fs::write(&path, &report).map_err(|e| Error::io(&path, e))?;
    manifest.record(REPORT_TXT);
    manifest
        .stage_durations_ms
        .insert("evaluate".into(), elapsed_ms(start));
    manifest.save(dir)?;

    let violations = table_violations(&rows);
    if !violations.is_empty() {
        return Err(Error::Invariant(violations));
    }
    Ok(EvaluateOutput { rows, summary })
}

/// All three stages in order; the first failure aborts with its stage name.
pub fn run_all(cfg: &ExperimentConfig) -> Result<EvaluateOutput> {
    run_generate(cfg).map_err(|e| e.in_stage("generate"))?;
    run_identify(cfg).map_err(|e| e.in_stage("identify"))?;
    run_evaluate(cfg).map_err(|e| e.in_stage("evaluate"))
}
