//! Experiment configuration and end-to-end pipelines.
//!
//! A run builds the synthetic corpus, splits it into train and test sets,
//! partitions the training data across clients, optionally trains a
//! federated DP-GAN on the minority class and tops up every client with
//! generated samples, and finally trains the classifier centrally or
//! federated. Every random draw descends from `seed` through
//! [`crate::rng`], so a report is a pure function of its config.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{evaluate_accuracy, residual_mlp, train_epochs, ClassifierConfig};
use crate::data::{
    augment_with_fakes, partition, synth_dataset_with, ClientShard, LabeledDataset, PartitionMode,
    PartitionPlan, SynthParams, MINORITY_CLASS, NUM_CLASSES,
};
use crate::dp::{check_dp_condition, dpgan_noise_scale, PrivacyParams};
use crate::error::{Error, Result, StageExt};
use crate::fed::{
    run_training, ClassifierClient, FedConfig, GanClient, GlobalModelState, RoundRecord,
};
use crate::gan::{sample_generator, ClipMode, GanConfig, LatentPrior};
use crate::nn::init_params;
use crate::rng::{derive_seed, stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Centralized,
    Federated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Samples per class: normal, pneumonia, covid.
    pub counts: [usize; NUM_CLASSES],
    pub dim: usize,
    pub test_fraction: f64,
    pub pixel_noise: f64,
    pub lesion_strength: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let synth = SynthParams::default();
        DatasetConfig {
            counts: [2000, 1250, 350],
            dim: 64,
            test_fraction: 0.2,
            pixel_noise: synth.pixel_noise,
            lesion_strength: synth.lesion_strength,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub hidden_width: usize,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection { hidden_width: 64 }
    }
}

/// Federated DP-GAN pretraining; critic iterations come from `privacy.n_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanSection {
    pub rounds: u64,
    pub c_frac: f64,
    pub latent_dim: usize,
    pub hidden: usize,
    pub latent_prior: LatentPrior,
    pub n_g: usize,
    pub batch_m: usize,
    pub alpha: f64,
    pub clip_mode: ClipMode,
    /// Generated samples appended to every client shard.
    pub fakes_per_client: usize,
    /// Number of generated samples written to the sample dump.
    pub dump_samples: usize,
}

impl Default for GanSection {
    fn default() -> Self {
        GanSection {
            rounds: 40,
            c_frac: 0.2,
            latent_dim: 8,
            hidden: 32,
            latent_prior: LatentPrior::StandardNormal,
            n_g: 10,
            batch_m: 10,
            alpha: 0.05,
            clip_mode: ClipMode::PerBatch,
            fakes_per_client: 8,
            dump_samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: Mode,
    pub augmentation: bool,
    /// Classifier communication rounds (epochs in centralized mode).
    pub rounds: u64,
    pub clients: usize,
    pub c_frac: f64,
    pub batch: usize,
    pub local_epochs: usize,
    pub alpha: f64,
    pub parallel: bool,
    pub output_path: Option<String>,
    pub partition: PartitionPlan,
    pub dataset: DatasetConfig,
    pub classifier: ClassifierSection,
    pub privacy: PrivacyParams,
    pub gan: GanSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            mode: Mode::Federated,
            augmentation: false,
            rounds: 100,
            clients: 100,
            c_frac: 0.1,
            batch: 10,
            local_epochs: 5,
            alpha: 0.01,
            parallel: false,
            output_path: None,
            partition: PartitionPlan::default(),
            dataset: DatasetConfig::default(),
            classifier: ClassifierSection::default(),
            privacy: PrivacyParams::default(),
            gan: GanSection::default(),
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(invalid("clients", "must be at least 1"));
        }
        if !(self.c_frac > 0.0 && self.c_frac <= 1.0) {
            return Err(invalid(
                "c_frac",
                format!("{} is outside (0, 1]", self.c_frac),
            ));
        }
        if self.batch == 0 {
            return Err(invalid("batch", "must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(invalid("local_epochs", "must be at least 1"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", "must be a non-negative number"));
        }
        self.partition
            .validate()
            .map_err(|e| invalid("partition.covid_holder_fraction", e.to_string()))?;
        let d = &self.dataset;
        if d.dim < 4 {
            return Err(invalid("dataset.dim", "must be at least 4"));
        }
        if d.counts.iter().sum::<usize>() == 0 {
            return Err(invalid("dataset.counts", "dataset must not be empty"));
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(invalid("dataset.test_fraction", "must lie in (0, 1)"));
        }
        if !(d.pixel_noise > 0.0) {
            return Err(invalid("dataset.pixel_noise", "must be positive"));
        }
        if !(d.lesion_strength >= 0.0) {
            return Err(invalid("dataset.lesion_strength", "must be non-negative"));
        }
        if self.classifier.hidden_width == 0 {
            return Err(invalid("classifier.hidden_width", "must be at least 1"));
        }
        if let Some((field, message)) = self.privacy.invalid_field() {
            return Err(invalid(&format!("privacy.{field}"), message));
        }
        let g = &self.gan;
        if !(g.c_frac > 0.0 && g.c_frac <= 1.0) {
            return Err(invalid(
                "gan.c_frac",
                format!("{} is outside (0, 1]", g.c_frac),
            ));
        }
        for (key, value) in [
            ("gan.latent_dim", g.latent_dim),
            ("gan.hidden", g.hidden),
            ("gan.batch_m", g.batch_m),
        ] {
            if value == 0 {
                return Err(invalid(key, "must be at least 1"));
            }
        }
        if !(g.alpha >= 0.0 && g.alpha.is_finite()) {
            return Err(invalid("gan.alpha", "must be a non-negative number"));
        }
        Ok(())
    }

    pub fn gan_config(&self) -> Result<GanConfig> {
        let mut cfg = GanConfig::mlp(
            self.dataset.dim,
            self.gan.latent_dim,
            self.gan.hidden,
            self.privacy,
        )?;
        cfg.latent_prior = self.gan.latent_prior;
        cfg.n_g = self.gan.n_g;
        cfg.n_d = self.privacy.n_d as usize;
        cfg.batch_m = self.gan.batch_m;
        cfg.alpha = self.gan.alpha;
        cfg.clip_mode = self.gan.clip_mode;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn classifier_config(&self) -> Result<ClassifierConfig> {
        let spec = residual_mlp(self.dataset.dim, self.classifier.hidden_width, NUM_CLASSES)?;
        ClassifierConfig::new(spec, self.alpha, self.local_epochs, self.batch)
    }

    /// Short run label such as `federated-noniid-aug`.
    pub fn label(&self) -> String {
        let mode = match self.mode {
            Mode::Centralized => "centralized",
            Mode::Federated => "federated",
        };
        let part = match self.partition.mode {
            PartitionMode::Iid => "iid",
            PartitionMode::Noniid => "noniid",
        };
        let aug = if self.augmentation { "-aug" } else { "" };
        format!("{mode}-{part}{aug}")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

/// Parses a TOML document, filling defaults and rejecting unknown keys.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| invalid("<document>", e.to_string()))?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        invalid(
            if path.is_empty() { "." } else { &path },
            e.into_inner().message().to_string(),
        )
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Config text with the dotted `key` overwritten by each TOML literal in
/// `values`.
pub fn sweep_configs(text: &str, key: &str, values: &[String]) -> Result<Vec<ExperimentConfig>> {
    let base: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| invalid("<document>", e.to_string()))?;
    values
        .iter()
        .map(|raw| {
            let value: toml::Value = format!("v = {raw}")
                .parse::<toml::Table>()
                .map_err(|e| invalid(key, format!("bad value `{raw}`: {e}")))?
                .remove("v")
                .expect("parsed key");
            let mut doc = base.clone();
            set_dotted(&mut doc, key, value)?;
            parse_config(&toml::to_string(&doc).map_err(|e| Error::Format(e.to_string()))?)
        })
        .collect()
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut current = table;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            current.insert(part.to_string(), value);
            return Ok(());
        }
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| invalid(key, format!("`{part}` is not a table")))?;
    }
    Err(invalid(key, "empty key"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub round: u64,
    pub accuracy: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanSummary {
    pub rounds: u64,
    pub participants: usize,
    pub final_mean_critic_loss: f64,
    /// Noise multiplier implied by the privacy budget, with `q = m / shard`.
    pub implied_sigma_n: f64,
    pub sample_rate: f64,
    pub dp_condition_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub sigma_n: f64,
    pub final_accuracy: f64,
    pub rows: Vec<MetricRow>,
    pub gan: Option<GanSummary>,
    pub train_counts: [usize; NUM_CLASSES],
    pub test_counts: [usize; NUM_CLASSES],
    #[serde(skip)]
    pub samples: Option<LabeledDataset>,
}

impl ExperimentReport {
    pub const CSV_HEADER: &'static str = "round,mode,accuracy,mean_loss";

    pub fn metrics_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.6},{:.6}",
                r.round, self.label, r.accuracy, r.mean_loss
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_summary_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes `metrics.csv`, `summary.json` and, when present, `samples.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        std::fs::write(dir.join("summary.json"), self.summary_json()?)?;
        if let Some(samples) = &self.samples {
            samples.write_csv(&dir.join("samples.csv"))?;
        }
        Ok(())
    }
}

struct Prepared {
    train: LabeledDataset,
    test: LabeledDataset,
    shards: Vec<ClientShard>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let d = &cfg.dataset;
    let synth = SynthParams {
        pixel_noise: d.pixel_noise,
        lesion_strength: d.lesion_strength,
    };
    let full = synth_dataset_with(
        d.counts,
        d.dim,
        derive_seed(cfg.seed, &[tag::DATASET]),
        &synth,
    )?;
    let (train, test) =
        full.stratified_split(d.test_fraction, derive_seed(cfg.seed, &[tag::SPLIT]))?;
    let shards = partition(
        &train,
        &cfg.partition,
        cfg.clients,
        derive_seed(cfg.seed, &[tag::PARTITION]),
    )?;
    Ok(Prepared {
        train,
        test,
        shards,
    })
}

struct Augmented {
    shards: Vec<ClientShard>,
    summary: GanSummary,
    samples: LabeledDataset,
}

/// Federated DP-GAN on each client's minority-class samples, then tops up
/// every shard with generated minority samples.
fn pretrain_and_augment(cfg: &ExperimentConfig, shards: &[ClientShard]) -> Result<Augmented> {
    let gan = cfg.gan_config()?;
    let mut clients: Vec<GanClient> = Vec::new();
    let theta0 = init_params(&gan.generator, derive_seed(cfg.seed, &[tag::GAN_INIT, 0]))?;
    let omega0 = init_params(&gan.critic, derive_seed(cfg.seed, &[tag::GAN_INIT, 1]))?;
    for s in shards {
        let minority = s.dataset.of_class(MINORITY_CLASS);
        if minority.is_empty() {
            continue;
        }
        clients.push(GanClient {
            shard: ClientShard {
                client_id: s.client_id,
                dataset: minority,
            },
            cfg: gan.clone(),
            omega: omega0.clone(),
        });
    }
    if clients.is_empty() {
        return Err(Error::data("no client holds minority-class samples"));
    }
    let mean_shard =
        clients.iter().map(|c| c.shard.n_k()).sum::<usize>() as f64 / clients.len() as f64;
    let sample_rate = (gan.batch_m as f64 / mean_shard).min(1.0);
    let p = &cfg.privacy;
    let implied_sigma_n = dpgan_noise_scale(sample_rate, p.n_d, p.delta, p.epsilon)?;

    let fed = FedConfig {
        rounds: cfg.gan.rounds,
        c_frac: cfg.gan.c_frac,
        seed: derive_seed(cfg.seed, &[tag::GAN_CLIENT]),
        parallel: cfg.parallel,
    };
    let state = run_training(GlobalModelState::new(theta0), &mut clients, &fed, None)?;
    let final_mean_critic_loss = state.history.last().map_or(0.0, |r| r.mean_client_loss);

    let augmented = shards
        .iter()
        .map(|s| {
            let mut rng = stream(cfg.seed, &[tag::AUGMENT, s.client_id as u64]);
            augment_with_fakes(
                s,
                &state.theta,
                &gan,
                cfg.gan.fakes_per_client,
                MINORITY_CLASS,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let samples = if cfg.gan.dump_samples > 0 {
        let mut rng = stream(cfg.seed, &[tag::AUGMENT, u64::MAX]);
        let batch = sample_generator(&state.theta, &gan, cfg.gan.dump_samples, &mut rng)?;
        LabeledDataset::new(batch.inputs, vec![MINORITY_CLASS; cfg.gan.dump_samples])?
    } else {
        LabeledDataset::empty(cfg.dataset.dim)
    };

    Ok(Augmented {
        shards: augmented,
        summary: GanSummary {
            rounds: state.round,
            participants: clients.len(),
            final_mean_critic_loss,
            implied_sigma_n,
            sample_rate,
            dp_condition_holds: check_dp_condition(p.sigma_n, p.epsilon, p.delta),
        },
        samples,
    })
}

fn rows_from_history(history: &[RoundRecord]) -> Vec<MetricRow> {
    history
        .iter()
        .map(|r| MetricRow {
            round: r.round + 1,
            accuracy: r.eval_accuracy.unwrap_or(f64::NAN),
            mean_loss: r.mean_client_loss,
        })
        .collect()
}

fn train_classifier(
    cfg: &ExperimentConfig,
    shards: Vec<ClientShard>,
    test: &LabeledDataset,
) -> Result<Vec<MetricRow>> {
    let ccfg = cfg.classifier_config()?;
    let theta0 = init_params(&ccfg.spec, derive_seed(cfg.seed, &[tag::INIT]))?;
    let spec = ccfg.spec.clone();
    let eval = |p: &crate::nn::ParameterVector| evaluate_accuracy(p, &spec, test);
    match cfg.mode {
        Mode::Federated => {
            let mut clients: Vec<ClassifierClient> = shards
                .into_iter()
                .map(|shard| ClassifierClient {
                    shard,
                    cfg: ccfg.clone(),
                })
                .collect();
            let fed = FedConfig {
                rounds: cfg.rounds,
                c_frac: cfg.c_frac,
                seed: derive_seed(cfg.seed, &[tag::CLIENT]),
                parallel: cfg.parallel,
            };
            let state = run_training(
                GlobalModelState::new(theta0),
                &mut clients,
                &fed,
                Some(&eval),
            )?;
            Ok(rows_from_history(&state.history))
        }
        Mode::Centralized => {
            let pooled = shards
                .iter()
                .try_fold(LabeledDataset::empty(cfg.dataset.dim), |acc, s| {
                    acc.concat(&s.dataset)
                })?;
            let mut params = theta0;
            let mut rows = Vec::with_capacity(cfg.rounds as usize);
            for round in 0..cfg.rounds {
                let mut rng = stream(cfg.seed, &[tag::CENTRAL, round]);
                let out = train_epochs(&params, &pooled, &ccfg, 1, &mut rng)?;
                params = out.params;
                rows.push(MetricRow {
                    round: round + 1,
                    accuracy: eval(&params)?,
                    mean_loss: out.mean_loss,
                });
            }
            Ok(rows)
        }
    }
}

/// Runs the configured pipeline end to end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let prepared = prepare(cfg).stage("data")?;
    let (shards, gan, samples) = if cfg.augmentation {
        let aug = pretrain_and_augment(cfg, &prepared.shards).stage("gan")?;
        (aug.shards, Some(aug.summary), Some(aug.samples))
    } else {
        (prepared.shards, None, None)
    };
    let rows = train_classifier(cfg, shards, &prepared.test).stage("classifier")?;
    let final_accuracy = rows.last().map_or(f64::NAN, |r| r.accuracy);
    let report = ExperimentReport {
        label: cfg.label(),
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        sigma_n: cfg.privacy.sigma_n,
        final_accuracy,
        rows,
        gan,
        train_counts: prepared.train.class_counts(),
        test_counts: prepared.test.class_counts(),
        samples,
    };
    if let Some(dir) = &cfg.output_path {
        report.write_to(Path::new(dir)).stage("output")?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub labels: Vec<String>,
    /// `(round, accuracy per report)`; `None` where a report lacks the round.
    pub rows: Vec<(u64, Vec<Option<f64>>)>,
    pub final_accuracy: Vec<f64>,
    /// First report's final accuracy minus each later report's.
    pub final_deltas: Vec<f64>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round");
        for l in &self.labels {
            write!(out, ",{l}").expect("writing to a String");
        }
        out.push('\n');
        for (round, accs) in &self.rows {
            write!(out, "{round}").expect("writing to a String");
            for a in accs {
                match a {
                    Some(v) => write!(out, ",{v:.6}"),
                    None => write!(out, ","),
                }
                .expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }
}

/// Aligns per-round accuracy across reports and computes final deltas
/// against the first report.
pub fn compare_runs(reports: &[ExperimentReport]) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(Error::Comparison("need at least two reports".into()));
    }
    let mut rounds: Vec<u64> = reports
        .iter()
        .flat_map(|r| r.rows.iter().map(|m| m.round))
        .collect();
    rounds.sort_unstable();
    rounds.dedup();
    let common = rounds.iter().any(|round| {
        reports
            .iter()
            .all(|r| r.rows.iter().any(|m| m.round == *round))
    });
    if !common {
        return Err(Error::Comparison("reports share no evaluated round".into()));
    }
    let rows = rounds
        .into_iter()
        .map(|round| {
            let accs = reports
                .iter()
                .map(|r| r.rows.iter().find(|m| m.round == round).map(|m| m.accuracy))
                .collect();
            (round, accs)
        })
        .collect();
    let base = reports[0].final_accuracy;
    Ok(ComparisonTable {
        labels: reports.iter().map(|r| r.label.clone()).collect(),
        rows,
        final_accuracy: reports.iter().map(|r| r.final_accuracy).collect(),
        final_deltas: reports[1..]
            .iter()
            .map(|r| base - r.final_accuracy)
            .collect(),
    })
}
