//! Experiment configuration: a sectioned key=value text format with a
//! hand-written parser that reports precise line/field positions, plus
//! `--set section.key=value` overrides.
//!
//! Sections and keys (defaults in parentheses):
//!
//! ```text
//! [dataset]
//! kind (toy)                    toy | four-gaussians | images
//! intervals (the 1/3/1/2-mode staircase)   low:high:m1,m2| ... per interval
//! sigma (0.02)                  toy mode noise
//! samples-per-interval (250)    toy samples per interval
//! n (4000)                      four-gaussians count / images training subset
//! images-path ()                IDX image file, images kind only
//! labels-path ()                IDX label file, optional
//! binarize-threshold (0.5)      images kind
//! binarize-mode (fixed)         fixed | stochastic
//! heldout (64)                  images reserved after `n` for eval conditions
//!
//! [model]
//! latent-dim (2)                prior (cdv)        k (8)
//! conditioning (latent-only)    likelihood (auto)  activation (tanh)
//! enc-hidden (64,64)  dec-hidden (64,64)  prior-hidden (64,64)
//!
//! [train]
//! epochs (200)            batch-size (64)      learning-rate (1e-3)
//! adam-beta1 (0.9)        adam-beta2 (0.999)   adam-eps (1e-8)
//! mc-samples (1)          annealing-steps (0 = one epoch's worth)
//!
//! [eval]
//! mc-samples (100)              metrics (elbo)   radii (1..10)
//! confidence-threshold (0.9)    variety-samples (10)
//! gap-samples (1000)            gap-conditions (1.25,1.5,1.75,3.25,3.5,3.75)
//! generate-samples (1000)       classifier-hidden (64)  classifier-epochs (30)
//! mf-grid-extent (3)            mf-grid-size (50)       mf-condition (0)
//!
//! [run]
//! seed (0)    output-dir (runs/experiment)    name (experiment)
//! ```
//!
//! `likelihood = auto` resolves to Bernoulli for images and Gaussian
//! otherwise. Unknown sections or keys are rejected. Lines starting with `#`
//! and blank lines are ignored. When the `CVAE_OUTPUT_ROOT` environment
//! variable is set, relative output directories are resolved under it.

use crate::CliError;
use cvae_core::clvm::{Conditioning, Likelihood, PriorKind};
use cvae_core::data::{BinarizeMode, Interval, ToySpec};
use cvae_core::nn::Activation;
use cvae_core::Real;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Environment variable that re-roots relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "CVAE_OUTPUT_ROOT";

const SECTIONS: [&str; 5] = ["dataset", "model", "train", "eval", "run"];

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "dataset",
        &[
            "kind",
            "intervals",
            "sigma",
            "samples-per-interval",
            "n",
            "images-path",
            "labels-path",
            "binarize-threshold",
            "binarize-mode",
            "heldout",
        ],
    ),
    (
        "model",
        &[
            "latent-dim",
            "prior",
            "k",
            "conditioning",
            "likelihood",
            "enc-hidden",
            "dec-hidden",
            "prior-hidden",
            "activation",
        ],
    ),
    (
        "train",
        &[
            "epochs",
            "batch-size",
            "learning-rate",
            "adam-beta1",
            "adam-beta2",
            "adam-eps",
            "mc-samples",
            "annealing-steps",
        ],
    ),
    (
        "eval",
        &[
            "mc-samples",
            "metrics",
            "radii",
            "confidence-threshold",
            "variety-samples",
            "gap-samples",
            "gap-conditions",
            "generate-samples",
            "classifier-hidden",
            "classifier-epochs",
            "mf-grid-extent",
            "mf-grid-size",
            "mf-condition",
        ],
    ),
    ("run", &["seed", "output-dir", "name"]),
];

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetKind {
    Toy,
    FourGaussians,
    Images,
}

#[derive(Clone, Debug)]
pub struct DatasetCfg {
    pub kind: DatasetKind,
    pub toy: ToySpec<Real>,
    pub n: usize,
    pub images_path: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
    pub binarize_threshold: f64,
    pub binarize_mode: BinarizeMode,
    pub heldout: usize,
}

#[derive(Clone, Debug)]
pub struct ModelBlock {
    pub latent_dim: usize,
    pub prior: PriorKind,
    pub k: usize,
    pub conditioning: Conditioning,
    /// `None` means "auto": Bernoulli for images, Gaussian otherwise.
    pub likelihood: Option<Likelihood>,
    pub enc_hidden: Vec<usize>,
    pub dec_hidden: Vec<usize>,
    pub prior_hidden: Vec<usize>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct TrainBlock {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub mc_samples: usize,
    pub annealing_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Elbo,
    GapMass,
    NnProfile,
    Variety,
    MfGrid,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Elbo => "elbo",
            Metric::GapMass => "gap-mass",
            Metric::NnProfile => "nn-profile",
            Metric::Variety => "variety",
            Metric::MfGrid => "mf-grid",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalBlock {
    pub mc_samples: usize,
    pub metrics: Vec<Metric>,
    pub radii: Vec<f64>,
    pub confidence_threshold: f64,
    pub variety_samples: usize,
    pub gap_samples: usize,
    pub gap_conditions: Vec<f64>,
    pub generate_samples: usize,
    pub classifier_hidden: Vec<usize>,
    pub classifier_epochs: usize,
    pub mf_grid_extent: f64,
    pub mf_grid_size: usize,
    pub mf_condition: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunBlock {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub name: String,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub dataset: DatasetCfg,
    pub model: ModelBlock,
    pub train: TrainBlock,
    pub eval: EvalBlock,
    pub run: RunBlock,
}

/// Purpose-separated sub-seeds derived from the master seed by a counter mix.
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
    pub eval: u64,
    pub generate: u64,
    pub classifier: u64,
}

impl ExperimentConfig {
    pub fn seeds(&self) -> Seeds {
        let m = self.run.seed;
        Seeds {
            data: cvae_core::mix_seed(m, 1),
            init: cvae_core::mix_seed(m, 2),
            train: cvae_core::mix_seed(m, 3),
            eval: cvae_core::mix_seed(m, 4),
            generate: cvae_core::mix_seed(m, 5),
            classifier: cvae_core::mix_seed(m, 6),
        }
    }

    /// Output directory with the environment root override applied.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.run.output_dir.is_relative() => {
                Path::new(&root).join(&self.run.output_dir)
            }
            _ => self.run.output_dir.clone(),
        }
    }

    /// The likelihood after resolving `auto`.
    pub fn likelihood(&self) -> Likelihood {
        self.model.likelihood.unwrap_or(match self.dataset.kind {
            DatasetKind::Images => Likelihood::Bernoulli,
            _ => Likelihood::Gaussian,
        })
    }
}

/// A raw `key = value` with the position it came from, for error messages.
struct RawValue {
    value: String,
    origin: String,
}

/// Parse the file at `path` and apply `--set section.key=value` overrides.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
    let mut raw = parse_raw(&text, &path.display().to_string())?;
    apply_overrides(&mut raw, overrides)?;
    build_config(raw)
}

fn parse_raw(
    text: &str,
    origin: &str,
) -> Result<BTreeMap<(String, String), RawValue>, CliError> {
    let mut out = BTreeMap::new();
    let mut section: Option<String> = None;
    for (i, line_raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line_raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| {
                CliError::User(format!("{origin}:{lineno}: unterminated section header"))
            })?;
            if !SECTIONS.contains(&name) {
                return Err(CliError::User(format!(
                    "{origin}:{lineno}: unknown section [{name}] (expected one of {})",
                    SECTIONS.join(", ")
                )));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::User(format!("{origin}:{lineno}: expected `key = value` or a section header"))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let sec = section.clone().ok_or_else(|| {
            CliError::User(format!("{origin}:{lineno}: `{key}` appears before any [section]"))
        })?;
        check_known(&sec, &key, &format!("{origin}:{lineno}"))?;
        if out
            .insert((sec.clone(), key.clone()), RawValue { value, origin: format!("{origin}:{lineno}") })
            .is_some()
        {
            return Err(CliError::User(format!(
                "{origin}:{lineno}: duplicate key `{key}` in section [{sec}]"
            )));
        }
    }
    Ok(out)
}

fn check_known(section: &str, key: &str, origin: &str) -> Result<(), CliError> {
    let keys = KNOWN_KEYS.iter().find(|(s, _)| *s == section).map(|(_, k)| *k).unwrap();
    if !keys.contains(&key) {
        return Err(CliError::User(format!(
            "{origin}: unknown key `{key}` in section [{section}]"
        )));
    }
    Ok(())
}

fn apply_overrides(
    raw: &mut BTreeMap<(String, String), RawValue>,
    overrides: &[String],
) -> Result<(), CliError> {
    for item in overrides {
        let (path, value) = item.split_once('=').ok_or_else(|| {
            CliError::User(format!("--set {item}: expected section.key=value"))
        })?;
        let (section, key) = path.split_once('.').ok_or_else(|| {
            CliError::User(format!("--set {item}: expected section.key=value"))
        })?;
        if !SECTIONS.contains(&section) {
            return Err(CliError::User(format!(
                "--set {item}: unknown section `{section}`"
            )));
        }
        let origin = format!("--set {section}.{key}");
        check_known(section, key, &origin)?;
        raw.insert(
            (section.to_string(), key.to_string()),
            RawValue { value: value.trim().to_string(), origin },
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Typed extraction
// ---------------------------------------------------------------------------

struct Extractor {
    raw: BTreeMap<(String, String), RawValue>,
}

impl Extractor {
    fn take(&mut self, section: &str, key: &str) -> Option<RawValue> {
        self.raw.remove(&(section.to_string(), key.to_string()))
    }

    fn parse<T, F>(&mut self, section: &str, key: &str, default: T, f: F) -> Result<T, CliError>
    where
        F: FnOnce(&str, &str) -> Result<T, CliError>,
    {
        match self.take(section, key) {
            None => Ok(default),
            Some(rv) => f(&rv.value, &format!("{}: `{key}`", rv.origin)),
        }
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, what: &str, kind: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::User(format!("{what}: invalid {kind} `{value}`")))
}

fn parse_list<T: std::str::FromStr>(value: &str, what: &str, kind: &str) -> Result<Vec<T>, CliError> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|p| parse_num(p.trim(), what, kind))
        .collect()
}

fn parse_enum_value<T: std::str::FromStr>(value: &str, what: &str, options: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|_| CliError::User(format!("{what}: invalid value `{value}` (expected {options})")))
}

fn parse_intervals(value: &str, what: &str) -> Result<Vec<Interval<Real>>, CliError> {
    let mut out = Vec::new();
    for part in value.split('|') {
        let fields: Vec<&str> = part.trim().split(':').collect();
        if fields.len() != 3 {
            return Err(CliError::User(format!(
                "{what}: interval `{}` must be low:high:mode,mode,...",
                part.trim()
            )));
        }
        let low: f64 = parse_num(fields[0].trim(), what, "number")?;
        let high: f64 = parse_num(fields[1].trim(), what, "number")?;
        let modes: Vec<f64> = parse_list(fields[2], what, "number")?;
        if modes.is_empty() {
            return Err(CliError::User(format!("{what}: interval `{}` has no modes", part.trim())));
        }
        if low >= high {
            return Err(CliError::User(format!(
                "{what}: interval `{}` is empty (low ≥ high)",
                part.trim()
            )));
        }
        out.push(Interval { low, high, modes });
    }
    if out.windows(2).any(|w| w[0].high > w[1].low) {
        return Err(CliError::User(format!("{what}: intervals must be disjoint and ordered")));
    }
    Ok(out)
}

fn build_config(raw: BTreeMap<(String, String), RawValue>) -> Result<ExperimentConfig, CliError> {
    let mut ex = Extractor { raw };

    let kind = ex.parse("dataset", "kind", DatasetKind::Toy, |v, w| match v {
        "toy" => Ok(DatasetKind::Toy),
        "four-gaussians" => Ok(DatasetKind::FourGaussians),
        "images" => Ok(DatasetKind::Images),
        other => Err(CliError::User(format!(
            "{w}: invalid value `{other}` (expected toy, four-gaussians or images)"
        ))),
    })?;
    let default_toy = ToySpec::<Real>::default();
    let intervals = ex.parse("dataset", "intervals", default_toy.intervals.clone(), |v, w| {
        parse_intervals(v, w)
    })?;
    let sigma = ex.parse("dataset", "sigma", default_toy.sigma, |v, w| {
        let s: f64 = parse_num(v, w, "number")?;
        if s < 0.0 {
            return Err(CliError::User(format!("{w}: sigma must be ≥ 0")));
        }
        Ok(s)
    })?;
    let spi = ex.parse("dataset", "samples-per-interval", default_toy.samples_per_interval, |v, w| {
        parse_num(v, w, "integer")
    })?;
    let n = ex.parse("dataset", "n", 4000usize, |v, w| parse_num(v, w, "integer"))?;
    let images_path =
        ex.parse("dataset", "images-path", None, |v, _| Ok(Some(PathBuf::from(v))))?;
    let labels_path =
        ex.parse("dataset", "labels-path", None, |v, _| Ok(Some(PathBuf::from(v))))?;
    let binarize_threshold = ex.parse("dataset", "binarize-threshold", 0.5, |v, w| {
        let t: f64 = parse_num(v, w, "number")?;
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::User(format!("{w}: threshold must lie in [0, 1]")));
        }
        Ok(t)
    })?;
    let binarize_mode = ex.parse("dataset", "binarize-mode", BinarizeMode::Fixed, |v, w| match v {
        "fixed" => Ok(BinarizeMode::Fixed),
        "stochastic" => Ok(BinarizeMode::Stochastic),
        other => Err(CliError::User(format!(
            "{w}: invalid value `{other}` (expected fixed or stochastic)"
        ))),
    })?;
    let heldout = ex.parse("dataset", "heldout", 64usize, |v, w| parse_num(v, w, "integer"))?;
    let dataset = DatasetCfg {
        kind,
        toy: ToySpec::new(intervals, sigma, spi),
        n,
        images_path,
        labels_path,
        binarize_threshold,
        binarize_mode,
        heldout,
    };

    let model = ModelBlock {
        latent_dim: ex.parse("model", "latent-dim", 2, |v, w| parse_num(v, w, "integer"))?,
        prior: ex.parse("model", "prior", PriorKind::Cdv, |v, w| {
            parse_enum_value(v, w, "conditional-gaussian, cmog, cvamp or cdv")
        })?,
        k: ex.parse("model", "k", 8, |v, w| parse_num(v, w, "integer"))?,
        conditioning: ex.parse("model", "conditioning", Conditioning::LatentOnly, |v, w| {
            parse_enum_value(v, w, "latent-only or latent-and-condition")
        })?,
        likelihood: ex.parse("model", "likelihood", None, |v, w| {
            if v == "auto" {
                Ok(None)
            } else {
                parse_enum_value(v, w, "auto, gaussian or bernoulli").map(Some)
            }
        })?,
        enc_hidden: ex.parse("model", "enc-hidden", vec![64, 64], |v, w| {
            parse_list(v, w, "integer")
        })?,
        dec_hidden: ex.parse("model", "dec-hidden", vec![64, 64], |v, w| {
            parse_list(v, w, "integer")
        })?,
        prior_hidden: ex.parse("model", "prior-hidden", vec![64, 64], |v, w| {
            parse_list(v, w, "integer")
        })?,
        activation: ex.parse("model", "activation", Activation::Tanh, |v, w| {
            parse_enum_value(v, w, "tanh or softplus")
        })?,
    };

    let train = TrainBlock {
        epochs: ex.parse("train", "epochs", 200, |v, w| parse_num(v, w, "integer"))?,
        batch_size: ex.parse("train", "batch-size", 64, |v, w| {
            let b: usize = parse_num(v, w, "integer")?;
            if b == 0 {
                return Err(CliError::User(format!("{w}: batch size must be ≥ 1")));
            }
            Ok(b)
        })?,
        learning_rate: ex.parse("train", "learning-rate", 1e-3, |v, w| parse_num(v, w, "number"))?,
        adam_beta1: ex.parse("train", "adam-beta1", 0.9, |v, w| parse_num(v, w, "number"))?,
        adam_beta2: ex.parse("train", "adam-beta2", 0.999, |v, w| parse_num(v, w, "number"))?,
        adam_eps: ex.parse("train", "adam-eps", 1e-8, |v, w| parse_num(v, w, "number"))?,
        mc_samples: ex.parse("train", "mc-samples", 1, |v, w| {
            let s: usize = parse_num(v, w, "integer")?;
            if s == 0 {
                return Err(CliError::User(format!("{w}: need at least one sample")));
            }
            Ok(s)
        })?,
        annealing_steps: ex.parse("train", "annealing-steps", 0, |v, w| parse_num(v, w, "integer"))?,
    };

    let eval = EvalBlock {
        mc_samples: ex.parse("eval", "mc-samples", 100, |v, w| {
            let s: usize = parse_num(v, w, "integer")?;
            if s == 0 {
                return Err(CliError::User(format!("{w}: need at least one sample")));
            }
            Ok(s)
        })?,
        metrics: ex.parse("eval", "metrics", vec![Metric::Elbo], |v, w| {
            v.split(',')
                .map(|m| match m.trim() {
                    "elbo" => Ok(Metric::Elbo),
                    "gap-mass" => Ok(Metric::GapMass),
                    "nn-profile" => Ok(Metric::NnProfile),
                    "variety" => Ok(Metric::Variety),
                    "mf-grid" => Ok(Metric::MfGrid),
                    other => Err(CliError::User(format!(
                        "{w}: unknown metric `{other}` (expected elbo, gap-mass, nn-profile, variety or mf-grid)"
                    ))),
                })
                .collect()
        })?,
        radii: ex.parse(
            "eval",
            "radii",
            (1..=10).map(|r| r as f64).collect(),
            |v, w| {
                let r: Vec<f64> = parse_list(v, w, "number")?;
                if r.is_empty() || r[0] <= 0.0 || r.windows(2).any(|p| p[0] >= p[1]) {
                    return Err(CliError::User(format!(
                        "{w}: radii must be positive and strictly increasing"
                    )));
                }
                Ok(r)
            },
        )?,
        confidence_threshold: ex.parse("eval", "confidence-threshold", 0.9, |v, w| {
            let t: f64 = parse_num(v, w, "number")?;
            if !(0.0 < t && t < 1.0) {
                return Err(CliError::User(format!("{w}: threshold must lie in (0, 1)")));
            }
            Ok(t)
        })?,
        variety_samples: ex.parse("eval", "variety-samples", 10, |v, w| parse_num(v, w, "integer"))?,
        gap_samples: ex.parse("eval", "gap-samples", 1000, |v, w| parse_num(v, w, "integer"))?,
        gap_conditions: ex.parse(
            "eval",
            "gap-conditions",
            vec![1.25, 1.5, 1.75, 3.25, 3.5, 3.75],
            |v, w| parse_list(v, w, "number"),
        )?,
        generate_samples: ex.parse("eval", "generate-samples", 1000, |v, w| {
            parse_num(v, w, "integer")
        })?,
        classifier_hidden: ex.parse("eval", "classifier-hidden", vec![64], |v, w| {
            parse_list(v, w, "integer")
        })?,
        classifier_epochs: ex.parse("eval", "classifier-epochs", 30, |v, w| {
            parse_num(v, w, "integer")
        })?,
        mf_grid_extent: ex.parse("eval", "mf-grid-extent", 3.0, |v, w| parse_num(v, w, "number"))?,
        mf_grid_size: ex.parse("eval", "mf-grid-size", 50, |v, w| {
            let s: usize = parse_num(v, w, "integer")?;
            if s < 2 {
                return Err(CliError::User(format!("{w}: grid size must be ≥ 2")));
            }
            Ok(s)
        })?,
        mf_condition: ex.parse("eval", "mf-condition", vec![0.0], |v, w| {
            parse_list(v, w, "number")
        })?,
    };

    let run = RunBlock {
        seed: ex.parse("run", "seed", 0, |v, w| parse_num(v, w, "integer"))?,
        output_dir: ex.parse("run", "output-dir", PathBuf::from("runs/experiment"), |v, _| {
            Ok(PathBuf::from(v))
        })?,
        name: ex.parse("run", "name", "experiment".to_string(), |v, w| {
            if v.is_empty() || v.contains(['/', '\\']) {
                return Err(CliError::User(format!("{w}: name must be a plain file prefix")));
            }
            Ok(v.to_string())
        })?,
    };

    // Cross-field validation.
    if dataset.kind == DatasetKind::Images && dataset.images_path.is_none() {
        return Err(CliError::User(
            "dataset kind `images` requires `images-path`".to_string(),
        ));
    }
    if model.latent_dim == 0 || model.k == 0 {
        return Err(CliError::User("latent-dim and k must be ≥ 1".to_string()));
    }
    debug_assert!(ex.raw.is_empty(), "unconsumed config keys: {:?}", ex.raw.keys());

    Ok(ExperimentConfig { dataset, model, train, eval, run })
}
