//! The four subcommands: train, eval, generate, plot.

use crate::config::{self, DatasetKind, ExperimentConfig, Metric};
use crate::{svg, CliError};
use cvae_core::clvm::{self, ClvmModel, ElboEstimate, ModelCfg, TrainConfig};
use cvae_core::data::{self, DatasetSplit};
use cvae_core::eval::{self, ClassifierCfg};
use cvae_core::nn::AdamCfg;
use cvae_core::{mix_seed, Real};
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Training pairs plus, for image datasets, held-out evaluation conditions
/// and class labels.
pub struct LoadedData {
    pub train: DatasetSplit<Real>,
    pub train_labels: Option<Vec<u8>>,
    pub heldout: Option<DatasetSplit<Real>>,
    pub heldout_labels: Option<Vec<u8>>,
}

/// Materialize the dataset described by the config, deterministically in
/// the config's data seed.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<LoadedData, CliError> {
    let seed = cfg.seeds().data;
    let d = &cfg.dataset;
    match d.kind {
        DatasetKind::Toy => Ok(LoadedData {
            train: data::gen_toy_structured(&d.toy, seed),
            train_labels: None,
            heldout: None,
            heldout_labels: None,
        }),
        DatasetKind::FourGaussians => {
            if d.n == 0 || d.n % 4 != 0 {
                return Err(CliError::User(format!(
                    "four-gaussians needs `n` to be a positive multiple of 4, got {}",
                    d.n
                )));
            }
            Ok(LoadedData {
                train: data::gen_four_gaussians(d.n, seed),
                train_labels: None,
                heldout: None,
                heldout_labels: None,
            })
        }
        DatasetKind::Images => load_images(cfg, seed),
    }
}

fn load_images(cfg: &ExperimentConfig, seed: u64) -> Result<LoadedData, CliError> {
    let d = &cfg.dataset;
    let images_path = d.images_path.as_ref().unwrap();
    let raw = data::load_idx(images_path)
        .map_err(|e| CliError::User(format!("{}: {e}", images_path.display())))?;
    let (count, h, w) = raw.dim();
    if (h, w) != (28, 28) {
        return Err(CliError::User(format!(
            "{}: expected 28x28 images, found {h}x{w}",
            images_path.display()
        )));
    }
    let need = d.n + d.heldout;
    if d.n == 0 || count < need {
        return Err(CliError::User(format!(
            "{}: need n + heldout = {need} images, file has {count}",
            images_path.display()
        )));
    }
    let labels = match &d.labels_path {
        None => None,
        Some(p) => {
            let l = data::load_idx_labels(p)
                .map_err(|e| CliError::User(format!("{}: {e}", p.display())))?;
            if l.len() != count {
                return Err(CliError::User(format!(
                    "{}: {} labels for {count} images",
                    p.display(),
                    l.len()
                )));
            }
            Some(l)
        }
    };
    let binary = data::binarize(&raw, d.binarize_threshold, seed, d.binarize_mode);
    let train = data::split_images(&binary.slice(s![..d.n, .., ..]).to_owned(), "images-train");
    let heldout = (d.heldout > 0)
        .then(|| data::split_images(&binary.slice(s![d.n..need, .., ..]).to_owned(), "images-heldout"));
    let (train_labels, heldout_labels) = match labels {
        None => (None, None),
        Some(l) => (Some(l[..d.n].to_vec()), (d.heldout > 0).then(|| l[d.n..need].to_vec())),
    };
    Ok(LoadedData { train, train_labels, heldout, heldout_labels })
}

/// A freshly initialized model matching the config and dataset dimensions.
pub fn build_model(cfg: &ExperimentConfig, data: &LoadedData) -> ClvmModel<Real> {
    let mc = ModelCfg {
        nx: data.train.nx(),
        ny: data.train.ny(),
        nz: cfg.model.latent_dim,
        k: cfg.model.k,
        prior_kind: cfg.model.prior,
        likelihood: cfg.likelihood(),
        conditioning: cfg.model.conditioning,
        enc_hidden: cfg.model.enc_hidden.clone(),
        dec_hidden: cfg.model.dec_hidden.clone(),
        prior_hidden: cfg.model.prior_hidden.clone(),
        hidden_act: cfg.model.activation,
    };
    ClvmModel::init(&mc, cfg.seeds().init, Some(&data.train.targets))
}

fn train_config(cfg: &ExperimentConfig) -> TrainConfig<Real> {
    TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        adam: AdamCfg {
            lr: cfg.train.learning_rate,
            beta1: cfg.train.adam_beta1,
            beta2: cfg.train.adam_beta2,
            eps: cfg.train.adam_eps,
        },
        mc_samples: cfg.train.mc_samples,
        annealing_steps: cfg.train.annealing_steps,
        seed: cfg.seeds().train,
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::User(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::User(format!("cannot write {}: {e}", path.display())))
}

fn write_history(path: &Path, history: &[ElboEstimate<Real>]) -> Result<(), CliError> {
    let mut out = String::from("epoch,elbo,reconstruction,kl_term\n");
    for (i, e) in history.iter().enumerate() {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e}\n",
            i + 1,
            e.total,
            e.reconstruction,
            e.prior_minus_posterior
        ));
    }
    write_file(path, &out)
}

fn save_checkpoint(model: &ClvmModel<Real>, prefix: &Path) -> Result<(), CliError> {
    model
        .save_checkpoint(prefix)
        .map_err(|e| CliError::User(format!("cannot write checkpoint {}: {e}", prefix.display())))
}

pub fn cmd_train(config_path: &Path, overrides: &[String]) -> Result<(), CliError> {
    let cfg = config::load_config(config_path, overrides)?;
    let data = build_dataset(&cfg)?;
    let model = build_model(&cfg, &data);
    let out = cfg.output_dir();
    ensure_dir(&out)?;
    let ckpt = out.join("checkpoint");
    match clvm::train(model, &data.train, &train_config(&cfg)) {
        Ok((trained, history)) => {
            write_history(&out.join("history.csv"), &history)?;
            save_checkpoint(&trained, &ckpt)?;
            match history.last() {
                Some(e) => println!(
                    "trained {} epochs on {} pairs; final ELBO {:.4}",
                    history.len(),
                    data.train.len(),
                    e.total
                ),
                None => println!("trained 0 epochs; checkpoint holds the initialization"),
            }
            println!("wrote {}", out.join("history.csv").display());
            Ok(())
        }
        Err(e) => {
            // Keep the last epoch that completed cleanly so the run is not
            // a total loss.
            save_checkpoint(&e.last_good, &ckpt)?;
            Err(CliError::Numerical(format!(
                "{e}; checkpoint of the last good epoch kept at {}",
                ckpt.display()
            )))
        }
    }
}

fn load_model(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<(ClvmModel<Real>, PathBuf), CliError> {
    let prefix = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => cfg.output_dir().join("checkpoint"),
    };
    let model = ClvmModel::load_checkpoint(&prefix)
        .map_err(|e| CliError::User(format!("checkpoint {}: {e}", prefix.display())))?;
    Ok((model, prefix))
}

pub fn cmd_eval(
    config_path: &Path,
    checkpoint: Option<&Path>,
    overrides: &[String],
) -> Result<(), CliError> {
    let cfg = config::load_config(config_path, overrides)?;
    let (model, _) = load_model(&cfg, checkpoint)?;
    let data = build_dataset(&cfg)?;
    if model.nx != data.train.nx() || model.ny != data.train.ny() {
        return Err(CliError::User(format!(
            "checkpoint was trained on {}x{} pairs but the dataset has {}x{}",
            model.nx,
            model.ny,
            data.train.nx(),
            data.train.ny()
        )));
    }
    let out = cfg.output_dir();
    ensure_dir(&out)?;
    let mut done = Vec::new();
    for &metric in &cfg.eval.metrics {
        let path = out.join(format!("{}_{}.csv", cfg.run.name, metric.name().replace('-', "_")));
        match metric {
            Metric::Elbo => eval_elbo(&cfg, &model, &data, &path)?,
            Metric::GapMass => eval_gap_mass(&cfg, &model, &path)?,
            Metric::NnProfile => eval_nn_profile(&cfg, &model, &data, &path)?,
            Metric::Variety => eval_variety(&cfg, &model, &data, &path)?,
            Metric::MfGrid => eval_mf_grid(&cfg, &model, &path)?,
        }
        done.push(path);
    }
    for p in &done {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn eval_elbo(
    cfg: &ExperimentConfig,
    model: &ClvmModel<Real>,
    data: &LoadedData,
    path: &Path,
) -> Result<(), CliError> {
    let est = eval::estimate_elbo(model, &data.train, cfg.eval.mc_samples, cfg.seeds().eval)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    write_file(
        path,
        &format!(
            "total,reconstruction,kl_term\n{:.17e},{:.17e},{:.17e}\n",
            est.total, est.reconstruction, est.prior_minus_posterior
        ),
    )
}

fn eval_gap_mass(
    cfg: &ExperimentConfig,
    model: &ClvmModel<Real>,
    path: &Path,
) -> Result<(), CliError> {
    if cfg.dataset.kind != DatasetKind::Toy || model.ny != 1 {
        return Err(CliError::User(
            "metric gap-mass only applies to the toy dataset (scalar conditions and targets)"
                .to_string(),
        ));
    }
    let conds = &cfg.eval.gap_conditions;
    if conds.is_empty() {
        return Err(CliError::User("metric gap-mass: `gap-conditions` is empty".to_string()));
    }
    for &c in conds {
        let multimodal = cfg
            .dataset
            .toy
            .interval_of(c)
            .map(|iv| iv.modes.len() >= 2)
            .unwrap_or(false);
        if !multimodal {
            return Err(CliError::User(format!(
                "metric gap-mass: condition {c} does not lie in a multimodal interval"
            )));
        }
    }
    let arr = Array2::from_shape_vec((conds.len(), 1), conds.clone()).unwrap();
    let gap = eval::gap_mass(model, &arr, &cfg.dataset.toy, cfg.eval.gap_samples, cfg.seeds().eval);
    write_file(path, &format!("gap_mass\n{:.17e}\n", gap))
}

fn eval_nn_profile(
    cfg: &ExperimentConfig,
    model: &ClvmModel<Real>,
    data: &LoadedData,
    path: &Path,
) -> Result<(), CliError> {
    let profile = eval::component_nn_profile(model, &data.train, &cfg.eval.radii);
    profile
        .export_csv(path)
        .map_err(|e| CliError::User(format!("cannot write {}: {e}", path.display())))
}

/// Flatten each condition/target pair back into the full 28×28 image the
/// digit classifier sees.
fn assemble_full(t: ArrayView1<'_, Real>, c: ArrayView1<'_, Real>) -> Array1<Real> {
    data::assemble_image(t, c).flatten().to_owned()
}

fn eval_variety(
    cfg: &ExperimentConfig,
    model: &ClvmModel<Real>,
    data: &LoadedData,
    path: &Path,
) -> Result<(), CliError> {
    let (labels, heldout) = match (&data.train_labels, &data.heldout) {
        (Some(l), Some(h)) if !h.is_empty() => (l, h),
        _ => {
            return Err(CliError::User(
                "metric variety needs an images dataset with `labels-path` and `heldout` > 0"
                    .to_string(),
            ))
        }
    };
    let seeds = cfg.seeds();
    let n = data.train.len();
    let mut features = Array2::zeros((n, 784));
    for i in 0..n {
        features
            .row_mut(i)
            .assign(&assemble_full(data.train.targets.row(i), data.train.conditions.row(i)));
    }
    let clf_cfg = ClassifierCfg {
        epochs: cfg.eval.classifier_epochs,
        seed: seeds.classifier,
        ..ClassifierCfg::default()
    };
    let clf = eval::train_classifier(&features, labels, &cfg.eval.classifier_hidden, &clf_cfg);
    let report = eval::variety_score(
        model,
        &clf,
        &heldout.conditions,
        assemble_full,
        cfg.eval.variety_samples.max(1),
        cfg.eval.confidence_threshold,
        seeds.eval,
    );
    report
        .export_csv(path)
        .map_err(|e| CliError::User(format!("cannot write {}: {e}", path.display())))?;
    println!(
        "variety: median {} distinct classes over {} conditions (classifier holdout accuracy {:.3}, confident fraction {:.3})",
        report.median_count(),
        report.counts.len(),
        clf.holdout_accuracy,
        report.confident_fraction
    );
    Ok(())
}

fn eval_mf_grid(
    cfg: &ExperimentConfig,
    model: &ClvmModel<Real>,
    path: &Path,
) -> Result<(), CliError> {
    if model.nz != 2 {
        return Err(CliError::User(format!(
            "metric mf-grid needs a 2-D latent space, model has {} dimensions",
            model.nz
        )));
    }
    if cfg.eval.mf_condition.len() != model.nx {
        return Err(CliError::User(format!(
            "metric mf-grid: `mf-condition` has {} values but the model conditions on {}",
            cfg.eval.mf_condition.len(),
            model.nx
        )));
    }
    let x = Array1::from(cfg.eval.mf_condition.clone());
    let m = cfg.eval.mf_grid_size;
    let e = cfg.eval.mf_grid_extent;
    let coord = |i: usize| -e + 2.0 * e * i as f64 / (m - 1) as f64;
    let mut out = String::from("z1,z2,mf\n");
    for i in 0..m {
        for j in 0..m {
            let z = Array1::from(vec![coord(i), coord(j)]);
            let mf = eval::magnification_factor(model, z.view(), x.view())
                .map_err(|err| CliError::Numerical(err.to_string()))?;
            out.push_str(&format!("{:.8e},{:.8e},{:.8e}\n", z[0], z[1], mf));
        }
    }
    write_file(path, &out)
}

pub fn cmd_generate(
    config_path: &Path,
    checkpoint: Option<&Path>,
    overrides: &[String],
) -> Result<(), CliError> {
    let cfg = config::load_config(config_path, overrides)?;
    let (model, _) = load_model(&cfg, checkpoint)?;
    let data = build_dataset(&cfg)?;
    if model.nx != data.train.nx() || model.ny != data.train.ny() {
        return Err(CliError::User(
            "checkpoint dimensions do not match the configured dataset".to_string(),
        ));
    }
    let out = cfg.output_dir();
    ensure_dir(&out)?;
    let path = out.join(format!("{}_samples.csv", cfg.run.name));
    let n = cfg.eval.generate_samples.max(1);
    let seed = cfg.seeds().generate;

    let text = match cfg.dataset.kind {
        // One target per condition, cycling through the dataset conditions.
        DatasetKind::Toy => {
            let conds = &data.train.conditions;
            let mut s = String::from("x,y\n");
            for i in 0..n {
                let row = conds.row(i % conds.nrows());
                let y = eval::generate(&model, row, 1, mix_seed(seed, i as u64));
                s.push_str(&format!("{:.8e},{:.8e}\n", row[0], y[[0, 0]]));
            }
            s
        }
        // The condition is a constant; draw everything in one batch and
        // scatter the two target dimensions.
        DatasetKind::FourGaussians => {
            let y = eval::generate(&model, data.train.conditions.row(0), n, seed);
            let mut s = String::from("x,y\n");
            for r in y.axis_iter(Axis(0)) {
                s.push_str(&format!("{:.8e},{:.8e}\n", r[0], r[1]));
            }
            s
        }
        DatasetKind::Images => {
            let conds = data.heldout.as_ref().map(|h| &h.conditions).unwrap_or(&data.train.conditions);
            let mut s = String::from("condition_index");
            for j in 0..model.ny {
                s.push_str(&format!(",p{j}"));
            }
            s.push('\n');
            for i in 0..n {
                let idx = i % conds.nrows();
                let y = eval::generate(&model, conds.row(idx), 1, mix_seed(seed, i as u64));
                s.push_str(&idx.to_string());
                for v in y.row(0) {
                    s.push_str(&format!(",{v}"));
                }
                s.push('\n');
            }
            s
        }
    };
    write_file(&path, &text)?;
    println!("wrote {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

/// A parsed CSV: header names plus all-numeric rows.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .filter(|h| !h.trim().is_empty())
        .ok_or_else(|| CliError::User(format!("{}: empty file, expected a CSV header", path.display())))?
        .split(',')
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(header.len());
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| {
                CliError::User(format!("{}:{}: `{}` is not a number", path.display(), i + 2, cell.trim()))
            })?;
            row.push(v);
        }
        if row.len() != header.len() {
            return Err(CliError::User(format!(
                "{}:{}: {} fields in a {}-column file",
                path.display(),
                i + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn require_columns(table: &Table, path: &Path, kind: &str, expected: &[&str]) -> Result<(), CliError> {
    if table.header.len() != expected.len() {
        return Err(CliError::User(format!(
            "plot kind {kind} expects columns ({}); {} has {} column(s): {}",
            expected.join(", "),
            path.display(),
            table.header.len(),
            table.header.join(", ")
        )));
    }
    Ok(())
}

pub fn cmd_plot(kind: &str, inputs: &[PathBuf], output: &Path) -> Result<(), CliError> {
    if inputs.is_empty() {
        return Err(CliError::User("plot needs at least one --input".to_string()));
    }
    if kind != "box" && inputs.len() > 1 {
        return Err(CliError::User(format!(
            "plot kind {kind} takes exactly one --input, got {}",
            inputs.len()
        )));
    }
    let image = match kind {
        "scatter" => {
            let t = read_table(&inputs[0])?;
            require_columns(&t, &inputs[0], kind, &["x", "y"])?;
            let pts: Vec<(f64, f64)> = t.rows.iter().map(|r| (r[0], r[1])).collect();
            svg::scatter(&pts)
        }
        "line" => {
            let t = read_table(&inputs[0])?;
            require_columns(&t, &inputs[0], kind, &["x", "series", "y"])?;
            let rows: Vec<(f64, f64, f64)> = t.rows.iter().map(|r| (r[0], r[1], r[2])).collect();
            svg::line(&rows)
        }
        "box" => {
            let mut groups = Vec::new();
            for path in inputs {
                let t = read_table(path)?;
                require_columns(&t, path, kind, &["label", "value"])?;
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                groups.push((label, t.rows.iter().map(|r| r[1]).collect()));
            }
            svg::boxplot(&groups)
        }
        "latent-field" => {
            let t = read_table(&inputs[0])?;
            require_columns(&t, &inputs[0], kind, &["z1", "z2", "value"])?;
            let rows: Vec<(f64, f64, f64)> = t.rows.iter().map(|r| (r[0], r[1], r[2])).collect();
            svg::latent_field(&rows)?
        }
        other => {
            return Err(CliError::User(format!(
                "unknown plot kind `{other}` (expected scatter, line, box or latent-field)"
            )))
        }
    };
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let mut f = std::fs::File::create(output)
        .map_err(|e| CliError::User(format!("cannot write {}: {e}", output.display())))?;
    f.write_all(image.as_bytes())
        .map_err(|e| CliError::User(format!("cannot write {}: {e}", output.display())))?;
    println!("wrote {}", output.display());
    Ok(())
}
