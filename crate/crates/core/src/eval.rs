//! Everything measured on a trained model: evaluation ELBO, sampling,
//! magnification-factor fields, the classifier-based variety score, the
//! per-component nearest-neighbor profile, and inter-mode gap mass.

use crate::autodiff::{jacobian, AdError, Tape, Var};
use crate::clvm::{ClvmError, ClvmModel, Conditioning, ElboEstimate, Likelihood};
use crate::data::{DatasetSplit, ToySpec};
use crate::distributions::gaussian_sample;
use crate::nn::{adam_step, mlp_apply, mlp_forward, mlp_init, AdamCfg, AdamState, Activation, MlpSpec, ParameterSet};
use crate::mix_seed;
use crate::scalar::Scalar;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write as _;
use std::path::Path;

/// Failures specific to evaluation.
#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ClvmError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("Gram determinant {det:e} is negative beyond tolerance")]
    NegativeDeterminant { det: f64 },
}

// ---------------------------------------------------------------------------
// Evaluation ELBO and sampling
// ---------------------------------------------------------------------------

/// Mean ELBO over a dataset at β = 1 with `s` fresh standard-normal draws
/// per datum; deterministic under `seed`.
pub fn estimate_elbo<S: Scalar>(
    model: &ClvmModel<S>,
    data: &DatasetSplit<S>,
    s: usize,
    seed: u64,
) -> Result<ElboEstimate<S>, ClvmError> {
    model.dataset_elbo(data, s, seed, 256)
}

/// Draw `n` targets at condition `x`: pick a mixture component uniformly,
/// sample its Gaussian, decode, then sample the likelihood (observation
/// noise for Gaussian targets, per-pixel Bernoulli draws for binary ones).
pub fn generate<S: Scalar>(
    model: &ClvmModel<S>,
    x: ArrayView1<'_, S>,
    n: usize,
    seed: u64,
) -> Array2<S> {
    assert!(n >= 1, "need at least one sample");
    assert_eq!(x.len(), model.nx, "condition width");
    let comps = model.prior_components(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut zs = Array2::zeros((n, model.nz));
    for i in 0..n {
        let k = rng.random_range(0..comps.k());
        let noise: Array1<S> = Array1::from_shape_simple_fn(model.nz, || S::standard_normal(&mut rng));
        zs.row_mut(i).assign(&gaussian_sample(&comps.components[k], noise.view()));
    }

    let x_rep = matches!(model.conditioning, Conditioning::LatentAndCondition).then(|| {
        let mut m = Array2::zeros((n, model.nx));
        for i in 0..n {
            m.row_mut(i).assign(&x);
        }
        m
    });
    let mean = model.decode_mean_batch(&zs, x_rep.as_ref());

    match model.likelihood {
        Likelihood::Gaussian => {
            let std = model.y_logvar().expect("Gaussian model").mapv(|lv| (lv * S::c(0.5)).exp());
            let mut out = mean;
            for mut row in out.rows_mut() {
                for (v, &sd) in row.iter_mut().zip(&std) {
                    *v = *v + sd * S::standard_normal(&mut rng);
                }
            }
            out
        }
        Likelihood::Bernoulli => mean.mapv_into(|p| {
            if S::uniform_01(&mut rng) < p {
                S::one()
            } else {
                S::zero()
            }
        }),
    }
}

// ---------------------------------------------------------------------------
// Magnification factor
// ---------------------------------------------------------------------------

/// Determinant by LU factorization with partial pivoting.
fn lu_det<S: Scalar>(mut a: Array2<S>) -> S {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "determinant of a non-square matrix");
    let mut det = S::one();
    for col in 0..n {
        let mut p = col;
        for r in col + 1..n {
            if a[[r, col]].abs() > a[[p, col]].abs() {
                p = r;
            }
        }
        if a[[p, col]] == S::zero() {
            return S::zero();
        }
        if p != col {
            for c in 0..n {
                a.swap([p, c], [col, c]);
            }
            det = -det;
        }
        let pivot = a[[col, col]];
        det = det * pivot;
        for r in col + 1..n {
            let f = a[[r, col]] / pivot;
            for c in col..n {
                let v = a[[col, c]];
                a[[r, c]] -= f * v;
            }
        }
    }
    det
}

/// `sqrt(det(JᵀJ))` where J is the Jacobian of the decoder mean map with
/// respect to z at (z, x). Rounding may push the Gram determinant slightly
/// negative; within −1e-12 it is clamped to 0, beyond that it is an error.
pub fn magnification_factor<S: Scalar>(
    model: &ClvmModel<S>,
    z: ArrayView1<'_, S>,
    x: ArrayView1<'_, S>,
) -> Result<S, EvalError> {
    assert_eq!(z.len(), model.nz, "latent width");
    assert_eq!(x.len(), model.nx, "condition width");
    let z_row = z.insert_axis(Axis(0)).to_owned();
    let x_row = x.insert_axis(Axis(0)).to_owned();
    let dec: Vec<Array2<S>> = model.params.subset("dec").arrays().cloned().collect();

    let j = jacobian(&z_row, |t: &Tape<S>, zv: Var<'_, S>| {
        let leaves: Vec<Var<'_, S>> = dec.iter().map(|a| t.leaf(a.clone())).collect();
        let xv = matches!(model.conditioning, Conditioning::LatentAndCondition)
            .then(|| t.leaf(x_row.clone()));
        model.decoder_mean_rows(model.decode_rows(&leaves, zv, xv))
    })?;

    let det = lu_det(j.t().dot(&j));
    if det < S::c(-1e-12) {
        return Err(EvalError::NegativeDeterminant { det: det.to_f64_c() });
    }
    Ok(det.max(S::zero()).sqrt())
}

// ---------------------------------------------------------------------------
// Classifier and variety score
// ---------------------------------------------------------------------------

/// An MLP softmax classifier over flattened images (or any feature rows).
#[derive(Clone, Debug)]
pub struct Classifier<S: Scalar> {
    pub spec: MlpSpec,
    pub params: ParameterSet<S>,
    pub n_classes: usize,
    /// Accuracy on the held-out split measured after training.
    pub holdout_accuracy: f64,
}

impl<S: Scalar> Classifier<S> {
    pub fn logits(&self, features: &Array2<S>) -> Array2<S> {
        mlp_forward(&self.spec, &self.params, features)
    }

    /// Row-wise softmax probabilities, max-shifted for stability.
    pub fn predict_proba(&self, features: &Array2<S>) -> Array2<S> {
        let mut out = self.logits(features);
        for mut row in out.rows_mut() {
            let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
            row.mapv_inplace(|l| (l - m).exp());
            let z = row.sum();
            row.mapv_inplace(|e| e / z);
        }
        out
    }

    pub fn predict(&self, features: &Array2<S>) -> Vec<usize> {
        self.logits(features)
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            })
            .collect()
    }

    pub fn accuracy(&self, features: &Array2<S>, labels: &[u8]) -> f64 {
        assert_eq!(features.nrows(), labels.len());
        let hits = self
            .predict(features)
            .iter()
            .zip(labels)
            .filter(|(p, &l)| **p == l as usize)
            .count();
        hits as f64 / labels.len() as f64
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierCfg<S: Scalar> {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamCfg<S>,
    /// Fraction of the data held out for the reported accuracy.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl<S: Scalar> Default for ClassifierCfg<S> {
    fn default() -> Self {
        ClassifierCfg {
            epochs: 30,
            batch_size: 128,
            adam: AdamCfg::default(),
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Train a softmax MLP on (features, labels) by Adam ascent on the mean
/// log-probability of the true class. Deterministic under `cfg.seed`.
pub fn train_classifier<S: Scalar>(
    features: &Array2<S>,
    labels: &[u8],
    hidden: &[usize],
    cfg: &ClassifierCfg<S>,
) -> Classifier<S> {
    assert_eq!(features.nrows(), labels.len(), "feature/label count");
    assert!(!labels.is_empty(), "empty training set");
    assert!(labels.iter().all(|&l| l <= 9), "labels must lie in 0..=9");
    assert!((0.0..1.0).contains(&cfg.holdout_fraction));
    let n_classes = *labels.iter().max().unwrap() as usize + 1;
    assert!(n_classes >= 2, "need at least two classes");

    let mut sizes = vec![features.ncols()];
    sizes.extend_from_slice(hidden);
    sizes.push(n_classes);
    let spec = MlpSpec::new(sizes, Activation::Tanh);
    let mut params = mlp_init(&spec, mix_seed(cfg.seed, 0xC1A5));

    let n = features.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5417));
    order.shuffle(&mut rng);
    let held = ((n as f64) * cfg.holdout_fraction).round() as usize;
    let (eval_idx, train_idx) = order.split_at(held);

    let onehot = |idx: &[usize]| {
        let mut y = Array2::zeros((idx.len(), n_classes));
        for (r, &i) in idx.iter().enumerate() {
            y[[r, labels[i] as usize]] = S::one();
        }
        y
    };

    let mut train_order: Vec<usize> = train_idx.to_vec();
    let mut adam = AdamState::new(&params);
    for _ in 0..cfg.epochs {
        train_order.shuffle(&mut rng);
        for chunk in train_order.chunks(cfg.batch_size) {
            let x = features.select(Axis(0), chunk);
            let y = onehot(chunk);
            let inv_b = S::c(1.0 / chunk.len() as f64);

            let tape = Tape::new();
            let leaves = params.leaves(&tape);
            let xv = tape.leaf(x);
            let yv = tape.leaf(y);
            let logits = mlp_apply(&spec, &leaves, xv);
            let ll = (logits * yv).sum_rows() - logits.logsumexp_rows();
            let obj = ll.sum().scale(inv_b);
            let grads = tape.grad(obj, &leaves).expect("finite classifier gradients");
            adam_step(&mut adam, &mut params, &grads, &cfg.adam);
        }
    }

    let mut clf = Classifier { spec, params, n_classes, holdout_accuracy: f64::NAN };
    let acc_idx = if eval_idx.is_empty() { train_idx } else { eval_idx };
    let acc_feat = features.select(Axis(0), acc_idx);
    let acc_labels: Vec<u8> = acc_idx.iter().map(|&i| labels[i]).collect();
    clf.holdout_accuracy = clf.accuracy(&acc_feat, &acc_labels);
    clf
}

/// Distinct classes generated per condition, counting only confidently
/// classified samples.
#[derive(Clone, Debug, PartialEq)]
pub struct VarietyReport {
    /// One entry per condition: number of distinct confidently assigned
    /// classes among its generated samples.
    pub counts: Vec<usize>,
    /// Fraction of all generated samples whose top class probability
    /// reached the threshold.
    pub confident_fraction: f64,
}

impl VarietyReport {
    pub fn median_count(&self) -> f64 {
        assert!(!self.counts.is_empty());
        let mut sorted = self.counts.clone();
        sorted.sort_unstable();
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
        }
    }

    /// One row per condition.
    pub fn export_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "condition,distinct_classes")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{i},{c}")?;
        }
        Ok(())
    }
}

/// Top class and whether it clears the confidence threshold, per row.
fn confident_classes<S: Scalar>(proba: &Array2<S>, threshold: S) -> Vec<Option<usize>> {
    proba
        .rows()
        .into_iter()
        .map(|row| {
            let (arg, top) = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, &p)| (i, p))
                .unwrap();
            (top >= threshold).then_some(arg)
        })
        .collect()
}

/// For each condition: draw `n` targets, assemble each into a full feature
/// vector (e.g. a complete image) with `assemble`, classify, and count the
/// distinct classes among predictions with top probability ≥ `threshold`.
pub fn variety_score<S: Scalar>(
    model: &ClvmModel<S>,
    classifier: &Classifier<S>,
    conditions: &Array2<S>,
    assemble: impl Fn(ArrayView1<'_, S>, ArrayView1<'_, S>) -> Array1<S>,
    n: usize,
    threshold: S,
    seed: u64,
) -> VarietyReport {
    assert!(n >= 1);
    assert!(threshold > S::zero() && threshold < S::one(), "threshold must lie in (0, 1)");
    assert!(!conditions.is_empty(), "no conditions");
    let mut counts = Vec::with_capacity(conditions.nrows());
    let mut kept = 0usize;
    for (i, x) in conditions.rows().into_iter().enumerate() {
        let targets = generate(model, x, n, mix_seed(seed, i as u64));
        let mut features = Array2::zeros((n, classifier.spec.input_dim()));
        for (r, y) in targets.rows().into_iter().enumerate() {
            let full = assemble(y, x);
            assert_eq!(full.len(), classifier.spec.input_dim(), "assembled feature width");
            features.row_mut(r).assign(&full);
        }
        let proba = classifier.predict_proba(&features);
        let mut seen = [false; 10];
        for class in confident_classes(&proba, threshold).into_iter().flatten() {
            kept += 1;
            seen[class] = true;
        }
        counts.push(seen.iter().filter(|&&b| b).count());
    }
    let total = n * conditions.nrows();
    VarietyReport { counts, confident_fraction: kept as f64 / total as f64 }
}

// ---------------------------------------------------------------------------
// Nearest-neighbor profile
// ---------------------------------------------------------------------------

/// Cumulative neighbor counts around each mixture component's mean,
/// averaged over an evaluation subset of conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct NnProfile<S: Scalar> {
    pub radii: Vec<S>,
    /// `counts[k][i]`: mean number of encoded training points within
    /// `radii[i]` of component k's mean. Each value is an exact multiple of
    /// `1 / conditions_used` (integer counts averaged over conditions).
    pub counts: Vec<Vec<f64>>,
    pub conditions_used: usize,
    pub n_encoded: usize,
}

impl<S: Scalar> NnProfile<S> {
    /// One row per (radius, component) pair.
    pub fn export_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "radius,component,mean_neighbors")?;
        for (ri, r) in self.radii.iter().enumerate() {
            for (k, curve) in self.counts.iter().enumerate() {
                writeln!(w, "{:.9e},{k},{}", r.to_f64_c(), curve[ri])?;
            }
        }
        Ok(())
    }
}

/// How many conditions the neighbor profile averages over.
pub const NN_PROFILE_CONDITIONS: usize = 64;

/// Encode every training pair to its posterior mean, then count encoded
/// points within each radius of each prior component's mean, averaged over
/// an evenly spaced subset of up to [`NN_PROFILE_CONDITIONS`] conditions.
pub fn component_nn_profile<S: Scalar>(
    model: &ClvmModel<S>,
    data: &DatasetSplit<S>,
    radii: &[S],
) -> NnProfile<S> {
    assert!(!data.is_empty(), "empty dataset");
    assert!(!radii.is_empty(), "no radii");
    assert!(radii[0] > S::zero(), "radii must be positive");
    assert!(radii.windows(2).all(|w| w[0] < w[1]), "radii must increase");

    let n = data.len();
    let mut encoded = Array2::zeros((n, model.nz));
    let mut start = 0;
    while start < n {
        let end = (start + 1024).min(n);
        let (means, _) = model.encode_batch(
            &data.conditions.slice(s![start..end, ..]).to_owned(),
            &data.targets.slice(s![start..end, ..]).to_owned(),
        );
        encoded.slice_mut(s![start..end, ..]).assign(&means);
        start = end;
    }

    let subset: Vec<usize> = if n <= NN_PROFILE_CONDITIONS {
        (0..n).collect()
    } else {
        (0..NN_PROFILE_CONDITIONS).map(|i| i * n / NN_PROFILE_CONDITIONS).collect()
    };

    let r2: Vec<S> = radii.iter().map(|&r| r * r).collect();
    let mut sums = vec![vec![0u64; radii.len()]; model.k];
    for &ci in &subset {
        let comps = model.prior_components(data.conditions.row(ci));
        for (k, comp) in comps.components.iter().enumerate() {
            let mut hist = vec![0u64; radii.len() + 1];
            for point in encoded.rows() {
                let d2: S = point
                    .iter()
                    .zip(&comp.mean)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                let bucket = r2.partition_point(|&rr| rr < d2);
                hist[bucket] += 1;
            }
            let mut acc = 0u64;
            for (i, h) in hist[..radii.len()].iter().enumerate() {
                acc += h;
                sums[k][i] += acc;
            }
        }
    }

    let c = subset.len() as f64;
    NnProfile {
        radii: radii.to_vec(),
        counts: sums
            .into_iter()
            .map(|row| row.into_iter().map(|v| v as f64 / c).collect())
            .collect(),
        conditions_used: subset.len(),
        n_encoded: n,
    }
}

// ---------------------------------------------------------------------------
// Gap mass and clustering
// ---------------------------------------------------------------------------

/// Fraction of scalar samples farther than 4σ from every mode center.
pub fn gap_fraction<S: Scalar>(samples: &[S], centers: &[S], sigma: S) -> f64 {
    assert!(!samples.is_empty() && !centers.is_empty());
    let thr = S::c(4.0) * sigma;
    let in_gap = samples
        .iter()
        .filter(|&&y| centers.iter().all(|&c| (y - c).abs() > thr))
        .count();
    in_gap as f64 / samples.len() as f64
}

/// Generate `n` targets per condition and return the fraction landing in a
/// gap — farther than 4σ from every mode center of the condition's
/// interval. Every condition must lie in a multimodal interval.
pub fn gap_mass<S: Scalar>(
    model: &ClvmModel<S>,
    conditions: &Array2<S>,
    spec: &ToySpec<S>,
    n: usize,
    seed: u64,
) -> f64 {
    assert!(n >= 1);
    assert_eq!(conditions.ncols(), 1, "gap mass is defined for scalar conditions");
    assert_eq!(model.ny, 1, "gap mass is defined for scalar targets");
    let mut in_gap = 0usize;
    for (i, row) in conditions.rows().into_iter().enumerate() {
        let interval = spec
            .interval_of(row[0])
            .expect("condition outside every interval");
        assert!(
            interval.modes.len() >= 2,
            "gap mass needs a multimodal interval (condition {})",
            row[0]
        );
        let samples = generate(model, row, n, mix_seed(seed, i as u64));
        let flat: Vec<S> = samples.column(0).to_vec();
        let frac = gap_fraction(&flat, &interval.modes, spec.sigma);
        in_gap += (frac * n as f64).round() as usize;
    }
    in_gap as f64 / (n * conditions.nrows()) as f64
}

/// Number of single-linkage clusters: points closer than `threshold` (in
/// Euclidean distance) are linked, and linked groups merge transitively.
pub fn single_linkage_clusters<S: Scalar>(points: &Array2<S>, threshold: S) -> usize {
    let n = points.nrows();
    assert!(n >= 1, "no points");
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let t2 = threshold * threshold;
    for i in 0..n {
        for j in i + 1..n {
            let d2: S = points
                .row(i)
                .iter()
                .zip(points.row(j).iter())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            if d2 <= t2 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clvm::{ModelCfg, PriorKind};
    use crate::standard_normal_array;
    use ndarray::array;

    fn tiny_cfg(prior: PriorKind, likelihood: Likelihood) -> ModelCfg {
        ModelCfg {
            nx: 1,
            ny: 1,
            nz: 2,
            k: 3,
            prior_kind: prior,
            likelihood,
            conditioning: Conditioning::LatentOnly,
            enc_hidden: vec![4],
            dec_hidden: vec![4],
            prior_hidden: vec![4],
            hidden_act: Activation::Tanh,
        }
    }

    // -- determinant and magnification factor -------------------------------

    #[test]
    fn lu_determinant_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..=6 {
            for _ in 0..20 {
                let a = Array2::from_shape_simple_fn((n, n), || rng.random_range(-2.0_f64..2.0));
                let na = nalgebra::DMatrix::from_fn(n, n, |r, c| a[[r, c]]);
                let want = na.determinant();
                let got = lu_det(a);
                assert!(
                    (got - want).abs() <= 1e-10 * (1.0 + want.abs()),
                    "n={n}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn magnification_of_a_doubling_map_is_four() {
        let mut cfg = tiny_cfg(PriorKind::Cmog, Likelihood::Gaussian);
        cfg.ny = 2;
        cfg.dec_hidden = vec![];
        let mut m = ClvmModel::<f64>::init(&cfg, 0, None);
        let w0 = m.params.entries().iter().position(|(n, _)| n == "dec.w0").unwrap();
        m.params.arrays_mut().nth(w0).unwrap().assign(&array![[2.0, 0.0], [0.0, 2.0]]);
        let mf = magnification_factor(&m, array![0.3, -0.7].view(), array![0.0].view()).unwrap();
        assert!((mf - 4.0).abs() < 1e-12, "{mf}");
    }

    #[test]
    fn magnification_of_random_linear_decoders_matches_the_gram_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..10 {
            let (ny, nz) = (4, 2);
            let mut cfg = tiny_cfg(PriorKind::Cmog, Likelihood::Gaussian);
            cfg.ny = ny;
            cfg.nz = nz;
            cfg.dec_hidden = vec![];
            let mut m = ClvmModel::<f64>::init(&cfg, trial, None);
            // Shifted away from singularity to keep the matrix well-conditioned.
            let eye: Array2<f64> = Array2::eye(ny.max(nz));
            let a = Array2::from_shape_simple_fn((ny, nz), || rng.random_range(-1.0_f64..1.0))
                + &(eye.slice(s![0..ny, 0..nz]).to_owned() * 1.5);
            let w0 = m.params.entries().iter().position(|(n, _)| n == "dec.w0").unwrap();
            m.params.arrays_mut().nth(w0).unwrap().assign(&a);

            let mf = magnification_factor(&m, array![0.0, 0.0].view(), array![0.0].view()).unwrap();
            let na = nalgebra::DMatrix::from_fn(ny, nz, |r, c| a[[r, c]]);
            let want = (na.transpose() * na).determinant().max(0.0).sqrt();
            assert!((mf - want).abs() < 1e-8 * (1.0 + want), "{mf} vs {want}");
        }
    }

    #[test]
    fn magnification_of_a_constant_decoder_is_zero() {
        let mut m = ClvmModel::<f64>::init(&tiny_cfg(PriorKind::Cmog, Likelihood::Gaussian), 1, None);
        for (name, a) in m.params.entries().to_vec() {
            if name.starts_with("dec.") {
                let idx = m.params.entries().iter().position(|(n, _)| *n == name).unwrap();
                m.params.arrays_mut().nth(idx).unwrap().assign(&Array2::zeros(a.dim()));
            }
        }
        let mf = magnification_factor(&m, array![1.0, 1.0].view(), array![0.0].view()).unwrap();
        assert_eq!(mf, 0.0);
    }

    // -- generation ---------------------------------------------------------

    #[test]
    fn generation_is_deterministic_under_a_seed() {
        let m = ClvmModel::<f64>::init(&tiny_cfg(PriorKind::Cdv, Likelihood::Gaussian), 3, None);
        let a = generate(&m, array![0.5].view(), 16, 7);
        let b = generate(&m, array![0.5].view(), 16, 7);
        let c = generate(&m, array![0.5].view(), 16, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_prior_and_likelihood_pin_samples_to_the_decoded_mean() {
        // Conditional-Gaussian prior with log-variance −10, zero decoder,
        // observation log-variance −10: every sample sits at the constant
        // decoder mean up to ~e^{−5} noise.
        let mut cfg = tiny_cfg(PriorKind::ConditionalGaussian, Likelihood::Gaussian);
        cfg.prior_hidden = vec![];
        let mut m = ClvmModel::<f64>::init(&cfg, 0, None);
        for (name, a) in m.params.entries().to_vec() {
            let idx = m.params.entries().iter().position(|(n, _)| *n == name).unwrap();
            let arr = m.params.arrays_mut().nth(idx).unwrap();
            arr.assign(&Array2::zeros(a.dim()));
            if name == "prior.b0" {
                arr.slice_mut(s![0, m.nz..2 * m.nz]).fill(-10.0);
            }
            if name == "y_logvar" {
                arr.fill(-10.0);
            }
        }
        let samples = generate(&m, array![0.5].view(), 200, 11);
        let mean = m.decode_mean_batch(&Array2::zeros((1, m.nz)), None)[[0, 0]];
        for &v in samples.iter() {
            assert!((v - mean).abs() < 0.05, "{v} vs {mean}");
        }
    }

    #[test]
    #[should_panic(expected = "at least one sample")]
    fn zero_samples_are_rejected() {
        let m = ClvmModel::<f64>::init(&tiny_cfg(PriorKind::Cmog, Likelihood::Gaussian), 0, None);
        generate(&m, array![0.5].view(), 0, 0);
    }

    #[test]
    fn bernoulli_generation_yields_binary_targets() {
        let m = ClvmModel::<f64>::init(&tiny_cfg(PriorKind::Cvamp, Likelihood::Bernoulli), 5, None);
        let samples = generate(&m, array![0.2].view(), 64, 3);
        assert!(samples.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    // -- classifier ---------------------------------------------------------

    fn blob_data(n_per: usize, seed: u64) -> (Array2<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((2 * n_per, 2));
        let mut labels = Vec::with_capacity(2 * n_per);
        for i in 0..2 * n_per {
            let class = (i % 2) as u8;
            let c = if class == 0 { -3.0 } else { 3.0 };
            x[[i, 0]] = c + 0.3 * f64::standard_normal(&mut rng);
            x[[i, 1]] = c + 0.3 * f64::standard_normal(&mut rng);
            labels.push(class);
        }
        (x, labels)
    }

    #[test]
    fn classifier_separates_blobs_perfectly() {
        let (x, labels) = blob_data(100, 1);
        let cfg = ClassifierCfg { epochs: 40, batch_size: 32, seed: 2, ..ClassifierCfg::default() };
        let clf = train_classifier(&x, &labels, &[8], &cfg);
        assert_eq!(clf.holdout_accuracy, 1.0);
        assert_eq!(clf.accuracy(&x, &labels), 1.0);
    }

    #[test]
    fn classifier_training_is_deterministic() {
        let (x, labels) = blob_data(40, 3);
        let cfg = ClassifierCfg { epochs: 5, batch_size: 16, seed: 9, ..ClassifierCfg::default() };
        let a = train_classifier(&x, &labels, &[4], &cfg);
        let b = train_classifier(&x, &labels, &[4], &cfg);
        assert_eq!(a.params, b.params);
        assert_eq!(a.holdout_accuracy, b.holdout_accuracy);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_match_logit_order() {
        let (x, labels) = blob_data(30, 5);
        let cfg = ClassifierCfg { epochs: 3, batch_size: 16, seed: 1, ..ClassifierCfg::default() };
        let clf = train_classifier(&x, &labels, &[4], &cfg);
        let proba = clf.predict_proba(&x);
        for (row, pred) in proba.rows().into_iter().zip(clf.predict(&x)) {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-12);
            let arg = row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            assert_eq!(arg, pred);
        }
    }

    // -- variety ------------------------------------------------------------

    fn constant_class_classifier(input_dim: usize, class: usize, n_classes: usize) -> Classifier<f64> {
        let spec = MlpSpec::new(vec![input_dim, n_classes], Activation::Tanh);
        let mut params = ParameterSet::new();
        params.push("w0", Array2::zeros((n_classes, input_dim)));
        let mut b = Array2::zeros((1, n_classes));
        b[[0, class]] = 50.0;
        params.push("b0", b);
        Classifier { spec, params, n_classes, holdout_accuracy: 1.0 }
    }

    #[test]
    fn confident_class_extraction_counts_distinct_confident_rows() {
        let proba = array![
            [0.95, 0.03, 0.02],
            [0.50, 0.30, 0.20],
            [0.01, 0.98, 0.01],
            [0.96, 0.02, 0.02],
        ];
        let picked = confident_classes(&proba, 0.9);
        assert_eq!(picked, vec![Some(0), None, Some(1), Some(0)]);
    }

    #[test]
    fn constant_classifier_gives_count_one_everywhere() {
        let m = ClvmModel::<f64>::init(&tiny_cfg(PriorKind::Cmog, Likelihood::Gaussian), 2, None);
        let clf = constant_class_classifier(2, 1, 3);
        let conditions = array![[0.5], [1.5], [2.5]];
        let report = variety_score(
            &m,
            &clf,
            &conditions,
            |y, x| {
                let mut v = Array1::zeros(2);
                v[0] = y[0];
                v[1] = x[0];
                v
            },
            8,
            0.9,
            4,
        );
        assert_eq!(report.counts, vec![1, 1, 1]);
        assert_eq!(report.confident_fraction, 1.0);
        assert_eq!(report.median_count(), 1.0);
    }

    // -- nearest-neighbor profile -------------------------------------------

    fn zeroed_model(prior: PriorKind) -> ClvmModel<f64> {
        let mut m = ClvmModel::<f64>::init(&tiny_cfg(prior, Likelihood::Gaussian), 0, None);
        for a in m.params.arrays_mut() {
            a.fill(0.0);
        }
        m
    }

    #[test]
    fn lone_point_on_the_component_mean_counts_once_at_every_radius() {
        let m = zeroed_model(PriorKind::ConditionalGaussian);
        let data = DatasetSplit::new(array![[0.3]], array![[0.4]], "one");
        let profile = component_nn_profile(&m, &data, &[0.1, 1.0, 5.0]);
        assert_eq!(profile.counts, vec![vec![1.0, 1.0, 1.0]]);
        assert_eq!(profile.conditions_used, 1);
    }

    #[test]
    fn distant_component_sees_nothing() {
        let mut cfg = tiny_cfg(PriorKind::ConditionalGaussian, Likelihood::Gaussian);
        cfg.prior_hidden = vec![];
        let mut m = ClvmModel::<f64>::init(&cfg, 0, None);
        for a in m.params.arrays_mut() {
            a.fill(0.0);
        }
        let b0 = m.params.entries().iter().position(|(n, _)| n == "prior.b0").unwrap();
        m.params.arrays_mut().nth(b0).unwrap().slice_mut(s![0, 0..2]).fill(100.0);
        let data = DatasetSplit::new(array![[0.3]], array![[0.4]], "one");
        let profile = component_nn_profile(&m, &data, &[1.0, 10.0]);
        assert_eq!(profile.counts, vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn profile_matches_a_brute_force_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let conditions = Array2::from_shape_simple_fn((200, 1), || rng.random_range(0.0_f64..4.0));
        let targets = Array2::from_shape_simple_fn((200, 1), || rng.random_range(0.0_f64..1.0));
        let data = DatasetSplit::new(conditions, targets, "rand");
        let mut cfg = tiny_cfg(PriorKind::Cmog, Likelihood::Gaussian);
        cfg.k = 4;
        let m = ClvmModel::<f64>::init(&cfg, 6, None);
        let radii = [0.25_f64, 0.5, 1.0, 2.0, 4.0];
        let profile = component_nn_profile(&m, &data, &radii);

        // Brute force, via actual distances rather than squared ones.
        let (encoded, _) = m.encode_batch(&data.conditions, &data.targets);
        let subset: Vec<usize> = (0..NN_PROFILE_CONDITIONS).map(|i| i * 200 / NN_PROFILE_CONDITIONS).collect();
        let mut sums = vec![vec![0u64; radii.len()]; 4];
        for &ci in &subset {
            let comps = m.prior_components(data.conditions.row(ci));
            for (k, comp) in comps.components.iter().enumerate() {
                for (ri, &r) in radii.iter().enumerate() {
                    let c = encoded
                        .rows()
                        .into_iter()
                        .filter(|p| {
                            let d2: f64 = p.iter().zip(&comp.mean).map(|(&a, &b)| (a - b) * (a - b)).sum();
                            d2.sqrt() <= r
                        })
                        .count();
                    sums[k][ri] += c as u64;
                }
            }
        }
        for k in 0..4 {
            for ri in 0..radii.len() {
                let want = sums[k][ri] as f64 / subset.len() as f64;
                assert_eq!(profile.counts[k][ri], want, "component {k}, radius {ri}");
            }
        }
        assert_eq!(profile.n_encoded, 200);
    }

    #[test]
    fn profile_counts_never_decrease_with_radius() {
        let data = DatasetSplit::new(
            Array2::from_shape_simple_fn((50, 1), || 0.5),
            Array2::from_shape_fn((50, 1), |(i, _)| i as f64 / 50.0),
            "grid",
        );
        let m = ClvmModel::<f64>::init(&tiny_cfg(PriorKind::Cvamp, Likelihood::Gaussian), 8, Some(&data.targets));
        let profile = component_nn_profile(&m, &data, &[0.1, 0.3, 0.9, 2.7]);
        for curve in &profile.counts {
            assert!(curve.windows(2).all(|w| w[0] <= w[1]), "{curve:?}");
            assert!(*curve.last().unwrap() <= 50.0);
        }
    }

    // -- gap mass and clustering --------------------------------------------

    #[test]
    fn gap_fraction_of_samples_on_the_centers_is_zero() {
        let centers = [0.2, 0.5, 0.8];
        let samples: Vec<f64> = centers.iter().cycle().take(300).cloned().collect();
        assert_eq!(gap_fraction(&samples, &centers, 0.02), 0.0);
    }

    #[test]
    fn gap_fraction_of_uniform_samples_matches_the_interval_measure() {
        // Non-gap bands are [c ± 0.08] around each of three centers: total
        // measure 0.48, so the uniform in-gap fraction is 0.52.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..1.0)).collect();
        let frac = gap_fraction(&samples, &[0.2, 0.5, 0.8], 0.02);
        assert!((frac - 0.52).abs() < 0.05, "{frac}");
    }

    #[test]
    fn gap_mass_is_deterministic_and_bounded() {
        let m = ClvmModel::<f64>::init(&tiny_cfg(PriorKind::Cmog, Likelihood::Gaussian), 4, None);
        let spec = ToySpec::<f64>::default();
        let conditions = array![[1.2], [1.7], [3.5]];
        let a = gap_mass(&m, &conditions, &spec, 50, 13);
        let b = gap_mass(&m, &conditions, &spec, 50, 13);
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    #[should_panic(expected = "multimodal")]
    fn gap_mass_rejects_unimodal_conditions() {
        let m = ClvmModel::<f64>::init(&tiny_cfg(PriorKind::Cmog, Likelihood::Gaussian), 4, None);
        gap_mass(&m, &array![[0.5]], &ToySpec::<f64>::default(), 10, 0);
    }

    #[test]
    fn single_linkage_separates_far_groups_and_chains_near_ones() {
        let two_groups = array![[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]];
        assert_eq!(single_linkage_clusters(&two_groups, 0.5), 2);
        let chain = array![[0.0, 0.0], [0.4, 0.0], [0.8, 0.0], [1.2, 0.0]];
        assert_eq!(single_linkage_clusters(&chain, 0.5), 1);
        assert_eq!(single_linkage_clusters(&chain, 0.1), 4);
    }

    // -- evaluation ELBO ----------------------------------------------------

    #[test]
    fn dataset_of_one_matches_a_single_elbo_call_under_the_same_draws() {
        let m = ClvmModel::<f64>::init(&tiny_cfg(PriorKind::Cdv, Likelihood::Gaussian), 7, None);
        let data = DatasetSplit::new(array![[0.6]], array![[0.3]], "one");
        let est = estimate_elbo(&m, &data, 3, 42).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise: Vec<Array2<f64>> =
            (0..3).map(|_| standard_normal_array(&mut rng, (1, m.nz))).collect();
        let direct = m.elbo(&array![[0.6]], &array![[0.3]], &noise, 1.0).unwrap();
        assert_eq!(est.total, direct.total);
        assert_eq!(est.reconstruction, direct.reconstruction);
    }

    // -- CSV exports --------------------------------------------------------

    #[test]
    fn report_csv_files_have_one_row_per_entry() {
        let dir = tempfile::tempdir().unwrap();
        let report = VarietyReport { counts: vec![3, 1, 2], confident_fraction: 0.75 };
        let vp = dir.path().join("variety.csv");
        report.export_csv(&vp).unwrap();
        let text = std::fs::read_to_string(&vp).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("condition,distinct_classes\n"));

        let profile = NnProfile {
            radii: vec![0.5_f64, 1.0],
            counts: vec![vec![1.0, 2.0], vec![0.0, 3.0]],
            conditions_used: 1,
            n_encoded: 3,
        };
        let np = dir.path().join("profile.csv");
        profile.export_csv(&np).unwrap();
        let text = std::fs::read_to_string(&np).unwrap();
        assert_eq!(text.lines().count(), 5);
    }
}
