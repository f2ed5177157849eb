//! The conditional latent-variable model: encoder, decoder, pluggable prior,
//! the single-/multi-sample ELBO estimator with KL annealing, and training.
//!
//! The objective per datum is
//! `E_q[ log p(y|z) + β·( log p_prior(z|x) − log q(z|x,y) ) ]`,
//! estimated with reparameterized draws. Gradients flow through *all*
//! parameters including the prior pathway — for the posterior-based priors
//! (conditional VampPrior, CDV) that means encoder and decoder receive
//! gradient from the prior term too; there is no stop-gradient anywhere.

mod checkpoint;
mod train;

pub use train::{train, TrainConfig, TrainError};

use crate::autodiff::{AdError, Tape, Var};
use crate::data::DatasetSplit;
use crate::distributions::{
    bernoulli_log_prob_rows, gaussian_log_prob_rows, gaussian_rsample, kl_diag_rows,
    mixture_log_prob_rows, GaussianParams, MixtureParams,
};
use crate::nn::{mlp_apply, mlp_forward, mlp_init, Activation, MlpSpec, NnError, ParameterSet};
use crate::scalar::{sigmoid, Scalar};
use crate::{mix_seed, standard_normal_array};
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::ops::Range;

/// Log-variance clamp applied to every Gaussian head.
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Model-level failures: non-finite objectives and checkpoint I/O.
#[derive(Debug, thiserror::Error)]
pub enum ClvmError {
    #[error(
        "non-finite ELBO (reconstruction {reconstruction}, \
         prior-minus-posterior {prior_minus_posterior}): {source}"
    )]
    NumericalFailure {
        reconstruction: f64,
        prior_minus_posterior: f64,
        source: AdError,
    },
    #[error(transparent)]
    Params(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
}

/// The four prior strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorKind {
    /// Single Gaussian `p(z|x)` from network heads; the vanilla-CVAE prior.
    ConditionalGaussian,
    /// Uniform mixture whose K means/log-variances are direct network heads.
    Cmog,
    /// Uniform mixture of posteriors at K learned pseudo targets `ỹ_k`.
    Cvamp,
    /// Decoder-based Vamp: pseudo latents `z̃_k(x)` from a network, decoded
    /// to pseudo targets, then pushed through the posterior.
    Cdv,
}

/// Observation model for the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Likelihood {
    /// Diagonal Gaussian with a learned, input-independent log variance per
    /// output dimension.
    Gaussian,
    /// Independent Bernoullis on logits (binary targets).
    Bernoulli,
}

/// What the decoder sees: `p(y|z)` (the latent-only factorization) or the
/// classic `p(y|x,z)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conditioning {
    LatentOnly,
    LatentAndCondition,
}

macro_rules! str_enum {
    ($ty:ty { $($variant:path => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self { $($variant => write!(f, $text)),+ }
            }
        }
        impl std::str::FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(format!(concat!("unknown ", stringify!($ty), " `{}`"), other)),
                }
            }
        }
    };
}

str_enum!(PriorKind {
    PriorKind::ConditionalGaussian => "conditional-gaussian",
    PriorKind::Cmog => "cmog",
    PriorKind::Cvamp => "cvamp",
    PriorKind::Cdv => "cdv",
});
str_enum!(Likelihood {
    Likelihood::Gaussian => "gaussian",
    Likelihood::Bernoulli => "bernoulli",
});
str_enum!(Conditioning {
    Conditioning::LatentOnly => "latent-only",
    Conditioning::LatentAndCondition => "latent-and-condition",
});

/// Everything needed to build a fresh model.
#[derive(Clone, Debug)]
pub struct ModelCfg {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Mixture components; forced to 1 for the conditional-Gaussian prior.
    pub k: usize,
    pub prior_kind: PriorKind,
    pub likelihood: Likelihood,
    pub conditioning: Conditioning,
    pub enc_hidden: Vec<usize>,
    pub dec_hidden: Vec<usize>,
    pub prior_hidden: Vec<usize>,
    pub hidden_act: Activation,
}

/// Encoder + decoder + prior + dims; the trainable unit.
#[derive(Clone, Debug)]
pub struct ClvmModel<S: Scalar> {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub k: usize,
    pub prior_kind: PriorKind,
    pub likelihood: Likelihood,
    pub conditioning: Conditioning,
    pub enc_spec: MlpSpec,
    pub dec_spec: MlpSpec,
    /// `None` for the conditional VampPrior (its free parameters are the
    /// pseudo targets, not a network).
    pub prior_spec: Option<MlpSpec>,
    /// All trainable arrays, in fixed order: `enc.*`, `dec.*`, `y_logvar`
    /// (Gaussian likelihood only), then `prior.*`.
    pub params: ParameterSet<S>,
}

/// Entry ranges of the merged parameter set.
pub(crate) struct ParamRanges {
    pub enc: Range<usize>,
    pub dec: Range<usize>,
    pub y_logvar: Option<usize>,
    pub prior: Range<usize>,
}

/// One ELBO estimate in nats per datum. `total` is exactly
/// `reconstruction + prior_minus_posterior`; the prior-minus-posterior term
/// carries its annealing factor β already.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboEstimate<S: Scalar> {
    pub total: S,
    pub reconstruction: S,
    pub prior_minus_posterior: S,
}

/// Tape nodes of one ELBO evaluation; all three are 1×1 per-datum means.
pub struct ElboVars<'t, S: Scalar> {
    pub total: Var<'t, S>,
    pub reconstruction: Var<'t, S>,
    pub prior_minus_posterior: Var<'t, S>,
}

impl<'t, S: Scalar> ElboVars<'t, S> {
    pub fn estimate(&self) -> ElboEstimate<S> {
        ElboEstimate {
            total: self.total.scalar_value(),
            reconstruction: self.reconstruction.scalar_value(),
            prior_minus_posterior: self.prior_minus_posterior.scalar_value(),
        }
    }
}

fn repeat_rows_arr<S: Scalar>(a: &Array2<S>, k: usize) -> Array2<S> {
    let mut out = Array2::zeros((a.nrows() * k, a.ncols()));
    for (b, row) in a.rows().into_iter().enumerate() {
        for j in 0..k {
            out.row_mut(b * k + j).assign(&row);
        }
    }
    out
}

impl<S: Scalar> ClvmModel<S> {
    /// Build and initialize a model. For the conditional VampPrior,
    /// `train_targets` seeds the pseudo targets with random training rows
    /// (small random values when absent). For the CDV prior the pseudo-latent
    /// head's final layer is scaled ×0.01 so the initial `z̃_k` cluster near
    /// the posterior bulk.
    pub fn init(cfg: &ModelCfg, seed: u64, train_targets: Option<&Array2<S>>) -> Self {
        let k = if cfg.prior_kind == PriorKind::ConditionalGaussian { 1 } else { cfg.k };
        assert!(k >= 1);
        let sizes = |input: usize, hidden: &[usize], output: usize| {
            let mut v = Vec::with_capacity(hidden.len() + 2);
            v.push(input);
            v.extend_from_slice(hidden);
            v.push(output);
            v
        };
        let enc_spec = MlpSpec::new(sizes(cfg.nx + cfg.ny, &cfg.enc_hidden, 2 * cfg.nz), cfg.hidden_act);
        let dec_in = match cfg.conditioning {
            Conditioning::LatentOnly => cfg.nz,
            Conditioning::LatentAndCondition => cfg.nz + cfg.nx,
        };
        let dec_spec = MlpSpec::new(sizes(dec_in, &cfg.dec_hidden, cfg.ny), cfg.hidden_act);
        let prior_spec = match cfg.prior_kind {
            PriorKind::ConditionalGaussian => {
                Some(MlpSpec::new(sizes(cfg.nx, &cfg.prior_hidden, 2 * cfg.nz), cfg.hidden_act))
            }
            PriorKind::Cmog => {
                Some(MlpSpec::new(sizes(cfg.nx, &cfg.prior_hidden, 2 * k * cfg.nz), cfg.hidden_act))
            }
            PriorKind::Cdv => {
                Some(MlpSpec::new(sizes(cfg.nx, &cfg.prior_hidden, k * cfg.nz), cfg.hidden_act))
            }
            PriorKind::Cvamp => None,
        };

        let mut params = ParameterSet::new();
        params.merge("enc", mlp_init(&enc_spec, mix_seed(seed, 0)));
        params.merge("dec", mlp_init(&dec_spec, mix_seed(seed, 1)));
        if cfg.likelihood == Likelihood::Gaussian {
            params.push("y_logvar", Array2::zeros((1, cfg.ny)));
        }
        match cfg.prior_kind {
            PriorKind::Cvamp => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 3));
                let pseudo = match train_targets {
                    Some(t) => {
                        assert_eq!(t.ncols(), cfg.ny, "pseudo-target width");
                        let mut p = Array2::zeros((k, cfg.ny));
                        for ki in 0..k {
                            p.row_mut(ki).assign(&t.row(rng.random_range(0..t.nrows())));
                        }
                        p
                    }
                    None => standard_normal_array::<S, _>(&mut rng, (k, cfg.ny))
                        .mapv(|v| v * S::c(0.01)),
                };
                params.push("prior.pseudo_targets", pseudo);
            }
            _ => {
                let spec = prior_spec.as_ref().unwrap();
                let mut p = mlp_init(spec, mix_seed(seed, 2));
                if cfg.prior_kind == PriorKind::Cdv {
                    let last = format!("w{}", spec.sizes.len() - 2);
                    let idx = p
                        .entries()
                        .iter()
                        .position(|(n, _)| *n == last)
                        .expect("final layer entry");
                    p.arrays_mut().nth(idx).unwrap().mapv_inplace(|v| v * S::c(0.01));
                }
                params.merge("prior", p);
            }
        }

        ClvmModel {
            nx: cfg.nx,
            ny: cfg.ny,
            nz: cfg.nz,
            k,
            prior_kind: cfg.prior_kind,
            likelihood: cfg.likelihood,
            conditioning: cfg.conditioning,
            enc_spec,
            dec_spec,
            prior_spec,
            params,
        }
    }

    pub(crate) fn ranges(&self) -> ParamRanges {
        let ec = self.enc_spec.param_count();
        let dc = self.dec_spec.param_count();
        let mut i = ec + dc;
        let y_logvar = (self.likelihood == Likelihood::Gaussian).then(|| {
            let v = i;
            i += 1;
            v
        });
        ParamRanges { enc: 0..ec, dec: ec..ec + dc, y_logvar, prior: i..self.params.len() }
    }

    fn clamp_s() -> (S, S) {
        (S::c(-LOGVAR_CLAMP), S::c(LOGVAR_CLAMP))
    }

    // -- tape-side pieces ---------------------------------------------------

    /// Encoder on the tape: input (x‖y) rows, output split into mean and
    /// clamped log variance.
    fn encode_rows<'t>(&self, enc: &[Var<'t, S>], xy: Var<'t, S>) -> (Var<'t, S>, Var<'t, S>) {
        let out = mlp_apply(&self.enc_spec, enc, xy);
        let (lo, hi) = Self::clamp_s();
        (out.slice_cols(0, self.nz), out.slice_cols(self.nz, 2 * self.nz).clamp(lo, hi))
    }

    /// Decoder on the tape; `x_rep` is required (and used) only in
    /// latent-and-condition mode.
    pub(crate) fn decode_rows<'t>(&self, dec: &[Var<'t, S>], z: Var<'t, S>, x_rep: Option<Var<'t, S>>) -> Var<'t, S> {
        let input = match self.conditioning {
            Conditioning::LatentOnly => z,
            Conditioning::LatentAndCondition => z.concat_cols(x_rep.expect("decoder needs x")),
        };
        mlp_apply(&self.dec_spec, dec, input)
    }

    pub(crate) fn decoder_mean_rows<'t>(&self, raw: Var<'t, S>) -> Var<'t, S> {
        match self.likelihood {
            Likelihood::Gaussian => raw,
            Likelihood::Bernoulli => raw.sigmoid(),
        }
    }

    /// Mixture component parameters for a batch of conditions, as
    /// (B·K)×N_z arrays with datum b's components at rows b·K..(b+1)·K.
    fn prior_rows<'t>(
        &self,
        tape: &'t Tape<S>,
        leaves: &[Var<'t, S>],
        x: &Array2<S>,
    ) -> (Var<'t, S>, Var<'t, S>) {
        let r = self.ranges();
        let b = x.nrows();
        let (lo, hi) = Self::clamp_s();
        match self.prior_kind {
            PriorKind::ConditionalGaussian | PriorKind::Cmog => {
                let xv = tape.leaf(x.clone());
                let out = mlp_apply(self.prior_spec.as_ref().unwrap(), &leaves[r.prior], xv);
                let kn = self.k * self.nz;
                let means = out.slice_cols(0, kn).reshape(b * self.k, self.nz);
                let logvars = out.slice_cols(kn, 2 * kn).reshape(b * self.k, self.nz).clamp(lo, hi);
                (means, logvars)
            }
            PriorKind::Cvamp => {
                let x_rep = tape.leaf(repeat_rows_arr(x, self.k));
                let pseudo = leaves[r.prior.start];
                let y_rep = pseudo.tile_rows(b);
                self.encode_rows(&leaves[r.enc], x_rep.concat_cols(y_rep))
            }
            PriorKind::Cdv => {
                let xv = tape.leaf(x.clone());
                let zt = mlp_apply(self.prior_spec.as_ref().unwrap(), &leaves[r.prior], xv)
                    .reshape(b * self.k, self.nz);
                let x_rep_arr = repeat_rows_arr(x, self.k);
                let x_for_dec = match self.conditioning {
                    Conditioning::LatentOnly => None,
                    Conditioning::LatentAndCondition => Some(tape.leaf(x_rep_arr.clone())),
                };
                let mu = self.decoder_mean_rows(self.decode_rows(&leaves[r.dec], zt, x_for_dec));
                let x_rep = tape.leaf(x_rep_arr);
                self.encode_rows(&leaves[r.enc], x_rep.concat_cols(mu))
            }
        }
    }

    /// Build the ELBO estimator on a tape. `noise` holds one B×N_z array of
    /// standard-normal draws per Monte-Carlo sample; `beta ∈ [0, 1]` scales
    /// the prior-minus-posterior term (KL annealing). The conditional-
    /// Gaussian prior uses the closed-form KL instead of the Monte-Carlo
    /// prior term.
    pub fn elbo_parts<'t>(
        &self,
        tape: &'t Tape<S>,
        leaves: &[Var<'t, S>],
        x: &Array2<S>,
        y: &Array2<S>,
        noise: &[Array2<S>],
        beta: S,
    ) -> ElboVars<'t, S> {
        let b = x.nrows();
        assert!(b > 0, "empty batch");
        assert_eq!(y.nrows(), b);
        assert_eq!(x.ncols(), self.nx, "condition width");
        assert_eq!(y.ncols(), self.ny, "target width");
        assert!(!noise.is_empty(), "need at least one Monte-Carlo sample");
        assert!(beta >= S::zero() && beta <= S::one(), "beta must lie in [0, 1]");
        let s_count = noise.len();
        for eps in noise {
            assert_eq!(eps.dim(), (b, self.nz), "noise shape");
        }
        let r = self.ranges();

        let xv = tape.leaf(x.clone());
        let yv = tape.leaf(y.clone());
        let (qm, qlv) = self.encode_rows(&leaves[r.enc.clone()], xv.concat_cols(yv));

        // Component parameters are z-independent; build them once and share
        // the subgraph across samples.
        let mixture = (self.prior_kind != PriorKind::ConditionalGaussian)
            .then(|| self.prior_rows(tape, leaves, x));

        let mut recon_acc: Option<Var<'t, S>> = None;
        let mut pm_acc: Option<Var<'t, S>> = None;
        let add_to = |slot: &mut Option<Var<'t, S>>, v: Var<'t, S>| {
            *slot = Some(match slot.take() {
                Some(acc) => acc + v,
                None => v,
            });
        };

        for eps in noise {
            let z = gaussian_rsample(qm, qlv, tape.leaf(eps.clone()));
            let raw = self.decode_rows(
                &leaves[r.dec.clone()],
                z,
                matches!(self.conditioning, Conditioning::LatentAndCondition).then_some(xv),
            );
            let loglik = match self.likelihood {
                Likelihood::Bernoulli => bernoulli_log_prob_rows(raw, yv),
                Likelihood::Gaussian => {
                    let (lo, hi) = Self::clamp_s();
                    let ylv = leaves[r.y_logvar.unwrap()].clamp(lo, hi).broadcast_rows(b);
                    gaussian_log_prob_rows(raw, ylv, yv)
                }
            };
            add_to(&mut recon_acc, loglik.sum());
            if let Some((cm, clv)) = mixture {
                let lp_prior = mixture_log_prob_rows(cm, clv, z, self.k);
                let lp_q = gaussian_log_prob_rows(qm, qlv, z);
                add_to(&mut pm_acc, (lp_prior - lp_q).sum());
            }
        }

        let per = S::c(1.0 / (s_count as f64 * b as f64));
        let reconstruction = recon_acc.unwrap().scale(per);
        let pm_raw = match pm_acc {
            Some(acc) => acc.scale(per),
            None => {
                // Closed-form KL against the conditional-Gaussian prior.
                let (pm, plv) = self.prior_rows(tape, leaves, x);
                kl_diag_rows(qm, qlv, pm, plv).sum().scale(S::c(-1.0 / b as f64))
            }
        };
        let prior_minus_posterior = pm_raw.scale(beta);
        let total = reconstruction + prior_minus_posterior;
        ElboVars { total, reconstruction, prior_minus_posterior }
    }

    fn wrap_failure<'t>(&self, tape: &Tape<S>, vars: &ElboVars<'t, S>) -> Result<(), ClvmError> {
        if let Some((node, op)) = tape.first_non_finite() {
            return Err(ClvmError::NumericalFailure {
                reconstruction: vars.reconstruction.scalar_value().to_f64_c(),
                prior_minus_posterior: vars.prior_minus_posterior.scalar_value().to_f64_c(),
                source: AdError::NonFinite { node, op },
            });
        }
        Ok(())
    }

    /// Forward-only ELBO estimate.
    pub fn elbo(
        &self,
        x: &Array2<S>,
        y: &Array2<S>,
        noise: &[Array2<S>],
        beta: S,
    ) -> Result<ElboEstimate<S>, ClvmError> {
        let tape = Tape::new();
        let leaves = self.params.leaves(&tape);
        let vars = self.elbo_parts(&tape, &leaves, x, y, noise, beta);
        self.wrap_failure(&tape, &vars)?;
        Ok(vars.estimate())
    }

    /// ELBO estimate plus gradients with respect to every parameter array.
    pub fn elbo_grad(
        &self,
        x: &Array2<S>,
        y: &Array2<S>,
        noise: &[Array2<S>],
        beta: S,
    ) -> Result<(ElboEstimate<S>, Vec<Array2<S>>), ClvmError> {
        let tape = Tape::new();
        let leaves = self.params.leaves(&tape);
        let vars = self.elbo_parts(&tape, &leaves, x, y, noise, beta);
        self.wrap_failure(&tape, &vars)?;
        let grads = tape.grad(vars.total, &leaves).map_err(|source| ClvmError::NumericalFailure {
            reconstruction: vars.reconstruction.scalar_value().to_f64_c(),
            prior_minus_posterior: vars.prior_minus_posterior.scalar_value().to_f64_c(),
            source,
        })?;
        Ok((vars.estimate(), grads))
    }

    /// Mean ELBO over a dataset at β = 1 with `s` fresh draws per datum,
    /// batched to bound memory; deterministic under `seed`.
    pub fn dataset_elbo(
        &self,
        data: &DatasetSplit<S>,
        s: usize,
        seed: u64,
        batch_size: usize,
    ) -> Result<ElboEstimate<S>, ClvmError> {
        assert!(s >= 1 && batch_size >= 1);
        assert!(!data.is_empty(), "empty dataset");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = data.len();
        let mut recon = S::zero();
        let mut pm = S::zero();
        let mut start = 0;
        while start < n {
            let end = (start + batch_size).min(n);
            let x = data.conditions.slice(s![start..end, ..]).to_owned();
            let y = data.targets.slice(s![start..end, ..]).to_owned();
            let noise: Vec<Array2<S>> = (0..s)
                .map(|_| standard_normal_array(&mut rng, (end - start, self.nz)))
                .collect();
            let est = self.elbo(&x, &y, &noise, S::one())?;
            let w = S::c((end - start) as f64);
            recon = recon + est.reconstruction * w;
            pm = pm + est.prior_minus_posterior * w;
            start = end;
        }
        let inv = S::c(1.0 / n as f64);
        let reconstruction = recon * inv;
        let prior_minus_posterior = pm * inv;
        Ok(ElboEstimate {
            total: reconstruction + prior_minus_posterior,
            reconstruction,
            prior_minus_posterior,
        })
    }

    // -- plain-array pieces (evaluation; no gradients) ----------------------

    /// Posterior parameters for a batch of (x, y) rows.
    pub fn encode_batch(&self, x: &Array2<S>, y: &Array2<S>) -> (Array2<S>, Array2<S>) {
        assert_eq!(x.ncols(), self.nx);
        assert_eq!(y.ncols(), self.ny);
        let xy = ndarray::concatenate![Axis(1), *x, *y];
        let out = mlp_forward(&self.enc_spec, &self.params.subset("enc"), &xy);
        let (lo, hi) = Self::clamp_s();
        let mean = out.slice(s![.., 0..self.nz]).to_owned();
        let logvar = out.slice(s![.., self.nz..2 * self.nz]).mapv(|v| v.max(lo).min(hi));
        (mean, logvar)
    }

    /// Posterior for one (x, y) pair.
    pub fn encode(&self, x: ArrayView1<'_, S>, y: ArrayView1<'_, S>) -> GaussianParams<S> {
        let (m, lv) = self.encode_batch(
            &x.insert_axis(Axis(0)).to_owned(),
            &y.insert_axis(Axis(0)).to_owned(),
        );
        GaussianParams::new(m.row(0).to_owned(), lv.row(0).to_owned())
    }

    /// Raw decoder output (Gaussian mean or Bernoulli logits). `x` is
    /// ignored in latent-only mode and may be `None` there.
    pub fn decode_raw_batch(&self, z: &Array2<S>, x: Option<&Array2<S>>) -> Array2<S> {
        assert_eq!(z.ncols(), self.nz);
        let input = match self.conditioning {
            Conditioning::LatentOnly => z.clone(),
            Conditioning::LatentAndCondition => {
                let x = x.expect("decoder needs x in latent-and-condition mode");
                assert_eq!(x.nrows(), z.nrows());
                ndarray::concatenate![Axis(1), *z, *x]
            }
        };
        mlp_forward(&self.dec_spec, &self.params.subset("dec"), &input)
    }

    /// Decoder mean map μ_θ (sigmoid of logits for Bernoulli likelihoods).
    pub fn decode_mean_batch(&self, z: &Array2<S>, x: Option<&Array2<S>>) -> Array2<S> {
        let raw = self.decode_raw_batch(z, x);
        match self.likelihood {
            Likelihood::Gaussian => raw,
            Likelihood::Bernoulli => raw.mapv(sigmoid),
        }
    }

    /// Learned (clamped) observation log variance, Gaussian likelihood only.
    pub fn y_logvar(&self) -> Option<Array1<S>> {
        let (lo, hi) = Self::clamp_s();
        self.params
            .get("y_logvar")
            .map(|a| a.row(0).mapv(|v| v.max(lo).min(hi)))
    }

    /// The K mixture components at one condition.
    pub fn prior_components(&self, x: ArrayView1<'_, S>) -> MixtureParams<S> {
        assert_eq!(x.len(), self.nx);
        let x1 = x.insert_axis(Axis(0)).to_owned();
        let (lo, hi) = Self::clamp_s();
        let (means, logvars) = match self.prior_kind {
            PriorKind::ConditionalGaussian | PriorKind::Cmog => {
                let out = mlp_forward(self.prior_spec.as_ref().unwrap(), &self.params.subset("prior"), &x1);
                let kn = self.k * self.nz;
                let means = out
                    .slice(s![0, 0..kn])
                    .to_owned()
                    .into_shape_with_order((self.k, self.nz))
                    .unwrap();
                let logvars = out
                    .slice(s![0, kn..2 * kn])
                    .mapv(|v| v.max(lo).min(hi))
                    .into_shape_with_order((self.k, self.nz))
                    .unwrap();
                (means, logvars)
            }
            PriorKind::Cvamp => {
                let pseudo = self.params.get("prior.pseudo_targets").expect("pseudo targets");
                let x_rep = repeat_rows_arr(&x1, self.k);
                self.encode_batch(&x_rep, pseudo)
            }
            PriorKind::Cdv => {
                let zt = mlp_forward(self.prior_spec.as_ref().unwrap(), &self.params.subset("prior"), &x1)
                    .into_shape_with_order((self.k, self.nz))
                    .unwrap();
                let x_rep = repeat_rows_arr(&x1, self.k);
                let x_for_dec = matches!(self.conditioning, Conditioning::LatentAndCondition)
                    .then_some(&x_rep);
                let mu = self.decode_mean_batch(&zt, x_for_dec);
                self.encode_batch(&x_rep, &mu)
            }
        };
        MixtureParams::new(
            (0..self.k)
                .map(|ki| GaussianParams::new(means.row(ki).to_owned(), logvars.row(ki).to_owned()))
                .collect(),
        )
    }
}
