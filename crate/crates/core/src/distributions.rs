//! Log-densities and reparameterized sampling for diagonal Gaussians,
//! Bernoulli likelihoods, and uniform mixtures.
//!
//! Each kernel exists twice: a plain-array form for evaluation paths, and a
//! batched on-tape form (suffix `_rows`, one value per minibatch row) used
//! inside the training objective. The two are tested against each other.
//!
//! Mixture and Bernoulli terms always go through max-shifted log-sum-exp /
//! softplus; mixture components can sit tens of nats apart and naive
//! summation underflows.

use crate::autodiff::Var;
use crate::scalar::{softplus, Scalar};
use ndarray::{Array1, ArrayView1};

pub const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Diagonal Gaussian: mean and log-variance of equal width.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams<S: Scalar> {
    pub mean: Array1<S>,
    pub logvar: Array1<S>,
}

impl<S: Scalar> GaussianParams<S> {
    pub fn new(mean: Array1<S>, logvar: Array1<S>) -> Self {
        assert_eq!(mean.len(), logvar.len(), "mean/logvar width mismatch");
        GaussianParams { mean, logvar }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standard(dim: usize) -> Self {
        GaussianParams { mean: Array1::zeros(dim), logvar: Array1::zeros(dim) }
    }
}

/// Uniform mixture of K same-width diagonal Gaussians; weights are fixed
/// 1/K and never learned.
#[derive(Clone, Debug)]
pub struct MixtureParams<S: Scalar> {
    pub components: Vec<GaussianParams<S>>,
}

impl<S: Scalar> MixtureParams<S> {
    pub fn new(components: Vec<GaussianParams<S>>) -> Self {
        assert!(!components.is_empty(), "a mixture needs K >= 1 components");
        let d = components[0].dim();
        assert!(components.iter().all(|c| c.dim() == d), "component width mismatch");
        MixtureParams { components }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }
}

/// `log N(z; mean, diag(exp(logvar)))`.
pub fn gaussian_log_prob<S: Scalar>(p: &GaussianParams<S>, z: ArrayView1<'_, S>) -> S {
    assert_eq!(z.len(), p.dim(), "z width mismatch");
    let mut acc = S::zero();
    for ((&m, &lv), &z) in p.mean.iter().zip(&p.logvar).zip(z.iter()) {
        let d = z - m;
        acc = acc + S::c(LN_2PI) + lv + d * d * (-lv).exp();
    }
    acc * S::c(-0.5)
}

/// Reparameterized draw `z = mean + exp(logvar/2) ⊙ noise`.
pub fn gaussian_sample<S: Scalar>(p: &GaussianParams<S>, noise: ArrayView1<'_, S>) -> Array1<S> {
    assert_eq!(noise.len(), p.dim(), "noise width mismatch");
    let mut z = p.mean.clone();
    for ((z, &lv), &e) in z.iter_mut().zip(&p.logvar).zip(noise.iter()) {
        *z = *z + (lv * S::c(0.5)).exp() * e;
    }
    z
}

/// `Σ_d t_d·log σ(l_d) + (1−t_d)·log(1−σ(l_d))`, computed as
/// `t·l − softplus(l)` so saturated logits stay finite.
pub fn bernoulli_log_prob<S: Scalar>(logits: ArrayView1<'_, S>, target: ArrayView1<'_, S>) -> S {
    assert_eq!(logits.len(), target.len(), "width mismatch");
    let mut acc = S::zero();
    for (&l, &t) in logits.iter().zip(target.iter()) {
        assert!(t == S::zero() || t == S::one(), "target entries must be 0 or 1");
        acc = acc + t * l - softplus(l);
    }
    acc
}

/// `log (1/K) + logsumexp_k log N(z; component_k)`.
pub fn mixture_log_prob<S: Scalar>(m: &MixtureParams<S>, z: ArrayView1<'_, S>) -> S {
    let lps: Vec<S> = m.components.iter().map(|c| gaussian_log_prob(c, z)).collect();
    let max = lps.iter().cloned().fold(S::neg_infinity(), S::max);
    if !max.is_finite() {
        return max;
    }
    let sum: S = lps.iter().map(|&lp| (lp - max).exp()).sum();
    max + sum.ln() - S::c((m.k() as f64).ln())
}

/// Closed-form `KL(q ‖ p)` between diagonal Gaussians.
pub fn kl_diag_gaussians<S: Scalar>(q: &GaussianParams<S>, p: &GaussianParams<S>) -> S {
    assert_eq!(q.dim(), p.dim(), "width mismatch");
    let mut acc = S::zero();
    for (((&mq, &lq), &mp), &lp) in q.mean.iter().zip(&q.logvar).zip(&p.mean).zip(&p.logvar) {
        let d = mq - mp;
        acc = acc + lp - lq + (lq.exp() + d * d) * (-lp).exp() - S::one();
    }
    acc * S::c(0.5)
}

// ---------------------------------------------------------------------------
// On-tape, batched forms. All inputs are B×D vars; results are B×1.
// ---------------------------------------------------------------------------

/// Row-wise Gaussian log-density; `mean`, `logvar`, `z` all B×D.
pub fn gaussian_log_prob_rows<'t, S: Scalar>(
    mean: Var<'t, S>,
    logvar: Var<'t, S>,
    z: Var<'t, S>,
) -> Var<'t, S> {
    let d = z - mean;
    let quad = d.square() * logvar.scale(-S::one()).exp();
    (quad + logvar)
        .sum_rows()
        .add_scalar(S::c(LN_2PI * mean.cols() as f64))
        .scale(S::c(-0.5))
}

/// Row-wise reparameterized draw; `noise` is a constant leaf of N(0,1) draws.
pub fn gaussian_rsample<'t, S: Scalar>(
    mean: Var<'t, S>,
    logvar: Var<'t, S>,
    noise: Var<'t, S>,
) -> Var<'t, S> {
    mean + logvar.scale(S::c(0.5)).exp() * noise
}

/// Row-wise Bernoulli log-likelihood, `t·l − softplus(l)` summed over D.
pub fn bernoulli_log_prob_rows<'t, S: Scalar>(logits: Var<'t, S>, targets: Var<'t, S>) -> Var<'t, S> {
    (targets * logits - logits.softplus()).sum_rows()
}

/// Row-wise uniform-mixture log-density. Component means/logvars are
/// (B·K)×D with datum b's components at rows b·K..(b+1)·K; `z` is B×D.
pub fn mixture_log_prob_rows<'t, S: Scalar>(
    comp_mean: Var<'t, S>,
    comp_logvar: Var<'t, S>,
    z: Var<'t, S>,
    k: usize,
) -> Var<'t, S> {
    assert_eq!(comp_mean.rows(), z.rows() * k, "component rows != B·K");
    let z_rep = z.repeat_rows(k);
    gaussian_log_prob_rows(comp_mean, comp_logvar, z_rep)
        .reshape(z.rows(), k)
        .logsumexp_rows()
        .add_scalar(S::c(-(k as f64).ln()))
}

/// Row-wise closed-form KL between diagonal Gaussians.
pub fn kl_diag_rows<'t, S: Scalar>(
    mean_q: Var<'t, S>,
    logvar_q: Var<'t, S>,
    mean_p: Var<'t, S>,
    logvar_p: Var<'t, S>,
) -> Var<'t, S> {
    let d = mean_q - mean_p;
    let ratio = (logvar_q.exp() + d.square()) * logvar_p.scale(-S::one()).exp();
    (logvar_p - logvar_q + ratio)
        .sum_rows()
        .add_scalar(S::c(-(mean_q.cols() as f64)))
        .scale(S::c(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad, Tape};
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_normal_log_prob_values() {
        let p1 = GaussianParams::<f64>::standard(1);
        assert!((gaussian_log_prob(&p1, array![0.0].view()) + 0.9189385).abs() < 1e-6);
        let p2 = GaussianParams::<f64>::standard(2);
        assert!((gaussian_log_prob(&p2, array![0.0, 0.0].view()) + 1.8378771).abs() < 1e-6);
    }

    #[test]
    fn shifted_scaled_log_prob_matches_hand_value() {
        let p = GaussianParams::new(array![1.0], array![4.0_f64.ln()]);
        let got = gaussian_log_prob(&p, array![3.0].view());
        assert!((got + 2.1120857).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn rsample_degenerate_cases() {
        let p = GaussianParams::new(array![2.0_f64, -1.0], array![0.3, -0.7]);
        assert_eq!(gaussian_sample(&p, array![0.0, 0.0].view()), p.mean);
        let std = GaussianParams::<f64>::standard(2);
        let noise = array![0.5, -1.5];
        assert_eq!(gaussian_sample(&std, noise.view()), noise);
    }

    #[test]
    fn rsample_statistics() {
        let p = GaussianParams::new(array![2.0], array![9.0_f64.ln()]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| gaussian_sample(&p, array![f64::standard_normal(&mut rng)].view())[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 2.0 * 3.0 / 100.0, "mean {mean}");
        assert!((var - 9.0).abs() < 0.9, "var {var}");
    }

    #[test]
    fn bernoulli_values_and_saturation() {
        assert!((bernoulli_log_prob(array![0.0_f64].view(), array![1.0].view()) - 0.5_f64.ln()).abs() < 1e-12);
        let sat = bernoulli_log_prob(array![30.0_f64].view(), array![1.0].view());
        assert!(sat.is_finite() && sat.abs() < 1e-12, "got {sat}");
        let two = bernoulli_log_prob(array![1.0_f64, -1.0].view(), array![1.0, 0.0].view());
        assert!((two + 0.6265234).abs() < 1e-6, "got {two}");
    }

    #[test]
    #[should_panic(expected = "target entries must be 0 or 1")]
    fn bernoulli_rejects_non_binary_targets() {
        bernoulli_log_prob(array![0.0_f64].view(), array![0.5].view());
    }

    #[test]
    fn mixture_of_identical_components_collapses() {
        let c = GaussianParams::new(array![0.3_f64, -0.2], array![0.1, 0.4]);
        let m = MixtureParams::new(vec![c.clone(); 7]);
        let z = array![0.0_f64, 1.0];
        assert!((mixture_log_prob(&m, z.view()) - gaussian_log_prob(&c, z.view())).abs() < 1e-12);
    }

    #[test]
    fn well_separated_mixture_matches_direct_sum() {
        let m = MixtureParams::new(vec![
            GaussianParams::new(array![10.0_f64], array![0.0]),
            GaussianParams::new(array![-10.0], array![0.0]),
        ]);
        let got = mixture_log_prob(&m, array![10.0].view());
        // log ½ + logsumexp(−0.9189385, −200.9189385)
        assert!((got + 1.6120857).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn mixture_respects_component_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let comps: Vec<GaussianParams<f64>> = (0..4)
                .map(|_| {
                    GaussianParams::new(
                        array![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
                        array![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    )
                })
                .collect();
            let m = MixtureParams::new(comps);
            let z = array![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let lps: Vec<f64> = m.components.iter().map(|c| gaussian_log_prob(c, z.view())).collect();
            let lo = lps.iter().cloned().fold(f64::INFINITY, f64::min) - (m.k() as f64).ln();
            let hi = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = mixture_log_prob(&m, z.view());
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "{lo} <= {v} <= {hi}");
        }
    }

    #[test]
    fn kl_zero_for_equal_and_half_for_unit_shift() {
        let p = GaussianParams::new(array![0.4_f64, -1.0], array![0.2, -0.3]);
        assert_eq!(kl_diag_gaussians(&p, &p), 0.0);
        let q = GaussianParams::new(array![1.0_f64], array![0.0]);
        let std = GaussianParams::<f64>::standard(1);
        assert!((kl_diag_gaussians(&q, &std) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_nonnegative_over_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let mut draw = || {
                GaussianParams::new(
                    array![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
                    array![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
                )
            };
            let (q, p) = (draw(), draw());
            assert!(kl_diag_gaussians(&q, &p) >= -1e-12);
        }
    }

    #[test]
    fn log_densities_finite_within_clamp_ranges() {
        let p = GaussianParams::new(array![100.0_f64, -100.0], array![-10.0, 10.0]);
        assert!(gaussian_log_prob(&p, array![-100.0, 100.0].view()).is_finite());
        let m = MixtureParams::new(vec![p.clone(), GaussianParams::standard(2)]);
        assert!(mixture_log_prob(&m, array![100.0, -100.0].view()).is_finite());
        assert!(bernoulli_log_prob(array![100.0_f64, -100.0].view(), array![0.0, 1.0].view()).is_finite());
    }

    #[test]
    fn gaussian_log_prob_peaks_at_mean() {
        // Gradient with respect to z vanishes at z = mean.
        let mean = array![[0.7_f64, -0.3]];
        let logvar = array![[0.5, -0.5]];
        let (_, grads) = grad(&[mean.clone()], |t, zs| {
            gaussian_log_prob_rows(t.leaf(mean.clone()), t.leaf(logvar.clone()), zs[0]).sum()
        })
        .unwrap();
        assert!(grads[0].iter().all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn tape_rows_match_plain_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = 4;
        let d = 3;
        let mk = |rng: &mut ChaCha8Rng| Array2::from_shape_fn((b, d), |_| rng.random_range(-2.0_f64..2.0));
        let (mean, logvar, z) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let (mean_p, logvar_p) = (mk(&mut rng), mk(&mut rng));

        let tape = Tape::new();
        let (vm, vl, vz) = (tape.leaf(mean.clone()), tape.leaf(logvar.clone()), tape.leaf(z.clone()));
        let (vmp, vlp) = (tape.leaf(mean_p.clone()), tape.leaf(logvar_p.clone()));
        let glp = gaussian_log_prob_rows(vm, vl, vz).value();
        let kl = kl_diag_rows(vm, vl, vmp, vlp).value();
        for i in 0..b {
            let q = GaussianParams::new(mean.row(i).to_owned(), logvar.row(i).to_owned());
            let p = GaussianParams::new(mean_p.row(i).to_owned(), logvar_p.row(i).to_owned());
            assert!((glp[[i, 0]] - gaussian_log_prob(&q, z.row(i))).abs() < 1e-12);
            assert!((kl[[i, 0]] - kl_diag_gaussians(&q, &p)).abs() < 1e-12);
        }

        // Mixture: 2 data × 3 components in 2-D.
        let k = 3;
        let cm = Array2::from_shape_fn((2 * k, 2), |_| rng.random_range(-2.0..2.0));
        let cl = Array2::from_shape_fn((2 * k, 2), |_| rng.random_range(-1.0..1.0));
        let zz = Array2::from_shape_fn((2, 2), |_| rng.random_range(-2.0..2.0));
        let tape = Tape::new();
        let got = mixture_log_prob_rows(tape.leaf(cm.clone()), tape.leaf(cl.clone()), tape.leaf(zz.clone()), k).value();
        for bi in 0..2 {
            let comps: Vec<GaussianParams<f64>> = (0..k)
                .map(|ki| {
                    GaussianParams::new(cm.row(bi * k + ki).to_owned(), cl.row(bi * k + ki).to_owned())
                })
                .collect();
            let want = mixture_log_prob(&MixtureParams::new(comps), zz.row(bi));
            assert!((got[[bi, 0]] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_mass_integrates_to_one_under_quadrature() {
        // 2-D grid quadrature of exp(mixture_log_prob) for a random K=5
        // mixture over [−8, 8]² with step 0.05.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let comps: Vec<GaussianParams<f64>> = (0..5)
            .map(|_| {
                GaussianParams::new(
                    array![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
                    array![rng.random_range(-1.0..0.5), rng.random_range(-1.0..0.5)],
                )
            })
            .collect();
        let m = MixtureParams::new(comps);
        let step = 0.05;
        let n = (16.0 / step) as usize;
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                let z = array![-8.0 + (i as f64 + 0.5) * step, -8.0 + (j as f64 + 0.5) * step];
                mass += mixture_log_prob(&m, z.view()).exp() * step * step;
            }
        }
        assert!((mass - 1.0).abs() < 1e-2, "mass {mass}");
    }

    #[test]
    fn kl_matches_monte_carlo_oracle() {
        // Random 4-D pair; 200,000-sample estimate of E_q[log q − log p].
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut draw = |lo: f64, hi: f64| {
            Array1::from_shape_fn(4, |_| rng.random_range(lo..hi))
        };
        let q = GaussianParams::new(draw(-1.0, 1.0), draw(-1.0, 1.0));
        let p = GaussianParams::new(draw(-1.0, 1.0), draw(-1.0, 1.0));
        let closed = kl_diag_gaussians(&q, &p);

        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let noise = Array1::from_shape_fn(4, |_| f64::standard_normal(&mut rng));
            let z = gaussian_sample(&q, noise.view());
            let term = gaussian_log_prob(&q, z.view()) - gaussian_log_prob(&p, z.view());
            sum += term;
            sumsq += term * term;
        }
        let mc = sum / n as f64;
        let se = ((sumsq / n as f64 - mc * mc) / n as f64).sqrt();
        assert!((closed - mc).abs() < 3.0 * se, "closed {closed}, mc {mc} ± {se}");
    }

    #[test]
    fn rsample_rows_is_differentiable_through_params() {
        let mean = array![[0.2_f64, -0.4]];
        let logvar = array![[0.1, 0.3]];
        let noise = array![[1.5, -0.5]];
        let err = crate::autodiff::check_gradient(&[mean, logvar], 1e-5, |t, vars| {
            gaussian_rsample(vars[0], vars[1], t.leaf(noise.clone())).square().sum()
        })
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }
}
