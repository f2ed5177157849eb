//! Multilayer perceptrons and the Adam optimizer on the autodiff tape.

use crate::autodiff::{Tape, Var};
use crate::scalar::{softplus, Scalar};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

/// Hidden-layer activation. The output layer is always identity; heads that
/// need a nonlinearity (sigmoid, clamp) apply it themselves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Softplus,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Tanh => write!(f, "tanh"),
            Activation::Softplus => write!(f, "softplus"),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// Architecture of one MLP: layer widths from input to output plus the
/// hidden activation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>, hidden: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        MlpSpec { sizes, hidden }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Number of weight/bias arrays (`2 · layers`).
    pub fn param_count(&self) -> usize {
        2 * (self.sizes.len() - 1)
    }
}

/// Ordered, named collection of parameter arrays. Weight matrices are stored
/// out×in; bias vectors as 1×n rows. Other trainable arrays (for example
/// mixture pseudo targets) live here too under their own names.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<S: Scalar> {
    entries: Vec<(String, Array2<S>)>,
}

impl<S: Scalar> Default for ParameterSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParameterSet<S> {
    pub fn new() -> Self {
        ParameterSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, array: Array2<S>) {
        let name = name.into();
        assert!(!name.is_empty() && !name.contains(char::is_whitespace), "bad parameter name {name:?}");
        assert!(self.get(&name).is_none(), "duplicate parameter name {name:?}");
        self.entries.push((name, array));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<S>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn entries(&self) -> &[(String, Array2<S>)] {
        &self.entries
    }

    pub fn arrays(&self) -> impl Iterator<Item = &Array2<S>> {
        self.entries.iter().map(|(_, a)| a)
    }

    pub fn arrays_mut(&mut self) -> impl Iterator<Item = &mut Array2<S>> {
        self.entries.iter_mut().map(|(_, a)| a)
    }

    /// Append every entry of `other` under `prefix.`.
    pub fn merge(&mut self, prefix: &str, other: ParameterSet<S>) {
        for (name, array) in other.entries {
            self.push(format!("{prefix}.{name}"), array);
        }
    }

    /// The entries under `prefix.`, cloned with the prefix stripped —
    /// the inverse view of [`merge`](Self::merge).
    pub fn subset(&self, prefix: &str) -> ParameterSet<S> {
        let mut out = ParameterSet::new();
        for (name, array) in &self.entries {
            if let Some(rest) = name.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) {
                out.push(rest, array.clone());
            }
        }
        out
    }

    /// Enter every array on a tape, in entry order.
    pub fn leaves<'t>(&self, tape: &'t Tape<S>) -> Vec<Var<'t, S>> {
        self.arrays().map(|a| tape.leaf(a.clone())).collect()
    }

    /// Write the container format: a text header (`name rows cols offset`
    /// per entry, offsets into the payload) followed by little-endian f64s.
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "MLPPARAMS v1 {}", self.entries.len())?;
        let mut offset = 0usize;
        for (name, a) in &self.entries {
            writeln!(w, "{} {} {} {}", name, a.nrows(), a.ncols(), offset)?;
            offset += 8 * a.len();
        }
        writeln!(w)?;
        for (_, a) in &self.entries {
            for v in a.iter() {
                w.write_all(&v.to_f64_c().to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Read the container format back. Round-trips bit-exactly for `f64`
    /// (and for `f32`, which embeds exactly in f64).
    pub fn load(path: &Path) -> Result<Self, NnError> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let mut header = line.split_whitespace();
        if header.next() != Some("MLPPARAMS") || header.next() != Some("v1") {
            return Err(NnError::Format { offset: 0, message: "bad magic, expected `MLPPARAMS v1`".into() });
        }
        let count: usize = header
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| NnError::Format { offset: 0, message: "missing entry count".into() })?;

        let mut meta = Vec::with_capacity(count);
        let mut header_bytes = line.len();
        let mut expect_offset = 0usize;
        for i in 0..count {
            line.clear();
            r.read_line(&mut line)?;
            let at = header_bytes;
            header_bytes += line.len();
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(NnError::Format {
                    offset: at,
                    message: format!("entry {i}: expected `name rows cols offset`, got {:?}", line.trim_end()),
                });
            }
            let parse = |s: &str| -> Result<usize, NnError> {
                s.parse().map_err(|_| NnError::Format { offset: at, message: format!("entry {i}: bad integer `{s}`") })
            };
            let (rows, cols, off) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
            if off != expect_offset {
                return Err(NnError::Format {
                    offset: at,
                    message: format!("entry {i}: offset {off}, expected {expect_offset}"),
                });
            }
            expect_offset += 8 * rows * cols;
            meta.push((fields[0].to_string(), rows, cols));
        }
        line.clear();
        r.read_line(&mut line)?;
        if !line.trim().is_empty() {
            return Err(NnError::Format { offset: header_bytes, message: "missing blank line after header".into() });
        }
        header_bytes += line.len();

        let mut set = ParameterSet::new();
        let mut pos = header_bytes;
        for (name, rows, cols) in meta {
            let mut buf = vec![0u8; 8 * rows * cols];
            r.read_exact(&mut buf).map_err(|_| NnError::Format {
                offset: pos,
                message: format!("payload truncated while reading `{name}` ({rows}x{cols})"),
            })?;
            let data: Vec<S> = buf
                .chunks_exact(8)
                .map(|c| S::from_f64(f64::from_le_bytes(c.try_into().unwrap())).unwrap())
                .collect();
            pos += buf.len();
            set.push(name, Array2::from_shape_vec((rows, cols), data).unwrap());
        }
        Ok(set)
    }
}

/// Errors from parameter-container I/O.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parameter container error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
}

/// Initialize an MLP: weights from N(0, 1/fan-in), biases zero;
/// deterministic in the seed. Entries are named `w0, b0, w1, b1, …`.
pub fn mlp_init<S: Scalar>(spec: &MlpSpec, seed: u64) -> ParameterSet<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::new();
    for l in 0..spec.sizes.len() - 1 {
        let (fan_in, fan_out) = (spec.sizes[l], spec.sizes[l + 1]);
        let std = S::c(1.0 / (fan_in as f64).sqrt());
        let w = Array2::from_shape_fn((fan_out, fan_in), |_| S::standard_normal(&mut rng) * std);
        params.push(format!("w{l}"), w);
        params.push(format!("b{l}"), Array2::zeros((1, fan_out)));
    }
    params
}

/// Apply an MLP on the tape. `params` must hold the `2·layers` weight/bias
/// vars in `w0, b0, w1, b1, …` order; `input` is B×input_dim.
pub fn mlp_apply<'t, S: Scalar>(spec: &MlpSpec, params: &[Var<'t, S>], input: Var<'t, S>) -> Var<'t, S> {
    assert_eq!(params.len(), spec.param_count(), "wrong number of parameter vars");
    assert_eq!(input.cols(), spec.input_dim(), "input width {} != {}", input.cols(), spec.input_dim());
    let layers = spec.sizes.len() - 1;
    let rows = input.rows();
    let mut h = input;
    for l in 0..layers {
        let (w, b) = (params[2 * l], params[2 * l + 1]);
        assert_eq!((w.rows(), w.cols()), (spec.sizes[l + 1], spec.sizes[l]), "w{l} shape");
        assert_eq!((b.rows(), b.cols()), (1, spec.sizes[l + 1]), "b{l} shape");
        let a = h.matmul_t(w) + b.broadcast_rows(rows);
        h = if l + 1 == layers {
            a
        } else {
            match spec.hidden {
                Activation::Tanh => a.tanh(),
                Activation::Softplus => a.softplus(),
            }
        };
    }
    h
}

/// Tape-free forward pass over plain arrays; used by evaluation paths that
/// never need gradients. Matches [`mlp_apply`] exactly.
pub fn mlp_forward<S: Scalar>(spec: &MlpSpec, params: &ParameterSet<S>, input: &Array2<S>) -> Array2<S> {
    assert_eq!(input.ncols(), spec.input_dim(), "input width");
    let layers = spec.sizes.len() - 1;
    // `concatenate![Axis(1), ..]` hands back column-major arrays, and `dot`
    // keeps that layout for its output whenever both operands have unit row
    // stride; normalize here so batch outputs always have contiguous rows.
    let mut h = input.as_standard_layout().into_owned();
    for l in 0..layers {
        let w = params.get(&format!("w{l}")).expect("weight entry");
        let b = params.get(&format!("b{l}")).expect("bias entry");
        let mut a = h.dot(&w.t());
        a += &b.broadcast(a.dim()).unwrap();
        h = if l + 1 == layers {
            a
        } else {
            match spec.hidden {
                Activation::Tanh => a.mapv(|x| x.tanh()),
                Activation::Softplus => a.mapv(softplus),
            }
        };
    }
    h
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamCfg<S: Scalar> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
}

impl<S: Scalar> Default for AdamCfg<S> {
    fn default() -> Self {
        AdamCfg { lr: S::c(1e-3), beta1: S::c(0.9), beta2: S::c(0.999), eps: S::c(1e-8) }
    }
}

/// Per-parameter Adam moments plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<S: Scalar> {
    m: Vec<Array2<S>>,
    v: Vec<Array2<S>>,
    pub steps: u64,
}

impl<S: Scalar> AdamState<S> {
    /// Zero moments matching the shapes of `params`.
    pub fn new(params: &ParameterSet<S>) -> Self {
        let m = params.arrays().map(|a| Array2::zeros(a.dim())).collect::<Vec<_>>();
        let v = m.clone();
        AdamState { m, v, steps: 0 }
    }
}

/// One bias-corrected Adam step of gradient *ascent*: parameters move along
/// `+grads`. `grads` must align with `params` entry for entry.
pub fn adam_step<S: Scalar>(
    state: &mut AdamState<S>,
    params: &mut ParameterSet<S>,
    grads: &[Array2<S>],
    cfg: &AdamCfg<S>,
) {
    assert!(cfg.lr > S::zero() && cfg.eps > S::zero());
    assert!(cfg.beta1 >= S::zero() && cfg.beta1 < S::one());
    assert!(cfg.beta2 >= S::zero() && cfg.beta2 < S::one());
    assert_eq!(grads.len(), state.m.len(), "gradient count mismatch");
    state.steps += 1;
    let t = state.steps as i32;
    let c1 = S::one() - cfg.beta1.powi(t);
    let c2 = S::one() - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .arrays_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        assert_eq!(p.dim(), g.dim(), "gradient shape mismatch");
        ndarray::Zip::from(p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *m = cfg.beta1 * *m + (S::one() - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (S::one() - cfg.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = *p + cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_gradient, grad};
    use ndarray::array;

    fn spec(sizes: &[usize]) -> MlpSpec {
        MlpSpec::new(sizes.to_vec(), Activation::Tanh)
    }

    #[test]
    fn init_shapes_and_determinism() {
        let s = spec(&[2, 4, 1]);
        let p = mlp_init::<f64>(&s, 0);
        assert_eq!(p.get("w0").unwrap().dim(), (4, 2));
        assert_eq!(p.get("b0").unwrap().dim(), (1, 4));
        assert_eq!(p.get("w1").unwrap().dim(), (1, 4));
        assert_eq!(p.get("b1").unwrap().dim(), (1, 1));
        assert!(p.arrays().all(|a| a.iter().all(|v| v.is_finite())));
        assert_eq!(p, mlp_init::<f64>(&s, 0));
        assert_ne!(p, mlp_init::<f64>(&s, 1));
    }

    #[test]
    fn init_scale_tracks_fan_in() {
        // 100×100 layer: 10,000 weights with std 1/sqrt(100) = 0.1.
        let p = mlp_init::<f64>(&spec(&[100, 100]), 42);
        let w = p.get("w0").unwrap();
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let std = (w.mapv(|x| (x - mean) * (x - mean)).sum() / n).sqrt();
        assert!((std - 0.1).abs() < 0.01, "std {std}");
        assert!(p.get("b0").unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let s = spec(&[3, 5, 2]);
        let mut p = ParameterSet::<f64>::new();
        p.push("w0", Array2::zeros((5, 3)));
        p.push("b0", Array2::zeros((1, 5)));
        p.push("w1", Array2::zeros((2, 5)));
        p.push("b1", Array2::zeros((1, 2)));
        let out = mlp_forward(&s, &p, &array![[1.0, -2.0, 0.5]]);
        assert_eq!(out, array![[0.0, 0.0]]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let s = spec(&[2, 2]);
        let mut p = ParameterSet::<f64>::new();
        p.push("w0", array![[1.0, 0.0], [0.0, 1.0]]);
        p.push("b0", Array2::zeros((1, 2)));
        let x = array![[0.25, -3.5]];
        assert_eq!(mlp_forward(&s, &p, &x), x);
    }

    #[test]
    fn batched_apply_equals_row_wise() {
        let s = spec(&[3, 8, 2]);
        let p = mlp_init::<f64>(&s, 9);
        let batch = array![[0.1, 0.2, 0.3], [-1.0, 0.0, 1.0], [2.0, -2.0, 0.5]];
        let full = mlp_forward(&s, &p, &batch);
        for i in 0..3 {
            let row = batch.row(i).insert_axis(ndarray::Axis(0)).to_owned();
            let single = mlp_forward(&s, &p, &row);
            assert_eq!(full.row(i), single.row(0), "row {i}");
        }
    }

    #[test]
    fn tape_and_plain_apply_agree() {
        let s = MlpSpec::new(vec![4, 6, 3], Activation::Softplus);
        let p = mlp_init::<f64>(&s, 3);
        let x = array![[0.3, -0.1, 0.9, 0.0], [1.0, 1.0, -1.0, 0.2]];
        let plain = mlp_forward(&s, &p, &x);
        let tape = crate::autodiff::Tape::new();
        let leaves = p.leaves(&tape);
        let out = mlp_apply(&s, &leaves, tape.leaf(x));
        assert_eq!(out.value(), plain);
    }

    #[test]
    fn mlp_gradient_passes_finite_difference_check() {
        let s = spec(&[3, 6, 2]);
        let p = mlp_init::<f64>(&s, 11);
        let arrays: Vec<Array2<f64>> = p.arrays().cloned().collect();
        let x = array![[0.4, -0.7, 0.1], [0.9, 0.2, -0.3]];
        let err = check_gradient(&arrays, 1e-5, |t, vars| {
            mlp_apply(&s, vars, t.leaf(x.clone())).sum()
        })
        .unwrap();
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let s = spec(&[2, 3]);
        let mut p = mlp_init::<f64>(&s, 5);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let zeros: Vec<Array2<f64>> = p.arrays().map(|a| Array2::zeros(a.dim())).collect();
        adam_step(&mut st, &mut p, &zeros, &AdamCfg::default());
        assert_eq!(p, before);
        assert_eq!(st.steps, 1);
    }

    #[test]
    fn adam_first_step_is_bias_corrected() {
        let mut p = ParameterSet::<f64>::new();
        p.push("x", array![[0.0]]);
        let mut st = AdamState::new(&p);
        adam_step(&mut st, &mut p, &[array![[1.0]]], &AdamCfg { lr: 0.01, ..AdamCfg::default() });
        let expect = 0.01 * (1.0 / (1.0 + 1e-8));
        assert!((p.get("x").unwrap()[[0, 0]] - expect).abs() < 1e-12);
    }

    #[test]
    fn adam_climbs_a_quadratic() {
        // Maximize f(x) = −(x−2)²; gradient is −2(x−2).
        let mut p = ParameterSet::<f64>::new();
        p.push("x", array![[0.0]]);
        let mut st = AdamState::new(&p);
        let cfg = AdamCfg { lr: 0.1, ..AdamCfg::default() };
        for _ in 0..100 {
            let x = p.get("x").unwrap()[[0, 0]];
            adam_step(&mut st, &mut p, &[array![[-2.0 * (x - 2.0)]]], &cfg);
        }
        let x = p.get("x").unwrap()[[0, 0]];
        assert!((x - 2.0).abs() < 0.05, "ended at {x}");
    }

    #[test]
    fn container_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let mut p = mlp_init::<f64>(&spec(&[7, 5, 3]), 2);
        p.push("extra", array![[1.5e-300, -0.0], [f64::MIN_POSITIVE, 3.25]]);
        p.save(&path).unwrap();
        let q = ParameterSet::<f64>::load(&path).unwrap();
        assert_eq!(p.entries().len(), q.entries().len());
        for ((n1, a1), (n2, a2)) in p.entries().iter().zip(q.entries()) {
            assert_eq!(n1, n2);
            assert_eq!(a1.dim(), a2.dim());
            for (x, y) in a1.iter().zip(a2.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncated_container_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let p = mlp_init::<f64>(&spec(&[4, 4]), 0);
        p.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        match ParameterSet::<f64>::load(&path) {
            Err(NnError::Format { offset, message }) => {
                assert!(offset > 0);
                assert!(message.contains("truncated"), "{message}");
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        std::fs::write(&path, b"NOTPARAMS v9 0\n\n").unwrap();
        assert!(matches!(
            ParameterSet::<f64>::load(&path),
            Err(NnError::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn grad_through_merged_sets_lines_up() {
        // Gradients extracted via ParameterSet::leaves align entry-for-entry.
        let s = spec(&[2, 3]);
        let mut all = ParameterSet::<f64>::new();
        all.merge("enc", mlp_init(&s, 0));
        all.merge("dec", mlp_init(&s, 1));
        let arrays: Vec<Array2<f64>> = all.arrays().cloned().collect();
        let (_, grads) = grad(&arrays, |t, vars| {
            let enc = mlp_apply(&s, &vars[0..2], t.leaf(array![[1.0, 2.0]]));
            let dec = mlp_apply(&s, &vars[2..4], t.leaf(array![[0.5, -0.5]]));
            (enc + dec).sum()
        })
        .unwrap();
        assert_eq!(grads.len(), 4);
        assert!(grads.iter().all(|g| g.iter().any(|&v| v != 0.0)));
    }
}
