//! Checkpointing: the parameter container plus a text sidecar with the
//! model metadata needed to rebuild it.

use super::{ClvmError, ClvmModel, Conditioning, Likelihood, PriorKind};
use crate::nn::{MlpSpec, ParameterSet};
use crate::scalar::Scalar;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut os = prefix.as_os_str().to_owned();
    os.push(suffix);
    PathBuf::from(os)
}

fn join_sizes(sizes: &[usize]) -> String {
    sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_enum<T>(meta: &Path, key: &str, value: &str) -> Result<T, ClvmError>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| ClvmError::Metadata(format!("{}: bad `{key}`: {e}", meta.display())))
}

fn parse_sizes(text: &str, key: &str) -> Result<Vec<usize>, ClvmError> {
    let sizes: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| ClvmError::Metadata(format!("bad size list in `{key}`: {text:?}")))?;
    if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
        return Err(ClvmError::Metadata(format!("bad size list in `{key}`: {text:?}")));
    }
    Ok(sizes)
}

/// Entry names and shapes an MLP contributes under `prefix.`.
fn expected_mlp(prefix: &str, spec: &MlpSpec, out: &mut Vec<(String, (usize, usize))>) {
    for l in 0..spec.sizes.len() - 1 {
        out.push((format!("{prefix}.w{l}"), (spec.sizes[l + 1], spec.sizes[l])));
        out.push((format!("{prefix}.b{l}"), (1, spec.sizes[l + 1])));
    }
}

impl<S: Scalar> ClvmModel<S> {
    fn expected_entries(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        expected_mlp("enc", &self.enc_spec, &mut out);
        expected_mlp("dec", &self.dec_spec, &mut out);
        if self.likelihood == Likelihood::Gaussian {
            out.push(("y_logvar".into(), (1, self.ny)));
        }
        match self.prior_kind {
            PriorKind::Cvamp => out.push(("prior.pseudo_targets".into(), (self.k, self.ny))),
            _ => expected_mlp("prior", self.prior_spec.as_ref().unwrap(), &mut out),
        }
        out
    }

    /// Write `{prefix}.params` (the parameter container) and
    /// `{prefix}.meta` (the metadata sidecar).
    pub fn save_checkpoint(&self, prefix: &Path) -> Result<(), ClvmError> {
        self.params.save(&with_suffix(prefix, ".params"))?;
        let mut meta = String::from("CLVM v1\n");
        let mut line = |k: &str, v: String| writeln!(meta, "{k}={v}").unwrap();
        line("nx", self.nx.to_string());
        line("ny", self.ny.to_string());
        line("nz", self.nz.to_string());
        line("k", self.k.to_string());
        line("prior", self.prior_kind.to_string());
        line("likelihood", self.likelihood.to_string());
        line("conditioning", self.conditioning.to_string());
        line("hidden_act", self.enc_spec.hidden.to_string());
        line("enc_sizes", join_sizes(&self.enc_spec.sizes));
        line("dec_sizes", join_sizes(&self.dec_spec.sizes));
        if let Some(spec) = &self.prior_spec {
            line("prior_sizes", join_sizes(&spec.sizes));
        }
        std::fs::write(with_suffix(prefix, ".meta"), meta)?;
        Ok(())
    }

    /// Rebuild a model from `{prefix}.params` + `{prefix}.meta`. Evaluation
    /// after a round trip is bit-exact because parameters are stored as the
    /// same 64-bit floats they are computed with.
    pub fn load_checkpoint(prefix: &Path) -> Result<Self, ClvmError> {
        let meta_path = with_suffix(prefix, ".meta");
        let text = std::fs::read_to_string(&meta_path)?;
        let mut lines = text.lines();
        if lines.next() != Some("CLVM v1") {
            return Err(ClvmError::Metadata(format!(
                "{}: missing `CLVM v1` header",
                meta_path.display()
            )));
        }
        let mut fields = BTreeMap::new();
        for (i, raw) in lines.enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ClvmError::Metadata(format!("{}:{}: expected key=value", meta_path.display(), i + 2))
            })?;
            if fields.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ClvmError::Metadata(format!(
                    "{}:{}: duplicate key `{k}`",
                    meta_path.display(),
                    i + 2
                )));
            }
        }
        let known = [
            "nx", "ny", "nz", "k", "prior", "likelihood", "conditioning", "hidden_act",
            "enc_sizes", "dec_sizes", "prior_sizes",
        ];
        if let Some(bad) = fields.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(ClvmError::Metadata(format!(
                "{}: unknown key `{bad}`",
                meta_path.display()
            )));
        }
        let get = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| ClvmError::Metadata(format!("{}: missing key `{k}`", meta_path.display())))
        };
        let num = |k: &str| -> Result<usize, ClvmError> {
            get(k)?
                .parse()
                .map_err(|_| ClvmError::Metadata(format!("{}: bad integer for `{k}`", meta_path.display())))
        };

        let (nx, ny, nz, k) = (num("nx")?, num("ny")?, num("nz")?, num("k")?);
        let prior_kind: PriorKind = parse_enum(&meta_path, "prior", get("prior")?)?;
        let likelihood: Likelihood = parse_enum(&meta_path, "likelihood", get("likelihood")?)?;
        let conditioning: Conditioning = parse_enum(&meta_path, "conditioning", get("conditioning")?)?;
        let hidden_act = parse_enum(&meta_path, "hidden_act", get("hidden_act")?)?;

        let enc_spec = MlpSpec::new(parse_sizes(get("enc_sizes")?, "enc_sizes")?, hidden_act);
        let dec_spec = MlpSpec::new(parse_sizes(get("dec_sizes")?, "dec_sizes")?, hidden_act);
        let prior_spec = match prior_kind {
            PriorKind::Cvamp => {
                if fields.contains_key("prior_sizes") {
                    return Err(ClvmError::Metadata(format!(
                        "{}: `prior_sizes` is meaningless for the cvamp prior",
                        meta_path.display()
                    )));
                }
                None
            }
            _ => Some(MlpSpec::new(parse_sizes(get("prior_sizes")?, "prior_sizes")?, hidden_act)),
        };

        // Cross-check the declared dims against the network shapes.
        let dec_in = match conditioning {
            Conditioning::LatentOnly => nz,
            Conditioning::LatentAndCondition => nz + nx,
        };
        let head_width = match prior_kind {
            PriorKind::ConditionalGaussian => 2 * nz,
            PriorKind::Cmog => 2 * k * nz,
            PriorKind::Cdv => k * nz,
            PriorKind::Cvamp => 0,
        };
        let checks = [
            (enc_spec.input_dim() == nx + ny, "encoder input width"),
            (enc_spec.output_dim() == 2 * nz, "encoder output width"),
            (dec_spec.input_dim() == dec_in, "decoder input width"),
            (dec_spec.output_dim() == ny, "decoder output width"),
            (
                prior_spec.as_ref().map_or(true, |s| s.input_dim() == nx && s.output_dim() == head_width),
                "prior network widths",
            ),
            (prior_kind != PriorKind::ConditionalGaussian || k == 1, "k must be 1 for conditional-gaussian"),
        ];
        if let Some((_, what)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(ClvmError::Metadata(format!(
                "{}: inconsistent metadata ({what})",
                meta_path.display()
            )));
        }

        let mut model = ClvmModel {
            nx,
            ny,
            nz,
            k,
            prior_kind,
            likelihood,
            conditioning,
            enc_spec,
            dec_spec,
            prior_spec,
            params: ParameterSet::new(),
        };
        let params: ParameterSet<S> = ParameterSet::load(&with_suffix(prefix, ".params"))?;
        let expected = model.expected_entries();
        if params.len() != expected.len() {
            return Err(ClvmError::Metadata(format!(
                "parameter container holds {} entries, metadata implies {}",
                params.len(),
                expected.len()
            )));
        }
        for ((name, array), (want_name, want_shape)) in params.entries().iter().zip(&expected) {
            if name != want_name || array.dim() != *want_shape {
                return Err(ClvmError::Metadata(format!(
                    "parameter entry mismatch: found `{name}` {:?}, expected `{want_name}` {:?}",
                    array.dim(),
                    want_shape
                )));
            }
        }
        model.params = params;
        Ok(model)
    }
}
