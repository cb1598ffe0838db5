//! Multilayer perceptron producing a categorical distribution over `K` output nodes.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParameterVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    /// Input width, hidden widths, then the number of output nodes.
    pub layer_sizes: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, seed: u64) -> Self {
        Self {
            layer_sizes,
            activation: Activation::Relu,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::config("an MLP needs at least an input and an output layer"));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::config(format!("layer size 0 in {:?}", self.layer_sizes)));
        }
        if self.output_dim() < 2 {
            return Err(Error::config("the output layer needs at least 2 nodes"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: ParameterVector,
}

impl Mlp {
    /// Glorot-uniform weights drawn from a generator seeded with `spec.seed`; zero biases.
    pub fn build(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut groups = Vec::with_capacity(2 * (spec.layer_sizes.len() - 1));
        for (l, w) in spec.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            groups.push(ParamGroup::new(format!("layer{l}.weight"), vec![fan_out, fan_in], weights)?);
            groups.push(ParamGroup::zeros(format!("layer{l}.bias"), vec![fan_out]));
        }
        Ok(Self {
            spec,
            params: ParameterVector::new(groups),
        })
    }

    pub fn from_parts(spec: MlpSpec, params: ParameterVector) -> Result<Self> {
        spec.validate()?;
        let template = Self::build(spec.clone())?;
        template.params.check_structure(&params)?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParameterVector) -> Result<()> {
        self.params.check_structure(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn with_params(&self, params: ParameterVector) -> Result<Self> {
        let mut m = self.clone();
        m.set_params(params)?;
        Ok(m)
    }

    pub fn num_outputs(&self) -> usize {
        self.spec.output_dim()
    }

    /// Records the forward pass on `tape` and returns the `[n, K]` probability matrix.
    ///
    /// `params` must hold one variable per parameter group, in group order.
    pub fn forward(&self, tape: &mut Tape, input: Var, params: &[Var]) -> Result<Var> {
        let layers = self.spec.layer_sizes.len() - 1;
        if params.len() != 2 * layers {
            return Err(Error::contract("one variable per parameter group expected"));
        }
        let width = tape.value(input).shape().get(1).copied();
        if width != Some(self.spec.input_dim()) {
            return Err(Error::contract(format!(
                "input width {width:?} differs from model input dim {}",
                self.spec.input_dim()
            )));
        }
        let mut h = input;
        for l in 0..layers {
            h = tape.matmul_t(h, params[2 * l])?;
            h = tape.add_bias(h, params[2 * l + 1])?;
            if l + 1 < layers {
                h = match self.spec.activation {
                    Activation::Relu => tape.relu(h)?,
                };
            }
        }
        tape.softmax(h)
    }

    /// Probability rows for a row-major `[n, input_dim]` feature buffer.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<Vec<f64>>> {
        let d = self.spec.input_dim();
        if features.len() % d != 0 {
            return Err(Error::contract(format!(
                "feature buffer of length {} is not a multiple of input dim {d}",
                features.len()
            )));
        }
        let n = features.len() / d;
        let k = self.num_outputs();
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(n, d, features.to_vec())?);
        let params: Vec<Var> = self
            .params
            .groups()
            .iter()
            .map(|g| tape.constant(Tensor::new(g.shape().to_vec(), g.data().to_vec()).expect("group shape")))
            .collect();
        let p = self.forward(&mut tape, x, &params)?;
        Ok(tape.value(p).data().chunks(k).map(<[f64]>::to_vec).collect())
    }

    /// Index of the most probable node for each row (first one on ties).
    pub fn predict_nodes(&self, features: &[f64]) -> Result<Vec<usize>> {
        Ok(self.predict(features)?.iter().map(|row| argmax(row)).collect())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = encode_checkpoint(self)?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_checkpoint(&bytes)
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

const CHECKPOINT_FORMAT: &str = "pairlearn-mlp";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    activation: Activation,
    seed: u64,
}

/// Layout: `u32` little-endian header length, a one-line UTF-8 JSON header terminated by `\n`,
/// then every parameter group as little-endian `f64` in group order.
pub fn encode_checkpoint(model: &Mlp) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        layer_sizes: model.spec.layer_sizes.clone(),
        activation: model.spec.activation,
        seed: model.spec.seed,
    };
    let mut line = serde_json::to_string(&header).map_err(|e| Error::format(None, e.to_string()))?;
    line.push('\n');
    let mut out = Vec::with_capacity(4 + line.len() + 8 * model.params.total_len());
    out.extend_from_slice(&(line.len() as u32).to_le_bytes());
    out.extend_from_slice(line.as_bytes());
    for g in model.params.groups() {
        for v in g.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Mlp> {
    let bad = |msg: &str| Error::format(None, format!("checkpoint: {msg}"));
    if bytes.len() < 4 {
        return Err(bad("truncated length prefix"));
    }
    let hlen = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    let body = &bytes[4..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let line = std::str::from_utf8(&body[..hlen]).map_err(|_| bad("header is not UTF-8"))?;
    let line = line.strip_suffix('\n').ok_or_else(|| bad("header line is not newline-terminated"))?;
    let header: CheckpointHeader =
        serde_json::from_str(line).map_err(|e| bad(&format!("invalid header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(bad("unknown format tag"));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {}", header.version)));
    }
    let spec = MlpSpec {
        layer_sizes: header.layer_sizes,
        activation: header.activation,
        seed: header.seed,
    };
    spec.validate().map_err(|e| bad(&e.to_string()))?;
    let payload = &body[hlen..];
    let expected = spec.parameter_count();
    if payload.len() != 8 * expected {
        return Err(bad(&format!(
            "layer sizes {:?} need {expected} values, payload holds {} bytes",
            spec.layer_sizes,
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let template = Mlp::build(spec)?;
    let params = template.params.with_flat(&values)?;
    Ok(Mlp {
        spec: template.spec,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_deterministic() {
        let a = Mlp::build(MlpSpec::new(vec![2, 16, 4], 7)).unwrap();
        let b = Mlp::build(MlpSpec::new(vec![2, 16, 4], 7)).unwrap();
        assert_eq!(a, b);
        let c = Mlp::build(MlpSpec::new(vec![2, 16, 4], 8)).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn parameter_count() {
        let m = Mlp::build(MlpSpec::new(vec![2, 16, 4], 7)).unwrap();
        assert_eq!(m.params().total_len(), 2 * 16 + 16 + 16 * 4 + 4);
        assert_eq!(m.params().total_len(), 116);
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let m = Mlp::build(MlpSpec::new(vec![3, 5, 2], 1)).unwrap();
        let g = &m.params().groups()[0];
        let bound = (6.0f64 / 8.0).sqrt();
        assert!(g.data().iter().all(|w| w.abs() < bound));
        assert!(m.params().groups()[1].data().iter().all(|b| *b == 0.0));
    }

    #[test]
    fn degenerate_specs_rejected() {
        assert!(matches!(Mlp::build(MlpSpec::new(vec![2, 0, 4], 1)), Err(Error::Config(_))));
        assert!(matches!(Mlp::build(MlpSpec::new(vec![4], 1)), Err(Error::Config(_))));
        assert!(matches!(Mlp::build(MlpSpec::new(vec![4, 1], 1)), Err(Error::Config(_))));
    }

    #[test]
    fn single_layer_rows_sum_to_one() {
        let m = Mlp::build(MlpSpec::new(vec![5, 3], 2)).unwrap();
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = m.predict(&x).unwrap();
        assert_eq!(out.len(), 4);
        for row in out {
            assert_eq!(row.len(), 3);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_final_layer_gives_uniform_output() {
        let mut m = Mlp::build(MlpSpec::new(vec![2, 8, 5], 3)).unwrap();
        let n = m.params().groups().len();
        for g in &mut m.params_mut().groups_mut()[n - 2..] {
            g.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        for row in m.predict(&[0.3, -2.0, 1.0, 1.0]).unwrap() {
            for p in row {
                assert_eq!(p, 0.2);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = Mlp::build(MlpSpec::new(vec![3, 2], 0)).unwrap();
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn output_permutation_permutes_predictions() {
        let m = Mlp::build(MlpSpec::new(vec![2, 6, 4], 9)).unwrap();
        let perm = [2usize, 0, 3, 1];
        let mut pm = m.clone();
        let n = m.params().groups().len();
        {
            let groups = pm.params_mut().groups_mut();
            let w = m.params().groups()[n - 2].data().to_vec();
            let b = m.params().groups()[n - 1].data().to_vec();
            for (new_row, old_row) in perm.iter().enumerate() {
                groups[n - 2].data_mut()[new_row * 6..(new_row + 1) * 6]
                    .copy_from_slice(&w[old_row * 6..(old_row + 1) * 6]);
                groups[n - 1].data_mut()[new_row] = b[*old_row];
            }
        }
        let x = [0.5, -1.5, 2.0, 0.1, -0.7, 0.0];
        let base = m.predict(&x).unwrap();
        let permuted = pm.predict(&x).unwrap();
        for (b, p) in base.iter().zip(&permuted) {
            for (new_idx, old_idx) in perm.iter().enumerate() {
                assert_eq!(p[new_idx].to_bits(), b[*old_idx].to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = Mlp::build(MlpSpec::new(vec![2, 16, 4], 42)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save_checkpoint(&path).unwrap();
        let back = Mlp::load_checkpoint(&path).unwrap();
        assert_eq!(back.params().max_abs_diff(m.params()).unwrap(), 0.0);
        assert_eq!(back, m);
        assert_eq!(back.params().total_len(), 116);
    }

    #[test]
    fn checkpoint_with_wrong_layer_sizes_rejected() {
        let m = Mlp::build(MlpSpec::new(vec![2, 16, 4], 42)).unwrap();
        let bytes = encode_checkpoint(&m).unwrap();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        assert!(text.contains("[2,16,4]"));
        let tampered: Vec<u8> = {
            let hlen = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
            let header = std::str::from_utf8(&bytes[4..4 + hlen]).unwrap().replace("[2,16,4]", "[2,16,5]");
            let mut out = (header.len() as u32).to_le_bytes().to_vec();
            out.extend_from_slice(header.as_bytes());
            out.extend_from_slice(&bytes[4 + hlen..]);
            out
        };
        assert!(matches!(decode_checkpoint(&tampered), Err(Error::Format { .. })));
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
        assert!(decode_checkpoint(&[1, 2]).is_err());
    }
}
