//! One-hidden-layer encoder `f`, projection `g` and optional predictor `h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Affine map `x W^T + b`, weights stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    fn gaussian<R: Rng>(input: usize, output: usize, std: f64, rng: &mut R) -> Self {
        Self {
            weight: Matrix::from_fn(output, input, |_, _| std * rng.sample::<f64, _>(StandardNormal)),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul_t(&self.weight)?;
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(&self.bias).for_each(|(o, b)| *o += b);
        }
        Ok(out)
    }

    /// Accumulates `dW += g^T x`, `db += colsum(g)` and returns `g W`.
    fn backward(&self, x: &Matrix, g: &Matrix, grad: &mut Layer) -> Result<Matrix> {
        grad.weight.add_assign(&g.t_matmul(x)?);
        for row in g.row_iter() {
            grad.bias.iter_mut().zip(row).for_each(|(b, v)| *b += v);
        }
        g.matmul(&self.weight)
    }

    fn len(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub encoder: Layer,
    pub projection: Layer,
    pub predictor: Option<Layer>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    hidden: Matrix,
    pub z: Matrix,
    pub p: Option<Matrix>,
}

impl EncoderParams {
    /// He-scaled hidden layer, `1/sqrt(fan_in)` heads, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, embed_dim: usize, predictor: bool, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || embed_dim == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Layer::gaussian(input_dim, hidden_dim, (2.0 / input_dim as f64).sqrt(), &mut rng);
        let projection = Layer::gaussian(hidden_dim, embed_dim, (1.0 / hidden_dim as f64).sqrt(), &mut rng);
        let predictor = predictor.then(|| Layer::gaussian(embed_dim, embed_dim, (1.0 / embed_dim as f64).sqrt(), &mut rng));
        Self::from_layers(encoder, projection, predictor)
    }

    pub fn from_layers(encoder: Layer, projection: Layer, predictor: Option<Layer>) -> Result<Self> {
        let p = Self {
            encoder,
            projection,
            predictor,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.layers();
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Shape("bias length differs from layer width".into()));
            }
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer output {} feeds input {}",
                    w[0].output_dim(),
                    w[1].input_dim()
                )));
            }
        }
        if let Some(h) = &self.predictor {
            if h.output_dim() != h.input_dim() {
                return Err(Error::Shape("predictor must be square".into()));
            }
        }
        if !layers.iter().all(|l| l.is_finite()) {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<&Layer> {
        let mut v = vec![&self.encoder, &self.projection];
        v.extend(self.predictor.as_ref());
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer> {
        let mut v = vec![&mut self.encoder, &mut self.projection];
        v.extend(self.predictor.as_mut());
        v
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.projection.output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: Layer::zeros(self.encoder.input_dim(), self.encoder.output_dim()),
            projection: Layer::zeros(self.projection.input_dim(), self.projection.output_dim()),
            predictor: self.predictor.as_ref().map(|h| Layer::zeros(h.input_dim(), h.output_dim())),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.len()).sum()
    }

    /// Parameters in the order encoder (W, b), projection, predictor.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut at = 0;
        for l in self.layers_mut() {
            let n = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// `self += factor * other`, layer by layer.
    pub fn add_scaled(&mut self, other: &EncoderParams, factor: f64) {
        for (l, o) in self.layers_mut().into_iter().zip(other.layers()) {
            l.weight
                .as_mut_slice()
                .iter_mut()
                .zip(o.weight.as_slice())
                .for_each(|(a, b)| *a += factor * b);
            l.bias.iter_mut().zip(&o.bias).for_each(|(a, b)| *a += factor * b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.is_finite())
    }

    /// `z = g(relu(f(x)))` and, when a predictor exists, `p = h(z)`.
    pub fn forward(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, encoder expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut hidden = self.encoder.apply(x)?;
        hidden.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        let z = self.projection.apply(&hidden)?;
        let p = self.predictor.as_ref().map(|h| h.apply(&z)).transpose()?;
        Ok(ForwardCache {
            input: x.clone(),
            hidden,
            z,
            p,
        })
    }

    /// Accumulates into `grad` the parameter gradient for upstream gradients
    /// on `z` and (optionally) on the predictor output.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_z: Option<&Matrix>,
        grad_p: Option<&Matrix>,
        grad: &mut EncoderParams,
    ) -> Result<()> {
        let mut gz = match grad_z {
            Some(g) => g.clone(),
            None => Matrix::zeros(cache.z.rows(), cache.z.cols()),
        };
        if let Some(gp) = grad_p {
            let (Some(h), Some(gh)) = (&self.predictor, grad.predictor.as_mut()) else {
                return Err(Error::Shape("predictor gradient without a predictor".into()));
            };
            gz.add_assign(&h.backward(&cache.z, gp, gh)?);
        }
        let mut gh = self.projection.backward(&cache.hidden, &gz, &mut grad.projection)?;
        for (g, &h) in gh.as_mut_slice().iter_mut().zip(cache.hidden.as_slice()) {
            if h <= 0.0 {
                *g = 0.0;
            }
        }
        self.encoder.backward(&cache.input, &gh, &mut grad.encoder)?;
        Ok(())
    }
}
