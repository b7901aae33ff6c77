use rand::Rng;

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// Dense layer `y = W x + b` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    pub(crate) weight: Matrix,
    pub(crate) bias: Vector,
}

/// Fully connected network with `tanh` on hidden layers and a linear output.
///
/// `widths = [in, h_1, ..., h_k, out]`; for an epsilon network over data of
/// dimension `d`, `in = d + 2` (the state plus `alpha_t` and `sigma_t`) and
/// `out = d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    widths: Vec<usize>,
    layers: Vec<Layer>,
}

/// Activations kept for backpropagation: `acts[0]` is the input batch,
/// `acts[l]` the output of layer `l` (after `tanh` for hidden layers).
pub(crate) type Activations = Vec<Matrix>;

impl MlpNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weight: Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit)),
                    bias: Vector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    /// Epsilon network for data of dimension `d` with the given hidden widths.
    pub fn for_data_dim<R: Rng + ?Sized>(d: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut widths = vec![d + 2];
        widths.extend_from_slice(hidden);
        widths.push(d);
        Self::new(&widths, rng)
    }

    /// The default architecture: two hidden layers of width 64.
    pub fn default_for<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Self> {
        Self::for_data_dim(d, &[64, 64], rng)
    }

    /// Builds a network from explicit parameters in [`MlpNet::params`] order.
    pub fn from_params(widths: &[usize], params: &[f64]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let mut net = Self {
            widths: widths.to_vec(),
            layers: widths
                .windows(2)
                .map(|w| Layer {
                    weight: Matrix::zeros(w[1], w[0]),
                    bias: Vector::zeros(w[1]),
                })
                .collect(),
        };
        net.set_params(params)?;
        Ok(net)
    }

    /// Zeroes the output layer so the network predicts 0 everywhere.
    pub fn zero_output(mut self) -> Self {
        if let Some(last) = self.layers.last_mut() {
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
        self
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Output dimension, which is the data dimension for an epsilon network.
    pub fn data_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Flat parameter vector: per layer, the weight matrix in row-major
    /// (`out x in`) order followed by the bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            for row in l.weight.row_iter() {
                out.extend(row.iter());
            }
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        crate::error::check_dim(self.param_count(), params.len())?;
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            let (rows, cols) = l.weight.shape();
            for i in 0..rows {
                for j in 0..cols {
                    l.weight[(i, j)] = it.next().expect("length checked");
                }
            }
            for b in l.bias.iter_mut() {
                *b = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Single-input forward pass.
    pub fn forward(&self, input: &Vector) -> Vector {
        let batch = Matrix::from_column_slice(input.len(), 1, input.as_slice());
        self.forward_batch(&batch).column(0).into_owned()
    }

    /// Forward pass on a batch stored column-wise (`in x B`), returning `out x B`.
    pub fn forward_batch(&self, input: &Matrix) -> Matrix {
        self.forward_cached(input).pop().expect("at least the input activation")
    }

    pub(crate) fn forward_cached(&self, input: &Matrix) -> Activations {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.weight * acts.last().expect("non-empty");
            for mut col in z.column_iter_mut() {
                col += &l.bias;
            }
            if i < last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    /// Gradient of a loss with respect to all parameters, given the cached
    /// activations and `dL/d(output)` (`out x B`). Returned in
    /// [`MlpNet::params`] order.
    pub(crate) fn backward(&self, acts: &Activations, grad_out: &Matrix) -> Vec<f64> {
        let n = self.layers.len();
        let mut per_layer: Vec<(Matrix, Vector)> = Vec::with_capacity(n);
        let mut delta = grad_out.clone();
        for i in (0..n).rev() {
            let input = &acts[i];
            let gw = &delta * input.transpose();
            let gb = Vector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
            per_layer.push((gw, gb));
            if i > 0 {
                let mut back = self.layers[i].weight.transpose() * &delta;
                // acts[i] holds tanh(z); d tanh = 1 - tanh^2
                back.zip_apply(input, |b, h| *b *= 1.0 - h * h);
                delta = back;
            }
        }
        per_layer.reverse();
        let mut out = Vec::with_capacity(self.param_count());
        for (gw, gb) in per_layer {
            for row in gw.row_iter() {
                out.extend(row.iter());
            }
            out.extend(gb.iter());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_output_layer_predicts_zero() {
        let net = MlpNet::default_for(2, &mut stream(0, 0)).unwrap().zero_output();
        let out = net.forward(&Vector::from_vec(vec![3.0, -1.0, 0.5, 0.8]));
        assert_eq!(out, Vector::zeros(2));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = MlpNet::default_for(2, &mut stream(1, 0)).unwrap();
        let x = Vector::from_vec(vec![0.1, 0.2, 0.9, 0.4]);
        let a = net.forward(&x);
        let b = net.forward(&x);
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn batch_and_single_agree() {
        let net = MlpNet::for_data_dim(3, &[5, 4], &mut stream(2, 0)).unwrap();
        let batch = Matrix::from_fn(5, 7, |i, j| (i as f64 - j as f64) * 0.1);
        let out = net.forward_batch(&batch);
        for j in 0..7 {
            let single = net.forward(&batch.column(j).into_owned());
            assert!((single - out.column(j)).amax() < 1e-15);
        }
    }

    #[test]
    fn small_perturbation_is_bounded_by_jacobian() {
        let net = MlpNet::default_for(2, &mut stream(3, 0)).unwrap();
        let x = Vector::from_vec(vec![0.5, -0.3, 0.7, 0.7]);
        let h = 1e-6;
        // crude Lipschitz bound: product of layer spectral norms (tanh is 1-Lipschitz)
        let lip: f64 = net
            .layers()
            .iter()
            .map(|l| l.weight.clone().svd(false, false).singular_values.max())
            .product();
        for i in 0..2 {
            let mut xp = x.clone();
            xp[i] += h;
            let change = (net.forward(&xp) - net.forward(&x)).norm();
            assert!(change <= lip * h * (1.0 + 1e-6), "change {change}, bound {}", lip * h);
            assert!(change > 0.0);
        }
    }

    #[test]
    fn params_round_trip() {
        let net = MlpNet::for_data_dim(2, &[3], &mut stream(4, 0)).unwrap();
        let p = net.params();
        assert_eq!(p.len(), net.param_count());
        let back = MlpNet::from_params(net.widths(), &p).unwrap();
        assert_eq!(back, net);
        assert!(MlpNet::from_params(net.widths(), &p[1..]).is_err());
        assert!(MlpNet::new(&[3], &mut stream(0, 0)).is_err());
    }
}
