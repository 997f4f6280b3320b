use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NeuralError;

/// Layer widths of a two-hidden-layer network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: [usize; 2],
    pub output: usize,
}

impl MlpShape {
    pub fn new(input: usize, hidden: [usize; 2], output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
        }
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_dims(&self) -> [(usize, usize); 3] {
        [
            (self.input, self.hidden[0]),
            (self.hidden[0], self.hidden[1]),
            (self.hidden[1], self.output),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// One affine layer; `weight` is `fan_in x fan_out` so a batch maps as `X W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Weights of `input -> relu(hidden0) -> relu(hidden1) -> linear output`.
///
/// The same container holds gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    shape: MlpShape,
    pub layers: [Dense; 3],
}

pub type MlpGrads = MlpParams;

/// Intermediates of a batched forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub input: Array2<f64>,
    pre: [Array2<f64>; 2],
    hidden: [Array2<f64>; 2],
    pub output: Array2<f64>,
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl MlpParams {
    pub fn zeros(shape: MlpShape) -> Self {
        let layer = |(i, o): (usize, usize)| Dense {
            weight: Array2::zeros((i, o)),
            bias: Array1::zeros(o),
        };
        let [a, b, c] = shape.layer_dims();
        Self {
            shape,
            layers: [layer(a), layer(b), layer(c)],
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(shape: MlpShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        for layer in &mut p.layers {
            let fan_in = layer.weight.nrows();
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            layer.weight.mapv_inplace(|_| dist.sample(rng));
        }
        p
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape)
    }

    /// Parameter tensors in serialization order: each layer's weight
    /// (row-major) then its bias.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weight.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weight.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors().flat_map(|t| t.iter().copied())
    }

    pub fn num_params(&self) -> usize {
        self.shape.num_params()
    }

    /// Applies `f(self_i, other_i)` elementwise over matching parameters.
    pub fn zip_apply(&mut self, other: &MlpParams, mut f: impl FnMut(&mut f64, f64)) {
        assert_eq!(self.shape, other.shape, "parameter shapes differ");
        for (dst, src) in self.tensors_mut().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                f(d, s);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn add_assign(&mut self, other: &MlpParams) {
        self.zip_apply(other, |d, s| *d += s);
    }

    pub fn max_abs_diff(&self, other: &MlpParams) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// Single-sample forward pass. Skips zero inputs, which makes one-hot
    /// states cheap.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        if input.len() != self.shape.input {
            return Err(NeuralError::Shape {
                expected: self.shape.input,
                got: input.len(),
            });
        }
        let mut x = input.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut y = layer.bias.to_vec();
            let w = layer.weight.as_slice().expect("standard layout");
            let out = y.len();
            for (i, &xi) in x.iter().enumerate() {
                if xi != 0.0 {
                    let row = &w[i * out..(i + 1) * out];
                    for (yj, &wij) in y.iter_mut().zip(row) {
                        *yj += xi * wij;
                    }
                }
            }
            if idx < 2 {
                y.iter_mut().for_each(|v| *v = relu(*v));
            }
            x = y;
        }
        Ok(x)
    }

    /// Gradients of `output_grad · f(input)` with respect to every parameter.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<MlpGrads, NeuralError> {
        if input.len() != self.shape.input {
            return Err(NeuralError::Shape {
                expected: self.shape.input,
                got: input.len(),
            });
        }
        if output_grad.len() != self.shape.output {
            return Err(NeuralError::Shape {
                expected: self.shape.output,
                got: output_grad.len(),
            });
        }
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row");
        let g = Array2::from_shape_vec((1, output_grad.len()), output_grad.to_vec()).expect("row");
        let cache = self.forward_batch(x.view());
        Ok(self.backward_batch(&cache, g.view(), false).0)
    }

    /// Batched forward pass; rows are samples.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> ForwardCache {
        assert_eq!(input.ncols(), self.shape.input, "input width");
        let affine = |x: &Array2<f64>, l: &Dense| {
            let mut z = x.dot(&l.weight);
            z += &l.bias;
            z
        };
        let input = input.to_owned();
        let z0 = affine(&input, &self.layers[0]);
        let h0 = z0.mapv(relu);
        let z1 = affine(&h0, &self.layers[1]);
        let h1 = z1.mapv(relu);
        let output = affine(&h1, &self.layers[2]);
        ForwardCache {
            input,
            pre: [z0, z1],
            hidden: [h0, h1],
            output,
        }
    }

    /// Backpropagates `output_grad` (one row per sample) through a cached
    /// forward pass. Returns parameter gradients summed over the batch and,
    /// when requested, the gradient with respect to the input rows.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
        want_input_grad: bool,
    ) -> (MlpGrads, Option<Array2<f64>>) {
        let mut grads = self.zeros_like();
        let layer_inputs = [&cache.input, &cache.hidden[0], &cache.hidden[1]];
        let mut delta = output_grad.to_owned();
        for idx in (0..3).rev() {
            let g = &mut grads.layers[idx];
            // a transposed product may come back column-major
            g.weight = layer_inputs[idx]
                .t()
                .dot(&delta)
                .as_standard_layout()
                .into_owned();
            g.bias = delta.sum_axis(Axis(0));
            if idx == 0 && !want_input_grad {
                return (grads, None);
            }
            let mut upstream = delta.dot(&self.layers[idx].weight.t());
            if idx > 0 {
                // relu subgradient is 0 at 0
                ndarray::Zip::from(&mut upstream)
                    .and(&cache.pre[idx - 1])
                    .for_each(|u, &z| {
                        if z <= 0.0 {
                            *u = 0.0
                        }
                    });
            }
            delta = upstream;
        }
        (grads, Some(delta))
    }
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use ndarray::array;
    use rand::SeedableRng;

    fn toy() -> MlpParams {
        // 2-2-2-1 net with hand-picked weights
        let mut p = MlpParams::zeros(MlpShape::new(2, [2, 2], 1));
        p.layers[0].weight = array![[1.0, -1.0], [2.0, 0.5]];
        p.layers[0].bias = array![0.5, 0.0];
        p.layers[1].weight = array![[1.0, 0.0], [-2.0, 1.0]];
        p.layers[1].bias = array![0.0, -0.25];
        p.layers[2].weight = array![[3.0], [-1.0]];
        p.layers[2].bias = array![0.1];
        p
    }

    #[test]
    fn hand_computed_toy_net() {
        // x = (1, 2): z0 = (1+4+0.5, -1+1) = (5.5, 0) -> h0 = (5.5, 0)
        // z1 = (5.5, -0.25) -> h1 = (5.5, 0); y = 16.5 + 0.1
        let y = toy().forward(&[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![16.6]);
        // x = (-1, 1): z0 = (1.5, 1.5); z1 = (1.5-3, 1.5-0.25) -> h1 = (0, 1.25)
        let y = toy().forward(&[-1.0, 1.0]).unwrap();
        assert_eq!(y, vec![-1.25 + 0.1]);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let p = MlpParams::zeros(MlpShape::new(4, [64, 64], 3));
        assert_eq!(p.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn input_width_is_checked() {
        let p = MlpParams::zeros(MlpShape::new(4, [8, 8], 3));
        assert!(matches!(
            p.forward(&[1.0]),
            Err(NeuralError::Shape {
                expected: 4,
                got: 1
            })
        ));
        assert!(p.backward(&[0.0; 4], &[1.0]).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let shape = MlpShape::new(87, [64, 64], 5);
        let a = MlpParams::init(shape, &mut SimRng::seed_from_u64(3));
        let b = MlpParams::init(shape, &mut SimRng::seed_from_u64(3));
        assert_eq!(a, b);
        for l in &a.layers {
            assert!(l.bias.iter().all(|&x| x == 0.0));
        }
        // fan_in 64 layers are bounded by 1/8
        assert!(a.layers[1].weight.iter().all(|w| w.abs() <= 0.125));
        assert!(a.layers[2].weight.iter().all(|w| w.abs() <= 0.125));
        assert!(a.layers[1].weight.iter().any(|w| w.abs() > 0.1));
    }

    #[test]
    fn first_layer_is_positively_homogeneous_without_bias() {
        let p = MlpParams::init(MlpShape::new(5, [6, 6], 2), &mut SimRng::seed_from_u64(1));
        let x = array![[0.3, -1.0, 2.0, 0.0, 0.7]];
        let base = p.forward_batch(x.view());
        let scaled = p.forward_batch((&x * 2.5).view());
        for (a, b) in base.pre[0].iter().zip(scaled.pre[0].iter()) {
            assert!((b - 2.5 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_forward_matches_single_forward() {
        let p = MlpParams::init(MlpShape::new(7, [9, 5], 3), &mut SimRng::seed_from_u64(2));
        let mut rng = SimRng::seed_from_u64(4);
        let x = Array2::from_shape_fn((6, 7), |_| rng.gen_range(-1.0..1.0));
        let cache = p.forward_batch(x.view());
        for (row, out) in x.rows().into_iter().zip(cache.output.rows()) {
            let single = p.forward(row.as_slice().unwrap()).unwrap();
            for (a, b) in single.iter().zip(out.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let p = MlpParams::init(MlpShape::new(4, [8, 8], 2), &mut SimRng::seed_from_u64(5));
        let g = p.backward(&[0.1, 0.2, -0.3, 1.0], &[0.0, 0.0]).unwrap();
        assert!(g.values().all(|x| x == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_output_grad() {
        let p = MlpParams::init(MlpShape::new(4, [8, 8], 2), &mut SimRng::seed_from_u64(5));
        let x = [0.1, 0.2, -0.3, 1.0];
        let g1 = p.backward(&x, &[0.7, -0.2]).unwrap();
        let g2 = p.backward(&x, &[1.4, -0.4]).unwrap();
        for (a, b) in g1.values().zip(g2.values()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    /// Central finite differences of `w · f(x)` against the analytic path,
    /// over parameters and inputs, on random small nets.
    #[test]
    fn analytic_gradients_match_finite_differences() {
        let h = 1e-5;
        for seed in 0..25u64 {
            let mut rng = SimRng::seed_from_u64(seed);
            let shape = MlpShape::new(
                rng.gen_range(1..6),
                [rng.gen_range(2..7), rng.gen_range(2..7)],
                rng.gen_range(1..4),
            );
            let mut p = MlpParams::init(shape, &mut rng);
            // nonzero biases keep dead units off the relu kink at exactly 0
            for l in &mut p.layers {
                l.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
            }
            let x: Vec<f64> = (0..shape.input).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..shape.output)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let objective = |q: &MlpParams, x: &[f64]| -> f64 {
                q.forward(x)
                    .unwrap()
                    .iter()
                    .zip(&w)
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let xb = Array2::from_shape_vec((1, x.len()), x.clone()).unwrap();
            let wb = Array2::from_shape_vec((1, w.len()), w.clone()).unwrap();
            let cache = p.forward_batch(xb.view());
            let (grads, dx) = p.backward_batch(&cache, wb.view(), true);

            let analytic: Vec<f64> = grads.values().collect();
            let mut probe = p.clone();
            let mut idx = 0;
            let n_tensors = probe.tensors().count();
            for t in 0..n_tensors {
                let len = probe.tensors().nth(t).unwrap().len();
                for j in 0..len {
                    let orig = probe.tensors().nth(t).unwrap()[j];
                    probe.tensors_mut().nth(t).unwrap()[j] = orig + h;
                    let up = objective(&probe, &x);
                    probe.tensors_mut().nth(t).unwrap()[j] = orig - h;
                    let down = objective(&probe, &x);
                    probe.tensors_mut().nth(t).unwrap()[j] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let a = analytic[idx];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    assert!(rel < 1e-4, "seed {seed} param {idx}: {a} vs {numeric}");
                    idx += 1;
                }
            }
            let dx = dx.unwrap();
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let numeric = (objective(&p, &xp) - objective(&p, &xm)) / (2.0 * h);
                let a = dx[[0, i]];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "seed {seed} input {i}: {a} vs {numeric}");
            }
        }
    }
}
