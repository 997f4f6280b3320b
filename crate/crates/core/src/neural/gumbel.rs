//! Categorical heads: Gumbel-softmax sampling and greedy selection over
//! contiguous logit groups.

use ndarray::{Array2, ArrayView2};
use rand::distributions::Open01;
use rand::Rng;

use crate::error::NeuralError;

/// Partition of an output vector into contiguous categorical groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogitGroups {
    sizes: Vec<usize>,
}

impl LogitGroups {
    pub fn new(sizes: Vec<usize>) -> Result<Self, NeuralError> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(NeuralError::Format(format!(
                "logit groups must be non-empty with positive sizes, got {sizes:?}"
            )));
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// `(start, len)` of each group.
    pub fn ranges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sizes.iter().scan(0, |start, &len| {
            let s = *start;
            *start += len;
            Some((s, len))
        })
    }
}

/// Soft relaxed sample and its hard one-hot counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelSample {
    pub soft: Vec<f64>,
    pub hard: Vec<f64>,
}

/// Standard Gumbel draws `-ln(-ln U)`, `U` uniform on the open unit interval.
pub fn sample_gumbel_noise<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            -(-u.ln()).ln()
        })
        .collect()
}

fn softmax_into(values: &[f64], out: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(values) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// First index of the maximum; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Relaxed sample with caller-supplied noise: per group
/// `softmax((logits + noise) / temperature)`.
pub fn gumbel_softmax_with_noise(
    logits: &[f64],
    noise: &[f64],
    groups: &LogitGroups,
    temperature: f64,
) -> GumbelSample {
    assert_eq!(logits.len(), groups.total());
    assert_eq!(noise.len(), logits.len());
    let perturbed: Vec<f64> = logits
        .iter()
        .zip(noise)
        .map(|(l, g)| (l + g) / temperature)
        .collect();
    let mut soft = vec![0.0; logits.len()];
    let mut hard = vec![0.0; logits.len()];
    for (start, len) in groups.ranges() {
        let range = start..start + len;
        softmax_into(&perturbed[range.clone()], &mut soft[range.clone()]);
        hard[start + argmax(&soft[range])] = 1.0;
    }
    GumbelSample { soft, hard }
}

pub fn gumbel_softmax<R: Rng + ?Sized>(
    logits: &[f64],
    groups: &LogitGroups,
    temperature: f64,
    rng: &mut R,
) -> GumbelSample {
    let noise = sample_gumbel_noise(logits.len(), rng);
    gumbel_softmax_with_noise(logits, &noise, groups, temperature)
}

/// Per-group argmax one-hot.
pub fn greedy_select(logits: &[f64], groups: &LogitGroups) -> Vec<f64> {
    let mut hard = vec![0.0; logits.len()];
    for (start, len) in groups.ranges() {
        hard[start + argmax(&logits[start..start + len])] = 1.0;
    }
    hard
}

/// Index of the selected category in each group of a one-hot vector.
pub fn group_indices(one_hot: &[f64], groups: &LogitGroups) -> Vec<usize> {
    groups
        .ranges()
        .map(|(start, len)| argmax(&one_hot[start..start + len]))
        .collect()
}

/// Row-wise [`gumbel_softmax_with_noise`], soft part only.
pub fn gumbel_soft_batch(
    logits: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    groups: &LogitGroups,
    temperature: f64,
) -> Array2<f64> {
    let mut soft = Array2::zeros(logits.raw_dim());
    let mut buf = vec![0.0; logits.ncols()];
    for ((l, g), mut out) in logits
        .rows()
        .into_iter()
        .zip(noise.rows())
        .zip(soft.rows_mut())
    {
        for (b, (li, gi)) in buf.iter_mut().zip(l.iter().zip(g.iter())) {
            *b = (li + gi) / temperature;
        }
        let out = out.as_slice_mut().expect("row-major");
        for (start, len) in groups.ranges() {
            softmax_into(&buf[start..start + len], &mut out[start..start + len]);
        }
    }
    soft
}

/// Row-wise [`greedy_select`].
pub fn greedy_batch(logits: ArrayView2<f64>, groups: &LogitGroups) -> Array2<f64> {
    let mut hard = Array2::zeros(logits.raw_dim());
    for (l, mut out) in logits.rows().into_iter().zip(hard.rows_mut()) {
        let l = l.to_vec();
        for (start, len) in groups.ranges() {
            out[start + argmax(&l[start..start + len])] = 1.0;
        }
    }
    hard
}

/// Pulls a gradient on the soft sample back to the logits through the
/// tempered softmax: `dl_i = s_i (ds_i - sum_j s_j ds_j) / temperature`.
pub fn softmax_backward_batch(
    soft: ArrayView2<f64>,
    grad_soft: ArrayView2<f64>,
    groups: &LogitGroups,
    temperature: f64,
) -> Array2<f64> {
    let mut out = Array2::zeros(soft.raw_dim());
    for ((s, g), mut o) in soft
        .rows()
        .into_iter()
        .zip(grad_soft.rows())
        .zip(out.rows_mut())
    {
        for (start, len) in groups.ranges() {
            let dot: f64 = (start..start + len).map(|i| s[i] * g[i]).sum();
            for i in start..start + len {
                o[i] = s[i] * (g[i] - dot) / temperature;
            }
        }
    }
    out
}
