//! Deterministic random stream, stochastic gradient masks and global-norm
//! clipping.

use thiserror::Error;

use crate::tensor::{global_l2_norm, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("sampling rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("clipping threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("mask shape {mask:?} does not match gradient shape {grad:?}")]
    ShapeMismatch { mask: Vec<usize>, grad: Vec<usize> },
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 stream. Identical seeds and call sequences give bit-identical
/// output on every platform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Raw internal state, for checkpointing.
    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn from_state(state: u64) -> Self {
        Self { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n` (`n > 0`). Uses the 53-bit float so other
    /// implementations of the stream reproduce it exactly.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal via Box–Muller; consumes two uniforms and keeps no cache.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Independent stream seeded from this stream's next output.
    pub fn fork(&mut self) -> Self {
        Self::new(self.next_u64())
    }

    /// Child stream for the `index`-th parameter tensor: seeded with
    /// `parent_output ^ index`. Advances the parent by one draw.
    pub fn child(&mut self, index: u64) -> Self {
        Self::new(self.next_u64() ^ index)
    }
}

/// 0/1 mask with the shape of the gradient it applies to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTensor {
    shape: Vec<usize>,
    keep: Vec<bool>,
}

impl MaskTensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn entries(&self) -> &[bool] {
        &self.keep
    }

    pub fn count_ones(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn density(&self) -> f64 {
        self.count_ones() as f64 / self.keep.len() as f64
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect(),
        )
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            keep: vec![true; shape.iter().product()],
        }
    }

    pub fn from_bits(shape: &[usize], keep: Vec<bool>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), keep.len());
        Self {
            shape: shape.to_vec(),
            keep,
        }
    }
}

pub fn validate_rate(s: f64) -> Result<(), SamplingError> {
    if (0.0..=1.0).contains(&s) {
        Ok(())
    } else {
        Err(SamplingError::InvalidRate(s))
    }
}

/// Draws one uniform per entry in row-major order; entry is 1 iff `u < s`.
pub fn gen_mask(rng: &mut RngStream, shape: &[usize], s: f64) -> Result<MaskTensor, SamplingError> {
    validate_rate(s)?;
    let n: usize = shape.iter().product();
    let keep = (0..n).map(|_| rng.next_f64() < s).collect();
    Ok(MaskTensor {
        shape: shape.to_vec(),
        keep,
    })
}

/// `φ = Ω ⊙ g`. Dropped entries become `+0.0`.
pub fn apply_mask(mask: &MaskTensor, grad: &Tensor) -> Result<Tensor, SamplingError> {
    if mask.shape != grad.shape() {
        return Err(SamplingError::ShapeMismatch {
            mask: mask.shape.clone(),
            grad: grad.shape().to_vec(),
        });
    }
    let data = grad
        .as_slice()
        .iter()
        .zip(&mask.keep)
        .map(|(&g, &k)| if k { g } else { 0.0 })
        .collect();
    Ok(Tensor::from_parts(grad.shape().to_vec(), data))
}

/// Rescales every tensor by `c / n` when the global norm `n` exceeds `c`.
pub fn clip_by_global_norm(grads: &[Tensor], c: f64) -> Result<Vec<Tensor>, SamplingError> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(SamplingError::InvalidThreshold(c));
    }
    let n = global_l2_norm(grads);
    if n <= c {
        return Ok(grads.to_vec());
    }
    let factor = c / n;
    Ok(grads.iter().map(|g| g.scale(factor)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Stand-alone scalar splitmix64, written from the recurrence constants.
    fn reference_uniforms(seed: u64, n: usize) -> Vec<f64> {
        let mut state = seed;
        (0..n)
            .map(|_| {
                state = state.wrapping_add(0x9E3779B97F4A7C15);
                let mut z = state;
                z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
                let out = z ^ (z >> 31);
                (out >> 11) as f64 / 9007199254740992.0
            })
            .collect()
    }

    #[test]
    fn first_outputs_of_seed_42() {
        let mut rng = RngStream::new(42);
        assert_eq!(rng.next_u64(), 0xbdd732262feb6e95);
        assert_eq!(rng.next_u64(), 0x28efe333b266f103);
    }

    #[test]
    fn mask_seed_42_half_rate() {
        let mut rng = RngStream::new(42);
        let mask = gen_mask(&mut rng, &[8], 0.5).unwrap();
        let bits: Vec<u8> = mask.entries().iter().map(|&k| k as u8).collect();
        assert_eq!(bits, vec![0, 1, 1, 1, 1, 0, 1, 0]);
        let oracle: Vec<u8> = reference_uniforms(42, 8)
            .into_iter()
            .map(|u| (u < 0.5) as u8)
            .collect();
        assert_eq!(bits, oracle);
    }

    #[test]
    fn mask_advances_stream_by_entry_count() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        gen_mask(&mut a, &[3, 5], 0.3).unwrap();
        for _ in 0..15 {
            b.next_u64();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn extreme_rates() {
        let mut rng = RngStream::new(1);
        assert_eq!(gen_mask(&mut rng, &[4, 4], 1.0).unwrap().count_ones(), 16);
        assert_eq!(gen_mask(&mut rng, &[4, 4], 0.0).unwrap().count_ones(), 0);
        assert_eq!(
            gen_mask(&mut rng, &[2], 1.5),
            Err(SamplingError::InvalidRate(1.5))
        );
        assert!(gen_mask(&mut rng, &[2], -0.1).is_err());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = RngStream::new(0);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn apply_mask_examples() {
        let mask = MaskTensor::from_bits(&[3], vec![true, false, true]);
        let g = Tensor::from_vec(vec![5.0, -3.0, 2.0]).unwrap();
        assert_eq!(apply_mask(&mask, &g).unwrap().as_slice(), &[5.0, 0.0, 2.0]);
        let full = MaskTensor::ones(&[3]);
        assert_eq!(apply_mask(&full, &g).unwrap(), g);
        let wrong = MaskTensor::ones(&[4]);
        assert!(matches!(
            apply_mask(&wrong, &g),
            Err(SamplingError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn clipping() {
        // global norm 10: sqrt(6^2 + 8^2)
        let grads = vec![
            Tensor::from_vec(vec![6.0]).unwrap(),
            Tensor::from_vec(vec![0.0, 8.0]).unwrap(),
        ];
        let clipped = clip_by_global_norm(&grads, 5.0).unwrap();
        assert_eq!(clipped[0].as_slice(), &[3.0]);
        assert_eq!(clipped[1].as_slice(), &[0.0, 4.0]);

        let small = vec![Tensor::from_vec(vec![3.0]).unwrap()];
        assert_eq!(clip_by_global_norm(&small, 5.0).unwrap(), small);
        assert!(clip_by_global_norm(&small, 0.0).is_err());
        assert!(clip_by_global_norm(&small, -1.0).is_err());
    }

    #[test]
    fn child_streams_xor_index() {
        let mut parent = RngStream::new(3);
        let mut probe = parent.clone();
        let out = probe.next_u64();
        assert_eq!(parent.child(5), RngStream::new(out ^ 5));
    }

    #[test]
    fn normal_draws_have_unit_moments() {
        let mut rng = RngStream::new(11);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }
}
