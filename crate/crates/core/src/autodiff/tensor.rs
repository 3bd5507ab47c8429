use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::AutodiffError;

/// How a freshly built tensor is filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform on `(-scale, scale)`.
    Uniform(f64),
    /// Normal with mean zero and the given standard deviation.
    Normal(f64),
}

/// Dense row-major array of `f64` with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize, AutodiffError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(AutodiffError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// Builds a tensor, drawing any random entries from `rng`.
    pub fn build<R: Rng + ?Sized>(shape: &[usize], init: Init, rng: &mut R) -> Result<Self, AutodiffError> {
        let n = check_shape(shape)?;
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => {
                if !c.is_finite() {
                    return Err(AutodiffError::Domain { op: "constant-init", detail: format!("value {c}") });
                }
                vec![c; n]
            }
            Init::Uniform(s) => {
                if !s.is_finite() || s < 0.0 {
                    return Err(AutodiffError::Domain { op: "uniform-init", detail: format!("scale {s}") });
                }
                if s == 0.0 {
                    vec![0.0; n]
                } else {
                    let dist = Uniform::new(-s, s).expect("finite positive scale");
                    (0..n).map(|_| dist.sample(rng)).collect()
                }
            }
            Init::Normal(sigma) => {
                let dist = Normal::new(0.0, sigma)
                    .map_err(|e| AutodiffError::Domain { op: "normal-init", detail: e.to_string() })?;
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        };
        Ok(Self { shape: shape.to_vec(), data, requires_grad: false, grad: None })
    }

    /// Same as [`Tensor::build`] with a private generator seeded from `seed`.
    pub fn build_seeded(shape: &[usize], init: Init, seed: u64) -> Result<Self, AutodiffError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(shape, init, &mut rng)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, AutodiffError> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {shape:?} holds {n} values, got {}", data.len()),
            });
        }
        Ok(Self { shape: shape.to_vec(), data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, AutodiffError> {
        let n = check_shape(shape)?;
        Ok(Self { shape: shape.to_vec(), data: vec![0.0; n], requires_grad: false, grad: None })
    }

    /// Rank-1 tensor. Panics on empty input.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "Tensor::vector needs at least one element");
        Self { shape: vec![data.len()], data, requires_grad: false, grad: None }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value], requires_grad: false, grad: None }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub(crate) fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_and_constant() {
        let z = Tensor::build_seeded(&[2, 2], Init::Zeros, 0).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let c = Tensor::build_seeded(&[3], Init::Constant(1.5), 0).unwrap();
        assert_eq!(c.data(), &[1.5, 1.5, 1.5]);
    }

    #[test]
    fn seeded_normal_is_reproducible() {
        let a = Tensor::build_seeded(&[4], Init::Normal(0.1), 7).unwrap();
        let b = Tensor::build_seeded(&[4], Init::Normal(0.1), 7).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = Tensor::build_seeded(&[4], Init::Normal(0.1), 8).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn uniform_respects_bounds() {
        let t = Tensor::build_seeded(&[1000], Init::Uniform(0.08), 3).unwrap();
        assert!(t.data().iter().all(|v| v.abs() < 0.08));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(Tensor::zeros(&[2, 0]), Err(AutodiffError::InvalidShape(_))));
        assert!(matches!(Tensor::zeros(&[]), Err(AutodiffError::InvalidShape(_))));
        assert!(Tensor::from_vec(&[2], vec![1.0]).is_err());
    }
}
