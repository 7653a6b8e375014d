use crate::error::TensorError;
use crate::scalar::Real;

/// Dense N-D array in row-major order. The canonical feature layout is
/// `[C, H, W]`; patch matrices use `[N, D]`; scalars use `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self, TensorError> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor { shape, data: vec![T::ZERO; n], requires_grad: false }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n], requires_grad: false }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value], requires_grad: false }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(&mut f).collect(),
            requires_grad: false,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    /// Interpret as `[C, H, W]`.
    pub fn dims3(&self) -> Result<(usize, usize, usize), TensorError> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::ShapeMismatch {
                axis: "rank",
                expected: 3,
                got: self.shape.len(),
            }),
        }
    }

    /// Interpret as `[N, D]`.
    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            &[n, d] => Ok((n, d)),
            _ => Err(TensorError::ShapeMismatch {
                axis: "rank",
                expected: 2,
                got: self.shape.len(),
            }),
        }
    }

    pub fn at3(&self, c: usize, y: usize, x: usize) -> T {
        let (_, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                expected,
                got: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lossless for f32 -> f64; rounds toward nearest for f64 -> f32.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }
}

/// Out-of-range source positions for padding and sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Symmetric reflection with edge repeat: `abc -> abc|cba`.
    Reflect,
    /// Clamp to the nearest edge sample.
    Replicate,
}

/// Weights of one 2-D convolution layer. Kernels default to 3x3 throughout
/// the model; other sizes appear only where a stage explicitly needs them.
#[derive(Clone, Debug)]
pub struct ConvParams<T: Real = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> ConvParams<T> {
    pub fn new(
        weights: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Self, TensorError> {
        if weights.shape().len() != 4 {
            return Err(TensorError::ShapeMismatch {
                axis: "weight rank",
                expected: 4,
                got: weights.shape().len(),
            });
        }
        if bias.shape().len() != 1 || bias.shape()[0] != weights.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                axis: "bias/out-channel",
                expected: weights.shape()[0],
                got: bias.len(),
            });
        }
        if stride == 0 {
            return Err(TensorError::arg("conv2d", "stride must be positive"));
        }
        Ok(ConvParams { weights, bias, stride, padding })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeDataMismatch { .. }));
    }

    #[test]
    fn conv_params_validates_bias() {
        let w = Tensor::<f32>::zeros(vec![4, 2, 3, 3]);
        let b = Tensor::<f32>::zeros(vec![3]);
        assert!(ConvParams::new(w, b, 1, 1).is_err());
    }

    #[test]
    fn cast_roundtrip_f32_f64_exact() {
        let t = Tensor::<f32>::from_fn(vec![7], |i| (i as f32) * 0.1 - 0.3);
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t.data(), back.data());
    }
}
