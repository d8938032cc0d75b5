use crate::error::{Error, Result};

/// A `C x H x W` tensor stored channel-major, row-major within a channel.
///
/// Images built through [`ImageTensor::new`] are clamped to `[0, 1]`. The same
/// type also carries gradients and perturbations, which are unconstrained and
/// built with [`ImageTensor::from_raw`].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Image with values clamped into `[0, 1]`.
    pub fn new(channels: usize, height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidGeometry(channels, height, width));
        }
        if data.len() != channels * height * width {
            return Err(Error::InvalidParameter(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        for v in data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Tensor with unconstrained values (gradients, perturbations).
    pub fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor length");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::from_raw(
            channels,
            height,
            width,
            vec![0.0; channels * height * width],
        )
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self::from_raw(
            channels,
            height,
            width,
            vec![value; channels * height * width],
        )
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(other.channels, other.height, other.width)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    pub fn check_shape(&self, expected: (usize, usize, usize)) -> Result<()> {
        if self.shape() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: self.shape(),
            });
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.data.iter_mut() {
            *v *= s;
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn clamp_unit(&mut self) {
        for v in self.data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
}
