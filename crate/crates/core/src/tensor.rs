//! Dense rank-3 tensors in channel-major, row-major order.

use std::fmt;

use crate::error::{Error, Result};

/// Dimensions of a feature map: channels, rows, columns. All dimensions are at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape3 {
    channels: usize,
    height: usize,
    width: usize,
}

impl Shape3 {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!(
                "({channels}, {height}, {width}) has a zero dimension"
            )));
        }
        Ok(Shape3 {
            channels,
            height,
            width,
        })
    }

    /// Shape of a flat vector of `len` elements, stored as `(len, 1, 1)`.
    pub fn vector(len: usize) -> Result<Self> {
        Shape3::new(len, 1, 1)
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

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    #[inline]
    pub fn offset(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.channels, self.height, self.width)
    }
}

/// Feature map carrier. Single precision throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape3,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape3, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::InvalidShape(format!(
                "{} elements supplied for shape {shape} ({} expected)",
                data.len(),
                shape.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape3) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    /// Builds a zero tensor from raw dimensions, rejecting zero-sized ones.
    pub fn zeros_with_dims(channels: usize, height: usize, width: usize) -> Result<Self> {
        Ok(Tensor::zeros(Shape3::new(channels, height, width)?))
    }

    pub fn from_vector(data: Vec<f32>) -> Result<Self> {
        Tensor::new(Shape3::vector(data.len())?, data)
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> Result<f32> {
        if c >= self.shape.channels || y >= self.shape.height || x >= self.shape.width {
            return Err(Error::Index {
                c,
                y,
                x,
                shape: self.shape.to_string(),
            });
        }
        Ok(self.data[self.shape.offset(c, y, x)])
    }

    /// Unchecked-by-contract accessor for hot loops; panics on out-of-range indices.
    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.shape.offset(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        let off = self.shape.offset(c, y, x);
        self.data[off] = value;
    }

    /// One channel as a row-major `height * width` slice.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.shape.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Same data viewed with a different shape of equal element count.
    pub fn reshaped(self, shape: Shape3) -> Result<Self> {
        Tensor::new(shape, self.data)
    }
}

#[inline]
pub(crate) fn is_zero(value: f32, threshold: f32) -> bool {
    value.abs() <= threshold
}

/// Number of elements with `|e| <= threshold`. With threshold 0 this is the exact-zero count.
pub fn count_zeros(t: &Tensor, threshold: f32) -> usize {
    t.data.iter().filter(|&&e| is_zero(e, threshold)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_have_expected_layout() {
        assert_eq!(Tensor::zeros_with_dims(1, 2, 2).unwrap().data(), &[0.0; 4]);
        assert_eq!(Tensor::zeros_with_dims(2, 1, 1).unwrap().data(), &[0.0; 2]);
        assert_eq!(Tensor::zeros_with_dims(1, 1, 1).unwrap().data(), &[0.0]);
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(
            Tensor::zeros_with_dims(0, 2, 2),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(Shape3::new(1, 0, 3), Err(Error::InvalidShape(_))));
        assert!(matches!(Shape3::new(1, 3, 0), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn get_is_channel_major_row_major() {
        let t = Tensor::new(Shape3::new(1, 2, 2).unwrap(), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(0, 0, 1).unwrap(), 2.0);
        assert_eq!(t.get(0, 1, 0).unwrap(), 3.0);
        let t = Tensor::new(Shape3::new(2, 1, 1).unwrap(), vec![5.0, 6.0]).unwrap();
        assert_eq!(t.get(1, 0, 0).unwrap(), 6.0);
    }

    #[test]
    fn get_out_of_bounds() {
        let t = Tensor::zeros_with_dims(1, 2, 2).unwrap();
        assert!(matches!(t.get(1, 0, 0), Err(Error::Index { .. })));
        assert!(matches!(t.get(0, 2, 0), Err(Error::Index { .. })));
        assert!(matches!(t.get(0, 0, 2), Err(Error::Index { .. })));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(Tensor::new(Shape3::new(1, 2, 2).unwrap(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn count_zeros_examples() {
        let t = Tensor::from_vector(vec![0.0, 1.0, 0.0, 2.0]).unwrap();
        assert_eq!(count_zeros(&t, 0.0), 2);
        assert_eq!(
            count_zeros(&Tensor::zeros_with_dims(1, 3, 3).unwrap(), 0.0),
            9
        );
        let t = Tensor::from_vector(vec![1e-9, 1.0]).unwrap();
        assert_eq!(count_zeros(&t, 1e-6), 1);
    }

    #[test]
    fn negative_zero_counts_as_zero() {
        let t = Tensor::from_vector(vec![-0.0, 0.0]).unwrap();
        assert_eq!(count_zeros(&t, 0.0), 2);
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        (1usize..4, 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| {
            prop::collection::vec(prop_oneof![Just(0.0f32), -10.0f32..10.0], c * h * w)
                .prop_map(move |data| Tensor::new(Shape3::new(c, h, w).unwrap(), data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn get_round_trips_flat_data(t in arb_tensor()) {
            let s = t.shape();
            let mut seen = Vec::with_capacity(t.len());
            for c in 0..s.channels() {
                for y in 0..s.height() {
                    for x in 0..s.width() {
                        seen.push(t.get(c, y, x).unwrap());
                    }
                }
            }
            prop_assert_eq!(seen.as_slice(), t.data());
        }

        #[test]
        fn zeros_and_nonzeros_partition(t in arb_tensor()) {
            let nonzero = t.data().iter().filter(|&&e| e != 0.0).count();
            prop_assert_eq!(count_zeros(&t, 0.0) + nonzero, t.len());
        }
    }
}
