//! Dense 4-D tensors (batch × channels × height × width) and convolution
//! kernel banks. Everything is `f64`, stored row-major in one flat `Vec` so
//! slices of whole planes and channel ranges come out contiguous.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("inconsistent state: {0}")]
    Consistency(String),
}

/// Batch-major activation tensor: `n` samples × `c` channels × `h` × `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Self, TensorError> {
        Self::check_dims(n, c, h, w)?;
        Ok(Self { n, c, h, w, data: vec![0.0; n * c * h * w] })
    }

    pub fn from_vec(
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        data: Vec<f64>,
    ) -> Result<Self, TensorError> {
        Self::check_dims(n, c, h, w)?;
        if data.len() != n * c * h * w {
            return Err(TensorError::Dimension(format!(
                "tensor {}x{}x{}x{} needs {} values, got {}",
                n,
                c,
                h,
                w,
                n * c * h * w,
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    /// Gaussian-filled tensor, deterministic for a given RNG state.
    pub fn randn<R: Rng>(
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        mean: f64,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Self::check_dims(n, c, h, w)?;
        let dist = Normal::new(mean, sigma)
            .map_err(|e| TensorError::Config(format!("bad normal distribution: {e}")))?;
        let data = (0..n * c * h * w).map(|_| dist.sample(rng)).collect();
        Ok(Self { n, c, h, w, data })
    }

    fn check_dims(n: usize, c: usize, h: usize, w: usize) -> Result<(), TensorError> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(TensorError::Dimension(format!(
                "tensor dims must all be positive, got {n}x{c}x{h}x{w}"
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        self.data[((n * self.c + c) * self.h + y) * self.w + x] = v;
    }

    /// One `h`×`w` plane of a sample/channel pair, contiguous.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let start = (n * self.c + c) * self.h * self.w;
        &self.data[start..start + self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let start = (n * self.c + c) * self.h * self.w;
        let len = self.h * self.w;
        &mut self.data[start..start + len]
    }

    /// All channels of one sample, contiguous: `c`·`h`·`w` values.
    #[inline]
    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.c * self.h * self.w;
        &self.data[n * len..(n + 1) * len]
    }

    /// Copy of channels `[start, start+count)` across the whole batch.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self, TensorError> {
        if count == 0 || start + count > self.c {
            return Err(TensorError::Dimension(format!(
                "channel slice [{start}, {}) out of range for {} channels",
                start + count,
                self.c
            )));
        }
        let plane = self.h * self.w;
        let mut data = Vec::with_capacity(self.n * count * plane);
        for n in 0..self.n {
            let base = (n * self.c + start) * plane;
            data.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Self::from_vec(self.n, count, self.h, self.w, data)
    }
}

/// A bank of convolution kernels: `maps` output maps, each `channels`×`kh`×`kw`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    maps: usize,
    channels: usize,
    kh: usize,
    kw: usize,
    data: Vec<f64>,
}

impl KernelBank {
    pub fn zeros(maps: usize, channels: usize, kh: usize, kw: usize) -> Result<Self, TensorError> {
        Self::check_dims(maps, channels, kh, kw)?;
        Ok(Self { maps, channels, kh, kw, data: vec![0.0; maps * channels * kh * kw] })
    }

    pub fn from_vec(
        maps: usize,
        channels: usize,
        kh: usize,
        kw: usize,
        data: Vec<f64>,
    ) -> Result<Self, TensorError> {
        Self::check_dims(maps, channels, kh, kw)?;
        if data.len() != maps * channels * kh * kw {
            return Err(TensorError::Dimension(format!(
                "kernel bank {}x{}x{}x{} needs {} values, got {}",
                maps,
                channels,
                kh,
                kw,
                maps * channels * kh * kw,
                data.len()
            )));
        }
        Ok(Self { maps, channels, kh, kw, data })
    }

    /// Zero-mean Gaussian kernels, deterministic for a given RNG state.
    pub fn randn<R: Rng>(
        maps: usize,
        channels: usize,
        kh: usize,
        kw: usize,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Self::check_dims(maps, channels, kh, kw)?;
        let dist = Normal::new(0.0, sigma)
            .map_err(|e| TensorError::Config(format!("bad normal distribution: {e}")))?;
        let data = (0..maps * channels * kh * kw).map(|_| dist.sample(rng)).collect();
        Ok(Self { maps, channels, kh, kw, data })
    }

    fn check_dims(maps: usize, channels: usize, kh: usize, kw: usize) -> Result<(), TensorError> {
        if maps == 0 || channels == 0 || kh == 0 || kw == 0 {
            return Err(TensorError::Dimension(format!(
                "kernel dims must all be positive, got {maps}x{channels}x{kh}x{kw}"
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.maps, self.channels, self.kh, self.kw)
    }

    pub fn maps(&self) -> usize {
        self.maps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kernel_h(&self) -> usize {
        self.kh
    }

    pub fn kernel_w(&self) -> usize {
        self.kw
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// One kernel (`channels`×`kh`×`kw` values), contiguous.
    #[inline]
    pub fn map(&self, j: usize) -> &[f64] {
        let len = self.channels * self.kh * self.kw;
        &self.data[j * len..(j + 1) * len]
    }

    /// One row of one kernel channel, contiguous `kw` values.
    #[inline]
    pub fn row(&self, j: usize, c: usize, p: usize) -> &[f64] {
        let start = ((j * self.channels + c) * self.kh + p) * self.kw;
        &self.data[start..start + self.kw]
    }

    /// Kernels `[start, start+count)` as their own bank (contiguous copy).
    pub fn slice_maps(&self, start: usize, count: usize) -> Result<Self, TensorError> {
        if count == 0 || start + count > self.maps {
            return Err(TensorError::Dimension(format!(
                "map slice [{start}, {}) out of range for {} maps",
                start + count,
                self.maps
            )));
        }
        let len = self.channels * self.kh * self.kw;
        let data = self.data[start * len..(start + count) * len].to_vec();
        Self::from_vec(count, self.channels, self.kh, self.kw, data)
    }

    /// Channels `[start, start+count)` of every kernel (strided copy).
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self, TensorError> {
        if count == 0 || start + count > self.channels {
            return Err(TensorError::Dimension(format!(
                "channel slice [{start}, {}) out of range for {} channels",
                start + count,
                self.channels
            )));
        }
        let plane = self.kh * self.kw;
        let mut data = Vec::with_capacity(self.maps * count * plane);
        for j in 0..self.maps {
            let base = (j * self.channels + start) * plane;
            data.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Self::from_vec(self.maps, count, self.kh, self.kw, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor4::from_vec(1, 2, 2, 3, (0..12).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.at(0, 0, 0, 0), 0.0);
        assert_eq!(t.at(0, 0, 1, 2), 5.0);
        assert_eq!(t.at(0, 1, 0, 0), 6.0);
        assert_eq!(t.plane(0, 1), &[6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(Tensor4::zeros(1, 0, 3, 3).is_err());
        assert!(KernelBank::zeros(2, 3, 0, 5).is_err());
    }

    #[test]
    fn from_vec_length_must_match() {
        assert!(Tensor4::from_vec(1, 1, 2, 2, vec![0.0; 3]).is_err());
        assert!(KernelBank::from_vec(1, 1, 2, 2, vec![0.0; 5]).is_err());
    }

    #[test]
    fn channel_slice_matches_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = Tensor4::randn(3, 5, 4, 4, 0.0, 1.0, &mut rng).unwrap();
        let s = t.slice_channels(1, 3).unwrap();
        assert_eq!(s.dims(), (3, 3, 4, 4));
        for n in 0..3 {
            for c in 0..3 {
                assert_eq!(s.plane(n, c), t.plane(n, c + 1));
            }
        }
        assert!(t.slice_channels(4, 2).is_err());
    }

    #[test]
    fn kernel_slices_preserve_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bank = KernelBank::randn(6, 4, 3, 3, 0.01, &mut rng).unwrap();
        let maps = bank.slice_maps(2, 3).unwrap();
        assert_eq!(maps.dims(), (3, 4, 3, 3));
        for j in 0..3 {
            assert_eq!(maps.map(j), bank.map(j + 2));
        }
        let chans = bank.slice_channels(1, 2).unwrap();
        assert_eq!(chans.dims(), (6, 2, 3, 3));
        for j in 0..6 {
            for c in 0..2 {
                assert_eq!(chans.row(j, c, 0), bank.row(j, c + 1, 0));
            }
        }
    }

    #[test]
    fn randn_is_seed_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        let x = Tensor4::randn(2, 2, 3, 3, 0.0, 0.01, &mut a).unwrap();
        let y = Tensor4::randn(2, 2, 3, 3, 0.0, 0.01, &mut b).unwrap();
        assert_eq!(x, y);
    }
}
