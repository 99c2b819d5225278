//! Complex FFT for arbitrary lengths and its 2-D row/column composition.
//!
//! Power-of-two lengths use an iterative radix-2 decimation-in-time kernel;
//! other lengths go through Bluestein's chirp-z algorithm on a padded
//! power-of-two transform.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

pub use num_complex::Complex64;

#[derive(Debug, Clone)]
struct Radix2 {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Radix2 {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if n == 1 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Self { n, twiddles, bitrev }
    }

    fn process(&self, buf: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

#[derive(Debug, Clone)]
struct Bluestein {
    n: usize,
    inner: Radix2,
    chirp: Vec<Complex64>,
    /// Forward transform of the conjugate chirp filter, pre-scaled by 1/m.
    filter: Vec<Complex64>,
}

impl Bluestein {
    fn new(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2::new(m);
        // k² mod 2n keeps the chirp phase argument small.
        let chirp: Vec<Complex64> = (0..n)
            .map(|k| {
                let k2 = ((k as u128 * k as u128) % (2 * n as u128)) as f64;
                Complex64::from_polar(1.0, -PI * k2 / n as f64)
            })
            .collect();
        let mut filter = vec![Complex64::new(0.0, 0.0); m];
        filter[0] = chirp[0].conj();
        for k in 1..n {
            filter[k] = chirp[k].conj();
            filter[m - k] = chirp[k].conj();
        }
        inner.process(&mut filter);
        let scale = 1.0 / m as f64;
        for f in &mut filter {
            *f *= scale;
        }
        Self {
            n,
            inner,
            chirp,
            filter,
        }
    }

    fn process(&self, buf: &mut [Complex64]) {
        let m = self.inner.n;
        let mut work = vec![Complex64::new(0.0, 0.0); m];
        for k in 0..self.n {
            work[k] = buf[k] * self.chirp[k];
        }
        self.inner.process(&mut work);
        for (w, f) in work.iter_mut().zip(&self.filter) {
            // Inverse via conjugation: ifft(x) = conj(fft(conj(x))) / m.
            *w = (*w * f).conj();
        }
        self.inner.process(&mut work);
        for k in 0..self.n {
            buf[k] = work[k].conj() * self.chirp[k];
        }
    }
}

#[derive(Debug, Clone)]
enum Kernel {
    Radix2(Radix2),
    Bluestein(Bluestein),
}

/// A planned 1-D DFT of fixed length.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    kernel: Kernel,
}

impl Fft {
    /// Plans a transform of length `n` (`n ≥ 1`).
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "FFT length must be positive");
        let kernel = if n.is_power_of_two() {
            Kernel::Radix2(Radix2::new(n))
        } else {
            Kernel::Bluestein(Bluestein::new(n))
        };
        Self { n, kernel }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized forward DFT, `X_k = Σ x_j e^{-2πi jk/n}`, in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n, "buffer length does not match plan");
        match &self.kernel {
            Kernel::Radix2(k) => k.process(buf),
            Kernel::Bluestein(k) => k.process(buf),
        }
    }

    /// Inverse DFT including the `1/n` factor, in place.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward(buf);
        let scale = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v = v.conj() * scale;
        }
    }
}

/// Planned 2-D DFT over a row-major `height × width` buffer.
#[derive(Debug, Clone)]
pub struct Fft2 {
    height: usize,
    width: usize,
    rows: Fft,
    cols: Fft,
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            rows: Fft::new(width),
            cols: Fft::new(height),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.apply(buf, false);
    }

    /// Normalized inverse (`1/(h·w)`).
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.apply(buf, true);
    }

    fn apply(&self, buf: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        assert_eq!(buf.len(), h * w, "buffer length does not match plan");
        for row in buf.chunks_exact_mut(w) {
            if inverse {
                self.rows.inverse(row);
            } else {
                self.rows.forward(row);
            }
        }
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = buf[y * w + x];
            }
            if inverse {
                self.cols.inverse(&mut column);
            } else {
                self.cols.forward(&mut column);
            }
            for y in 0..h {
                buf[y * w + x] = column[y];
            }
        }
    }
}

/// Signed DFT frequency of bin `k` for length `n`, in cycles per sample
/// (`0, 1/n, …, ⌈n/2⌉−1)/n, −⌊n/2⌋/n, …, −1/n`).
pub fn fft_freq(k: usize, n: usize) -> f64 {
    let k = k as f64;
    let n_f = n as f64;
    if (k as usize) < n.div_ceil(2) {
        k / n_f
    } else {
        (k - n_f) / n_f
    }
}
