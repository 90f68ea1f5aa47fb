//! Small helpers for dense complex vectors stored as `[Complex64]`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;

/// `aᴴb`.
#[inline]
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `Re(aᴴb)`.
#[inline]
pub fn re_dot(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

#[inline]
pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

#[inline]
pub fn norm(a: &[C64]) -> f64 {
    norm_sqr(a).sqrt()
}

/// Row-vector times column-vector without conjugation, `h·p`.
#[inline]
pub fn row_mul(h: &[C64], p: &[C64]) -> C64 {
    h.iter().zip(p).map(|(x, y)| x * y).sum()
}

pub fn dist(a: &[C64], b: &[C64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

pub fn scale(a: &[C64], s: f64) -> Vec<C64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += s·x`
#[inline]
pub fn axpy(y: &mut [C64], s: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn all_finite(a: &[C64]) -> bool {
    a.iter().all(|x| x.re.is_finite() && x.im.is_finite())
}

/// Draw one sample of CN(0, var).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

pub fn complex_gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, var: f64) -> Vec<C64> {
    (0..n).map(|_| complex_gaussian(rng, var)).collect()
}
