//! Wirtinger gradient `∂g/∂p*` of the CSPD objective.
//!
//! Blocks are computed per `(k, c)` from the scalars `a`, `b`, `c` instead of
//! materializing the block-diagonal stacked operators; the cost is
//! `O(K²·N_v·M)` for the rate part plus one delay-domain round trip per user
//! for the smoothing part.

use crate::cvec::{axpy, C64};
use crate::objective::{PrecoderStack, Problem};

/// Per-`(k, c)` scalars, row-major `[user][subcarrier]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradScalars {
    /// `a = Γ⁻¹ h_{k,c} p_k^c`
    pub a: Vec<C64>,
    /// `c = (1 + (p_k^c)ᴴ h_{k,c}ᴴ a)⁻¹`
    pub c: Vec<f64>,
    /// `b = a·c·a*`
    pub b: Vec<f64>,
    n_v: usize,
}

impl GradScalars {
    pub fn a(&self, k: usize, c: usize) -> C64 {
        self.a[k * self.n_v + c]
    }
    pub fn c(&self, k: usize, c: usize) -> f64 {
        self.c[k * self.n_v + c]
    }
    pub fn b(&self, k: usize, c: usize) -> f64 {
        self.b[k * self.n_v + c]
    }
}

pub fn grad_scalars(problem: &Problem<'_>, p: &PrecoderStack) -> GradScalars {
    scalars_from_slice(problem, p.as_slice())
}

fn scalars_from_slice(problem: &Problem<'_>, p: &[C64]) -> GradScalars {
    let ch = problem.channel();
    let (kk, n_v) = (ch.users(), ch.subcarriers());
    let mut a = vec![C64::new(0.0, 0.0); kk * n_v];
    let mut cs = vec![0.0; kk * n_v];
    let mut b = vec![0.0; kk * n_v];
    for c in 0..n_v {
        let x = problem.cross_gains(p, c);
        fill_scalars(problem, &x, c, &mut a, &mut cs, &mut b);
    }
    GradScalars { a, c: cs, b, n_v }
}

fn fill_scalars(problem: &Problem<'_>, x: &[C64], c: usize, a: &mut [C64], cs: &mut [f64], b: &mut [f64]) {
    let kk = problem.channel().users();
    let n_v = problem.channel().subcarriers();
    for k in 0..kk {
        let gamma = problem.sigma_z2()
            + (0..kk)
                .filter(|&l| l != k)
                .map(|l| x[k * kk + l].norm_sqr())
                .sum::<f64>();
        let s = x[k * kk + k];
        let ak = s / gamma;
        // (p_k^c)ᴴ h_{k,c}ᴴ a = |s|²/Γ, real and nonnegative
        let ck = 1.0 / (1.0 + s.norm_sqr() / gamma);
        let i = k * n_v + c;
        a[i] = ak;
        cs[i] = ck;
        b[i] = ak.norm_sqr() * ck;
    }
}

/// `grad f(p_k^c) = Σ_{l≠k} w_l b_{l,c} h_{l,c}ᴴ h_{l,c} p_k^c − w_k a_{k,c} c_{k,c} h_{k,c}ᴴ`.
pub fn grad_f_block(problem: &Problem<'_>, scal: &GradScalars, p: &PrecoderStack, k: usize, c: usize) -> Vec<C64> {
    let ch = problem.channel();
    let w = problem.weights();
    let pk = p.block(k, c);
    let mut out = vec![C64::new(0.0, 0.0); ch.antennas()];
    for l in (0..ch.users()).filter(|&l| l != k) {
        let h = ch.row(l, c);
        let coeff = w[l] * scal.b(l, c) * crate::cvec::row_mul(h, pk);
        for (o, hi) in out.iter_mut().zip(h) {
            *o += coeff * hi.conj();
        }
    }
    let coeff = -(w[k] * scal.c(k, c)) * scal.a(k, c);
    for (o, hi) in out.iter_mut().zip(ch.row(k, c)) {
        *o += coeff * hi.conj();
    }
    out
}

/// Gradient of the rate part `f = −WSR` only.
pub fn grad_f(problem: &Problem<'_>, p: &[C64]) -> Vec<C64> {
    let ch = problem.channel();
    let (kk, n_v, m) = (ch.users(), ch.subcarriers(), ch.antennas());
    let w = problem.weights();
    let mut out = vec![C64::new(0.0, 0.0); p.len()];
    let mut a = vec![C64::new(0.0, 0.0); kk * n_v];
    let mut cs = vec![0.0; kk * n_v];
    let mut b = vec![0.0; kk * n_v];
    for c in 0..n_v {
        let x = problem.cross_gains(p, c);
        fill_scalars(problem, &x, c, &mut a, &mut cs, &mut b);
        for k in 0..kk {
            let s = (k * n_v + c) * m;
            let block = &mut out[s..s + m];
            for l in 0..kk {
                let h = ch.row(l, c);
                let coeff = if l == k {
                    -(w[k] * cs[k * n_v + c]) * a[k * n_v + c]
                } else {
                    // x[l][k] = h_{l,c} p_k^c
                    w[l] * b[l * n_v + c] * x[l * kk + k]
                };
                for (o, hi) in block.iter_mut().zip(h) {
                    *o += coeff * hi.conj();
                }
            }
        }
    }
    out
}

/// `Hᴴ Mᴴ M H p`, the gradient of the delay indicator.
pub fn grad_d(problem: &Problem<'_>, p: &[C64]) -> Vec<C64> {
    let ch = problem.channel();
    let block = ch.subcarriers() * ch.antennas();
    let mut out = Vec::with_capacity(p.len());
    for k in 0..ch.users() {
        let mut profile = problem.delay_profile(p, k);
        let keep = problem.mask().cutoff();
        for v in &mut profile[..keep] {
            *v = C64::new(0.0, 0.0);
        }
        let back = problem.dft().dft(&profile);
        out.extend(ch.adjoint_user(k, &back).expect("length n_v"));
        debug_assert_eq!(out.len(), (k + 1) * block);
    }
    out
}

/// Full gradient `grad f + α·Hᴴ Mᴴ M H p`.
pub fn grad_g(problem: &Problem<'_>, p: &[C64]) -> Vec<C64> {
    let mut out = grad_f(problem, p);
    if problem.alpha() != 0.0 {
        axpy(&mut out, C64::new(problem.alpha(), 0.0), &grad_d(problem, p));
    }
    out
}

/// Central-difference estimate of the Wirtinger gradient `∂fn/∂p*`
/// `= ½(∂fn/∂Re p + j·∂fn/∂Im p)`.
pub fn fd_gradient_oracle<F>(func: F, p: &[C64], eps: f64) -> Vec<C64>
where
    F: Fn(&[C64]) -> f64,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut work = p.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let fp = func(&work);
        work[i] = orig - eps;
        let fm = func(&work);
        let d_re = (fp - fm) / (2.0 * eps);
        work[i] = orig + C64::new(0.0, eps);
        let fp = func(&work);
        work[i] = orig - C64::new(0.0, eps);
        let fm = func(&work);
        let d_im = (fp - fm) / (2.0 * eps);
        work[i] = orig;
        out.push(C64::new(0.5 * d_re, 0.5 * d_im));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channel, ChannelSet, SystemConfig};
    use crate::cvec::{complex_gaussian_vec, dist, norm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cfg(k: usize, m_x: usize, n_v: usize, alpha: f64) -> SystemConfig {
        SystemConfig {
            m_x,
            m_z: 1,
            k,
            n_c: n_v,
            n_v,
            n_e: n_v / 4,
            taps: (n_v / 4).max(1),
            alpha,
            sigma_z2: 0.4,
            weights: (0..k).map(|i| 0.5 + i as f64 * 0.3).collect(),
            ..Default::default()
        }
    }

    fn instance(seed: u64, cfg: &SystemConfig) -> (ChannelSet, PrecoderStack) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = generate_channel(cfg, &mut rng).unwrap();
        let p = PrecoderStack::from_vec(cfg.k, cfg.n_v, cfg.m(), complex_gaussian_vec(&mut rng, cfg.stack_len(), 0.3)).unwrap();
        (ch, p)
    }

    #[test]
    fn zero_block_scalars() {
        let c = cfg(2, 2, 4, 0.0);
        let (ch, mut p) = instance(1, &c);
        for v in p.block_mut(1, 2) {
            *v = C64::new(0.0, 0.0);
        }
        let prob = Problem::new(&ch, &c).unwrap();
        let s = grad_scalars(&prob, &p);
        assert_eq!(s.a(1, 2), C64::new(0.0, 0.0));
        assert_eq!(s.c(1, 2), 1.0);
        assert_eq!(s.b(1, 2), 0.0);
    }

    #[test]
    fn scalar_substitution_example() {
        let c = SystemConfig { m_x: 1, m_z: 1, k: 1, n_c: 1, n_v: 1, n_e: 0, taps: 1, sigma_z2: 1.0, ..Default::default() };
        let ch = ChannelSet::from_frequency_rows(1, 1, 1, vec![C64::new(1.0, 0.0)]).unwrap();
        let p = PrecoderStack::from_vec(1, 1, 1, vec![C64::new(1.0, 0.0)]).unwrap();
        let s = grad_scalars(&Problem::new(&ch, &c).unwrap(), &p);
        assert_eq!(s.a(0, 0), C64::new(1.0, 0.0));
        assert_eq!(s.c(0, 0), 0.5);
        assert_eq!(s.b(0, 0), 0.5);
    }

    #[test]
    fn scalars_match_definitions() {
        let c = cfg(3, 4, 8, 0.0);
        let (ch, p) = instance(2, &c);
        let prob = Problem::new(&ch, &c).unwrap();
        let s = grad_scalars(&prob, &p);
        for k in 0..c.k {
            for sc in 0..c.n_v {
                let gamma = prob.interference_variance(&p, k, sc);
                let hp = crate::cvec::row_mul(ch.row(k, sc), p.block(k, sc));
                let a = hp / gamma;
                let cc = 1.0 / (1.0 + (hp.conj() * a).re);
                let b = (a * cc * a.conj()).re;
                assert!((s.a(k, sc) - a).norm() <= 1e-12 * a.norm().max(1e-300));
                assert!((s.c(k, sc) - cc).abs() <= 1e-12);
                assert!((s.b(k, sc) - b).abs() <= 1e-12 * b.max(1e-300));
                assert!(s.c(k, sc) > 0.0 && s.c(k, sc) <= 1.0);
                assert!(s.b(k, sc) >= 0.0);
            }
        }
    }

    #[test]
    fn blockwise_matches_stacked() {
        let c = cfg(3, 2, 4, 0.0);
        let (ch, p) = instance(3, &c);
        let prob = Problem::new(&ch, &c).unwrap();
        let s = grad_scalars(&prob, &p);
        let full = grad_f(&prob, p.as_slice());
        let m = c.m();
        for k in 0..c.k {
            for sc in 0..c.n_v {
                let blk = grad_f_block(&prob, &s, &p, k, sc);
                let start = (k * c.n_v + sc) * m;
                assert!(dist(&blk, &full[start..start + m]) < 1e-13);
            }
        }
    }

    #[test]
    fn stacked_operator_form_matches_blocks() {
        // Σ_l Aˡ ĥ_l − B h with Aˡ = Bdiag{m_{l,k,c} I} (m_{l,l,c} = 0 for the l≠k rule),
        // B = Bdiag{n_{k,c} I}, ĥ_l = [h_l; …; h_l], h = [h_1; …; h_K], h_l = [h_{l,c}ᴴ]_c
        let c = cfg(3, 2, 4, 0.0);
        let (ch, p) = instance(9, &c);
        let prob = Problem::new(&ch, &c).unwrap();
        let s = grad_scalars(&prob, &p);
        let (kk, n_v, m) = (c.k, c.n_v, c.m());
        let len = kk * n_v * m;
        let h_user = |l: usize| -> Vec<C64> { (0..n_v).flat_map(|sc| ch.row(l, sc).iter().map(|x| x.conj()).collect::<Vec<_>>()).collect() };
        let mut total = vec![C64::new(0.0, 0.0); len];
        for l in 0..kk {
            let hat: Vec<C64> = (0..kk).flat_map(|_| h_user(l)).collect();
            let mut diag = vec![C64::new(0.0, 0.0); len];
            for k in (0..kk).filter(|&k| k != l) {
                for sc in 0..n_v {
                    let mlkc = c.weight(l) * s.b(l, sc) * crate::cvec::row_mul(ch.row(l, sc), p.block(k, sc));
                    for ant in 0..m {
                        diag[(k * n_v + sc) * m + ant] = mlkc;
                    }
                }
            }
            for i in 0..len {
                total[i] += diag[i] * hat[i];
            }
        }
        let h_all: Vec<C64> = (0..kk).flat_map(h_user).collect();
        for k in 0..kk {
            for sc in 0..n_v {
                let nkc = c.weight(k) * s.a(k, sc) * s.c(k, sc);
                for ant in 0..m {
                    let i = (k * n_v + sc) * m + ant;
                    total[i] -= nkc * h_all[i];
                }
            }
        }
        assert!(dist(&total, &grad_f(&prob, p.as_slice())) < 1e-12);
    }

    #[test]
    fn single_user_has_no_interference_term() {
        let c = SystemConfig { weights: vec![1.3], ..cfg(1, 2, 4, 0.0) };
        let (ch, p) = instance(4, &c);
        let prob = Problem::new(&ch, &c).unwrap();
        let s = grad_scalars(&prob, &p);
        for sc in 0..c.n_v {
            let blk = grad_f_block(&prob, &s, &p, 0, sc);
            let want: Vec<C64> = ch.row(0, sc).iter().map(|h| -1.3 * s.a(0, sc) * s.c(0, sc) * h.conj()).collect();
            assert!(dist(&blk, &want) < 1e-14);
        }
    }

    #[test]
    fn zero_weights_zero_rate_gradient() {
        let c = SystemConfig { weights: vec![0.0; 2], ..cfg(2, 2, 4, 0.0) };
        let (ch, p) = instance(5, &c);
        let g = grad_g(&Problem::new(&ch, &c).unwrap(), p.as_slice());
        assert!(g.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn smoothing_gradient_matches_dense_quadratic_form() {
        let c = SystemConfig { weights: vec![0.0; 2], ..cfg(2, 2, 8, 1.7) };
        let (ch, p) = instance(6, &c);
        let prob = Problem::new(&ch, &c).unwrap();
        let g = grad_g(&prob, p.as_slice());
        // dense A_k = H_kᴴ M_Iᴴ E M_I H_k per user; gradient of pᴴAp w.r.t. p* is A p
        let (n, m) = (c.n_v, c.m());
        let cols = n * m;
        for k in 0..c.k {
            let mut b = vec![C64::new(0.0, 0.0); n * cols];
            for a in c.n_e..n {
                for sc in 0..n {
                    let wgt = C64::from_polar(1.0 / (n as f64).sqrt(), 2.0 * PI * ((a * sc) % n) as f64 / n as f64);
                    for ant in 0..m {
                        b[a * cols + sc * m + ant] = wgt * ch.row(k, sc)[ant];
                    }
                }
            }
            let pk = p.user(k);
            for i in 0..cols {
                let mut ap = C64::new(0.0, 0.0);
                for j in 0..cols {
                    let aij: C64 = (0..n).map(|r| b[r * cols + i].conj() * b[r * cols + j]).sum();
                    ap += aij * pk[j];
                }
                assert!((g[k * cols + i] - 1.7 * ap).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_on_known_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = complex_gaussian_vec(&mut rng, 6, 1.0);
        let v = complex_gaussian_vec(&mut rng, 6, 1.0);
        let est = fd_gradient_oracle(crate::cvec::norm_sqr, &p, 1e-6);
        assert!(dist(&est, &p) < 1e-8);
        let est = fd_gradient_oracle(|x| crate::cvec::dot(&v, x).re, &p, 1e-6);
        let half: Vec<C64> = v.iter().map(|x| x * 0.5).collect();
        assert!(dist(&est, &half) < 1e-8);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10u64 {
            let k = 1 + (seed as usize % 4);
            let m_x = [2, 4, 8][seed as usize % 3];
            let n_v = [4, 8, 16][seed as usize % 3];
            let alpha = if seed % 2 == 0 { 0.0 } else { 1.0 };
            let c = cfg(k, m_x, n_v, alpha);
            let (ch, p) = instance(100 + seed, &c);
            let prob = Problem::new(&ch, &c).unwrap();
            let g = grad_g(&prob, p.as_slice());
            let fd = fd_gradient_oracle(|x| prob.evaluate_slice(x).g, p.as_slice(), 1e-6);
            let rel = dist(&g, &fd) / norm(&fd);
            assert!(rel <= 1e-6, "seed {seed}: rel err {rel}");
        }
    }
}
