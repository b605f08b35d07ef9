//! Branch-cut square root, `xi_k`, `s_k`, the Wronskian `w` and the
//! generalized eigenfunctions `F^{±,j}`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::{NetworkPoint, StarNetwork};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Square root with the argument of `z` taken in `[-pi, pi)`, so the result
/// has argument in `[-pi/2, pi/2)`. On the negative real axis this gives
/// `sqrt(-r) = -i sqrt(r)`, the opposite of the usual principal branch.
pub fn conv_sqrt(z: Complex64) -> Complex64 {
    let (x, y) = (z.re, z.im);
    let r = z.norm();
    if r == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    if x >= 0.0 {
        let t = ((r + x) * 0.5).sqrt();
        Complex64::new(t, y / (2.0 * t))
    } else {
        let t = ((r - x) * 0.5).sqrt();
        Complex64::new(y.abs() / (2.0 * t), if y > 0.0 { t } else { -t })
    }
}

/// `xi_k(lambda) = sqrt((lambda - a_k) / c_k)`.
pub fn xi(lambda: Complex64, k: usize, net: &StarNetwork) -> Complex64 {
    conv_sqrt((lambda - net.a()[k]) / net.c()[k])
}

/// `s_k = -(sum_{l != k} c_l xi_l) / (c_k xi_k)`; forced by the flux condition.
pub fn s_coeff(lambda: Complex64, k: usize, net: &StarNetwork) -> Result<Complex64> {
    let xis: Vec<Complex64> = (0..net.n()).map(|l| xi(lambda, l, net)).collect();
    s_from_xis(&xis, k, net.c()).ok_or(Error::ThresholdSingularity { branch: k, lambda })
}

fn s_from_xis(xis: &[Complex64], k: usize, c: &[f64]) -> Option<Complex64> {
    if xis[k] == Complex64::new(0.0, 0.0) {
        return None;
    }
    let others: Complex64 = (0..xis.len()).filter(|&l| l != k).map(|l| xis[l] * c[l]).sum();
    Some(-others / (xis[k] * c[k]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    /// `+` iff `Im lambda > 0`.
    pub fn for_lambda(lambda: Complex64) -> Sign {
        if lambda.im > 0.0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// `w(lambda) = ± i sum_j c_j xi_j(lambda)`.
pub fn wronskian_w(lambda: Complex64, sign: Sign, net: &StarNetwork) -> Complex64 {
    let sum: Complex64 = (0..net.n()).map(|j| xi(lambda, j, net) * net.c()[j]).sum();
    I * sum * sign.value()
}

/// Selects `F_lambda^{sign, j}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenfunctionSpec {
    pub lambda: Complex64,
    pub j: usize,
    pub sign: Sign,
}

/// Number of potentials strictly below a real `lambda`: on `(a_p, a_{p+1})`
/// branches `k < p` propagate and branches `k >= p` decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandIndex(pub usize);

impl BandIndex {
    pub fn of(lambda: f64, net: &StarNetwork) -> BandIndex {
        BandIndex(net.band_index(lambda))
    }

    pub fn propagates(self, k: usize) -> bool {
        k < self.0
    }
}

/// `xi`, `s` and `w` at one spectral parameter, shared by every evaluation
/// of the eigenfunctions and the kernel at that parameter.
#[derive(Debug, Clone)]
pub struct SpectralPoint {
    lambda: Complex64,
    sign: Sign,
    xi: Vec<Complex64>,
    s: Vec<Option<Complex64>>,
    w: Complex64,
}

impl SpectralPoint {
    pub fn new(lambda: Complex64, sign: Sign, net: &StarNetwork) -> Self {
        let xi: Vec<Complex64> = (0..net.n()).map(|k| self::xi(lambda, k, net)).collect();
        let s = (0..net.n()).map(|k| s_from_xis(&xi, k, net.c())).collect();
        let sum: Complex64 = xi.iter().zip(net.c()).map(|(x, c)| x * c).sum();
        Self {
            lambda,
            sign,
            xi,
            s,
            w: I * sum * sign.value(),
        }
    }

    /// The kernel's choice: sign `+` iff `Im lambda > 0`.
    pub fn for_kernel(lambda: Complex64, net: &StarNetwork) -> Self {
        Self::new(lambda, Sign::for_lambda(lambda), net)
    }

    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn xi(&self, k: usize) -> Complex64 {
        self.xi[k]
    }

    pub fn s(&self, k: usize) -> Result<Complex64> {
        self.s[k].ok_or(Error::ThresholdSingularity {
            branch: k,
            lambda: self.lambda,
        })
    }

    pub fn w(&self) -> Complex64 {
        self.w
    }

    pub fn n(&self) -> usize {
        self.xi.len()
    }

    /// `(F^{sign,j})` on `branch` at `x`, with first and second derivatives.
    pub fn f_derivs(&self, j: usize, branch: usize, x: f64) -> Result<[Complex64; 3]> {
        let xi = self.xi[branch];
        let sg = self.sign.value();
        if branch == j {
            let s = self.s(j)?;
            let (sin, cos) = ((xi * x).sin(), (xi * x).cos());
            let f = cos + I * s * sin * sg;
            let d1 = xi * (-sin + I * s * cos * sg);
            Ok([f, d1, -xi * xi * f])
        } else {
            let f = (I * xi * x * sg).exp();
            Ok([f, I * xi * f * sg, -xi * xi * f])
        }
    }

    pub fn f(&self, j: usize, branch: usize, x: f64) -> Result<Complex64> {
        let xi = self.xi[branch];
        let sg = self.sign.value();
        if branch == j {
            let s = self.s(j)?;
            Ok((xi * x).cos() + I * s * (xi * x).sin() * sg)
        } else {
            Ok((I * xi * x * sg).exp())
        }
    }

    /// Plane-wave part `exp(± i xi_b x)`, the value of every `F^{±,j}` with
    /// `j != b` on branch `b`.
    pub fn plane_wave(&self, branch: usize, x: f64) -> Complex64 {
        (I * self.xi[branch] * x * self.sign.value()).exp()
    }
}

pub fn eval_f(spec: &EigenfunctionSpec, pt: NetworkPoint, net: &StarNetwork) -> Result<Complex64> {
    SpectralPoint::new(spec.lambda, spec.sign, net).f(spec.j, pt.branch, pt.x)
}

/// Value, first and second `x`-derivative of `F` at `pt`.
pub fn eval_f_derivatives(spec: &EigenfunctionSpec, pt: NetworkPoint, net: &StarNetwork) -> Result<[Complex64; 3]> {
    SpectralPoint::new(spec.lambda, spec.sign, net).f_derivs(spec.j, pt.branch, pt.x)
}

/// Bound on `|s_j(lambda - i eps)|` valid for `0 <= eps <= delta`.
///
/// For distinct potentials this is `max_j (c_j |lambda - a_j|)^{-1/2} *
/// sum_k sqrt(c_k) ((lambda - a_k)^2 + delta^2)^{1/4}`; it is `+inf` on a
/// threshold. With all potentials equal `|s_j|` is the constant
/// `c_j^{-1/2} sum_{k != j} sqrt(c_k)` and its maximum is returned.
pub fn bound_m(lambda: f64, delta: f64, net: &StarNetwork) -> f64 {
    let c = net.c();
    let a = net.a();
    if net.equal_potentials() {
        let total: f64 = c.iter().map(|ck| ck.sqrt()).sum();
        return c
            .iter()
            .map(|cj| (total - cj.sqrt()) / cj.sqrt())
            .fold(0.0, f64::max);
    }
    let lead = c
        .iter()
        .zip(a)
        .map(|(cj, aj)| 1.0 / (cj * (lambda - aj).abs()).sqrt())
        .fold(0.0, f64::max);
    let sum: f64 = c
        .iter()
        .zip(a)
        .map(|(ck, ak)| ck.sqrt() * ((lambda - ak).powi(2) + delta * delta).powf(0.25))
        .sum();
    lead * sum
}

/// Envelope `|K(x, x', lambda - i eps)| <= n_bound * exp(gamma (x + x'))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelBound {
    pub n_bound: f64,
    pub gamma: f64,
}

impl KernelBound {
    pub fn at(&self, x: f64, x_prime: f64) -> f64 {
        self.n_bound * (self.gamma * (x + x_prime)).exp()
    }
}

pub fn bound_n_gamma(lambda: f64, delta: f64, net: &StarNetwork) -> KernelBound {
    let c = net.c();
    let a = net.a();
    let denom: f64 = c.iter().zip(a).map(|(cj, aj)| cj * (lambda - aj).abs()).sum();
    let n_bound = (1.0 + bound_m(lambda, delta, net)) / denom.sqrt();
    let spread = a[a.len() - 1] - a[0];
    let inv_speed = c.iter().map(|cj| 1.0 / cj.sqrt()).fold(0.0, f64::max);
    let gamma = inv_speed * (spread * spread + delta * delta).powf(0.25).max(1.0).max(delta);
    KernelBound { n_bound, gamma }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn branch_cut_examples() {
        assert_eq!(conv_sqrt(c(4.0, 0.0)), c(2.0, 0.0));
        assert_eq!(conv_sqrt(c(-1.0, 0.0)), c(0.0, -1.0));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((conv_sqrt(c(0.0, 1.0)) - c(h, h)).norm() < 1e-15);
        assert_eq!(conv_sqrt(c(0.0, 0.0)), c(0.0, 0.0));
        // just below the negative axis joins continuously
        assert!((conv_sqrt(c(-1.0, -1e-300)) - c(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn random_branch_cut_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let z = c(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            let r = conv_sqrt(z);
            assert!((r * r - z).norm() <= 1e-14 * z.norm().max(1.0));
            assert_eq!(conv_sqrt(z.conj()), r.conj());
            let arg = r.arg();
            assert!((-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2).contains(&arg) || r.re == 0.0);
        }
    }

    #[test]
    fn xi_examples() {
        let net = StarNetwork::new(vec![1.0, 4.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(xi(c(4.0, 0.0), 0, &net), c(2.0, 0.0));
        assert_eq!(xi(c(2.0, 0.0), 1, &net), c(0.5, 0.0));
        assert_eq!(xi(c(-1.0, 0.0), 0, &net), c(0.0, -1.0));
    }

    #[test]
    fn s_examples() {
        let net = StarNetwork::uniform(3, 1.0, 0.0).unwrap();
        assert_eq!(s_coeff(c(1.0, 0.0), 0, &net).unwrap(), c(-2.0, 0.0));
        // c_2 xi_2 = 4 * 1/2, so s_1 = -2
        let net2 = StarNetwork::new(vec![1.0, 4.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(s_coeff(c(1.0, 0.0), 0, &net2).unwrap(), c(-2.0, 0.0));
        let sp = SpectralPoint::new(c(1.0, 0.0), Sign::Minus, &net2);
        let flux: Complex64 = (0..2).map(|k| sp.f_derivs(0, k, 0.0).unwrap()[1] * net2.c()[k]).sum();
        assert_eq!(flux, c(0.0, 0.0));
        assert!(matches!(
            s_coeff(c(0.0, 0.0), 0, &net2),
            Err(Error::ThresholdSingularity { branch: 0, .. })
        ));
    }

    #[test]
    fn wronskian_examples() {
        let net = StarNetwork::uniform(3, 1.0, 0.0).unwrap();
        assert_eq!(wronskian_w(c(4.0, 0.0), Sign::Minus, &net), c(0.0, -6.0));
        let net2 = StarNetwork::new(vec![1.0, 1.0], vec![0.0, 4.0]).unwrap();
        let w = wronskian_w(c(2.0, 0.0), Sign::Minus, &net2);
        let r2 = 2.0f64.sqrt();
        assert!((w - c(-r2, -r2)).norm() < 1e-15);
        assert!((w.norm_sqr() - 4.0).abs() < 1e-14);
        let eq = StarNetwork::new(vec![1.0, 2.0, 0.5], vec![1.5; 3]).unwrap();
        let total: f64 = eq.c().iter().map(|x| x.sqrt()).sum();
        for lam in [c(3.0, -0.2), c(0.0, 1.0), c(10.0, 0.0)] {
            let w = wronskian_w(lam, Sign::Minus, &eq);
            assert!((w.norm_sqr() - total * total * (lam - 1.5).norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn wronskian_conjugation() {
        let net = StarNetwork::new(vec![1.0, 2.0, 0.5], vec![0.0, 1.5, 4.0]).unwrap();
        for lam in [c(2.0, 0.3), c(-1.0, -2.0), c(7.0, 1e-3)] {
            for sign in [Sign::Plus, Sign::Minus] {
                let w = wronskian_w(lam, sign, &net);
                assert_eq!(w.conj(), -wronskian_w(lam.conj(), sign, &net));
                assert_eq!(w.conj(), wronskian_w(lam.conj(), sign.flip(), &net));
            }
        }
    }

    #[test]
    fn eigenfunction_examples() {
        let net = StarNetwork::new(vec![1.0, 2.0, 0.5], vec![0.0, 1.5, 4.0]).unwrap();
        for sign in [Sign::Plus, Sign::Minus] {
            for j in 0..3 {
                let spec = EigenfunctionSpec { lambda: c(5.3, -0.7), j, sign };
                for k in 0..3 {
                    assert_eq!(eval_f(&spec, NetworkPoint::new(k, 0.0), &net).unwrap(), c(1.0, 0.0));
                }
            }
        }
        let spec = EigenfunctionSpec { lambda: c(6.0, 0.0), j: 0, sign: Sign::Minus };
        for x in [0.3, 2.0, 17.0] {
            assert!((eval_f(&spec, NetworkPoint::new(2, x), &net).unwrap().norm() - 1.0).abs() < 1e-14);
        }
        let spec = EigenfunctionSpec { lambda: c(2.0, -0.5), j: 0, sign: Sign::Minus };
        let near = eval_f(&spec, NetworkPoint::new(1, 1.0), &net).unwrap().norm();
        let far = eval_f(&spec, NetworkPoint::new(1, 30.0), &net).unwrap().norm();
        assert!(far < near && far < 1e-2);
    }

    #[test]
    fn band_structure_of_xi() {
        let net = StarNetwork::new(vec![1.0, 2.0, 0.5], vec![0.0, 1.5, 4.0]).unwrap();
        for lam in [0.7, 2.3, 5.5] {
            let p = BandIndex::of(lam, &net);
            for k in 0..3 {
                let x = xi(c(lam, 0.0), k, &net);
                if p.propagates(k) {
                    assert!(x.im == 0.0 && x.re > 0.0);
                } else {
                    assert!(x.re == 0.0 && x.im < 0.0);
                }
            }
        }
    }

    #[test]
    fn bound_m_examples() {
        let eq = StarNetwork::uniform(3, 1.0, 0.0).unwrap();
        assert_eq!(bound_m(0.3, 0.1, &eq), 2.0);
        assert_eq!(bound_m(40.0, 0.1, &eq), 2.0);
        let net = StarNetwork::new(vec![1.0, 2.0, 0.5], vec![0.0, 1.5, 4.0]).unwrap();
        assert_eq!(bound_m(1.5, 0.1, &net), f64::INFINITY);
    }

    #[test]
    fn kernel_bound_decays_for_large_lambda() {
        let net = StarNetwork::new(vec![1.0, 2.0, 0.5], vec![0.0, 1.5, 4.0]).unwrap();
        let small = bound_n_gamma(10.0, 0.5, &net).n_bound;
        let large = bound_n_gamma(1e6, 0.5, &net).n_bound;
        assert!(large < small * 1e-2);
        let eq = StarNetwork::uniform(3, 1.0, 2.0).unwrap();
        assert_eq!(bound_n_gamma(2.0, 0.5, &eq).n_bound, f64::INFINITY);
    }

    fn random_net(seed: u64) -> StarNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..6);
        let c = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
        let mut a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..6.0)).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        StarNetwork::new(c, a).unwrap()
    }

    proptest! {
        #[test]
        fn eigenfunction_satisfies_ode_and_vertex_conditions(
            seed in 0u64..1000, re in -3.0f64..30.0, im in -2.0f64..2.0, plus in any::<bool>(), x in 0.0f64..5.0
        ) {
            let net = random_net(seed);
            let lambda = c(re, im);
            prop_assume!(net.a().iter().all(|&a| (lambda - a).norm() > 1e-3));
            let sign = if plus { Sign::Plus } else { Sign::Minus };
            let sp = SpectralPoint::new(lambda, sign, &net);
            for j in 0..net.n() {
                let mut flux = c(0.0, 0.0);
                for k in 0..net.n() {
                    let [f, _, d2] = sp.f_derivs(j, k, x).unwrap();
                    let res = -d2 * net.c()[k] + f * net.a()[k] - lambda * f;
                    prop_assert!(res.norm() <= 1e-10 * f.norm().max(1.0));
                    let at0 = sp.f_derivs(j, k, 0.0).unwrap();
                    prop_assert_eq!(at0[0], c(1.0, 0.0));
                    flux += at0[1] * net.c()[k];
                }
                prop_assert!(flux.norm() < 1e-12 * (1.0 + lambda.norm()));
            }
        }

        #[test]
        fn wronskian_lower_bound(seed in 0u64..1000, lam in 0.0f64..1.0, eps in 0.0f64..5.0) {
            let net = random_net(seed);
            let lambda = net.a()[0] + lam * 20.0;
            let w = wronskian_w(c(lambda, -eps), Sign::Minus, &net);
            let rhs: f64 = net.c().iter().zip(net.a()).map(|(c, a)| c * (lambda - a).abs()).sum();
            prop_assert!(w.norm_sqr() >= rhs * (1.0 - 1e-12));
        }

        #[test]
        fn s_is_bounded_by_m(seed in 0u64..1000, lam in 0.0f64..1.0, eps_frac in 0.0f64..1.0, delta in 0.01f64..4.0) {
            let net = random_net(seed);
            let lambda = net.a()[0] + lam * 20.0;
            prop_assume!(net.a().iter().all(|&a| (lambda - a).abs() > 1e-6));
            let m = bound_m(lambda, delta, &net);
            for j in 0..net.n() {
                let s = s_coeff(c(lambda, -eps_frac * delta), j, &net).unwrap();
                prop_assert!(s.norm() <= m * (1.0 + 1e-12));
            }
        }
    }
}
