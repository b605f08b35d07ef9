//! Spectral measure of `A`: the diagonal weights `q_l`, the sampling-matrix
//! construction that must reproduce them, the closed forms of
//! `Im K` on the real axis and the spectral projections `E(a, b)`.

use std::f64::consts::FRAC_1_PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{BandIndex, Sign, SpectralPoint};
use crate::network::{GridSpec, NetworkFunction, StarNetwork, Support};
use crate::transform::{transform_v, GridRequest, ModeField, SpectralGrid, SpectralOptions};

type C = Complex64;
const ZERO: C = C { re: 0.0, im: 0.0 };
const I: C = C { re: 0.0, im: 1.0 };

/// Stone's formula prefactor carried by every spectral weight.
pub const KAPPA: f64 = FRAC_1_PI;

/// `sigma_k(lambda) = KAPPA c_k xi_k / |w|^2` above `a_k`, zero below.
/// `sp` must sit on the real axis.
pub fn sigma(sp: &SpectralPoint, net: &StarNetwork) -> Vec<f64> {
    let lambda = sp.lambda().re;
    let w2 = sp.w().norm_sqr();
    (0..net.n())
        .map(|k| {
            if lambda > net.a()[k] {
                KAPPA * net.c()[k] * sp.xi(k).re / w2
            } else {
                0.0
            }
        })
        .collect()
}

fn real_point(lambda: f64, net: &StarNetwork) -> Result<SpectralPoint> {
    if !lambda.is_finite() {
        return Err(Error::NonFiniteParameter);
    }
    if let Some(branch) = net.threshold_at(lambda) {
        return Err(Error::ThresholdSingularity {
            branch,
            lambda: C::new(lambda, 0.0),
        });
    }
    Ok(SpectralPoint::new(C::new(lambda, 0.0), Sign::Minus, net))
}

/// The weight matrix `q_{lm}(lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub lambda: f64,
    pub entries: DMatrix<C>,
}

impl WeightMatrix {
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.entries.nrows()).map(|i| self.entries[(i, i)].re).collect()
    }

    pub fn max_off_diagonal(&self) -> f64 {
        let n = self.entries.nrows();
        let mut m: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m = m.max(self.entries[(i, j)].norm());
                }
            }
        }
        m
    }

    pub fn max_abs_diff(&self, other: &WeightMatrix) -> f64 {
        (&self.entries - &other.entries).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// `q_l = KAPPA c_l xi_l / |w|^2` for `a_l < lambda`, else 0.
pub fn weights_diagonal(lambda: f64, net: &StarNetwork) -> Result<WeightMatrix> {
    let sp = real_point(lambda, net)?;
    let s = sigma(&sp, net);
    let entries = DMatrix::from_fn(net.n(), net.n(), |i, j| if i == j { C::new(s[i], 0.0) } else { ZERO });
    Ok(WeightMatrix { lambda, entries })
}

/// The matrices `D` and `C` built from eigenfunction values at the vertex
/// and at one sample point on each branch `1..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMatrices {
    pub lambda: f64,
    /// `x_samples[j - 1]` lies on branch `j`.
    pub x_samples: Vec<f64>,
    /// `D[(l, j)] = F^{-,l}` on branch `j` at `x_j`; column 0 is the vertex.
    pub d: DMatrix<C>,
    pub c: DMatrix<C>,
    /// Off-own value `e^{-i xi_j x_j}` (index 0 unused, set to 1).
    pub alpha: Vec<C>,
    /// Own value `cos(xi_j x_j) - i s_j sin(xi_j x_j)` (index 0 unused, set to 1).
    pub beta: Vec<C>,
    w: C,
}

impl SamplingMatrices {
    pub fn build(lambda: f64, x_samples: &[f64], net: &StarNetwork) -> Result<Self> {
        let n = net.n();
        if x_samples.len() != n - 1 {
            return Err(Error::LengthMismatch {
                expected: n - 1,
                got: x_samples.len(),
            });
        }
        if x_samples.iter().any(|&x| x == 0.0 || !x.is_finite()) {
            return Err(Error::Precondition("sample points must be finite and off the vertex".into()));
        }
        if lambda <= net.a()[0] {
            return Err(Error::Precondition(format!("lambda = {lambda} must exceed a_1 = {}", net.a()[0])));
        }
        let sp = real_point(lambda, net)?;
        let mut alpha = vec![C::new(1.0, 0.0); n];
        let mut beta = vec![C::new(1.0, 0.0); n];
        for j in 1..n {
            let x = x_samples[j - 1];
            alpha[j] = sp.plane_wave(j, x);
            beta[j] = sp.f(j, j, x)?;
        }
        let d = DMatrix::from_fn(n, n, |l, j| {
            if j == 0 {
                C::new(1.0, 0.0)
            } else if l == j {
                beta[j]
            } else {
                alpha[j]
            }
        });
        let c = DMatrix::from_fn(n, n, |l, j| {
            if l != j {
                ZERO
            } else if j == 0 {
                I
            } else {
                I * alpha[j]
            }
        });
        Ok(Self {
            lambda,
            x_samples: x_samples.to_vec(),
            d,
            c,
            alpha,
            beta,
            w: sp.w(),
        })
    }

    /// `det D = prod_{j >= 1} (beta_j - alpha_j)`.
    pub fn det_d(&self) -> C {
        self.beta.iter().zip(&self.alpha).skip(1).map(|(b, a)| b - a).product()
    }

    /// `KAPPA (D^{-1})^T Im((-i/w) C D) conj(D)^{-1}`.
    pub fn weights(&self) -> Result<WeightMatrix> {
        let det = self.det_d();
        let scale = self.beta.iter().map(|b| b.norm()).fold(1.0, f64::max);
        if det.norm() <= 1e-13 * scale.powi(self.d.nrows() as i32 - 1) {
            return Err(Error::SingularD(det.norm()));
        }
        let inv = self.d.clone().try_inverse().ok_or(Error::SingularD(det.norm()))?;
        let inv_conj = self.d.map(|z| z.conj()).try_inverse().ok_or(Error::SingularD(det.norm()))?;
        let lmat = ((&self.c * &self.d) * (-I / self.w)).map(|z| C::new(z.im, 0.0));
        let q = inv.transpose() * lmat * inv_conj * C::new(KAPPA, 0.0);
        Ok(WeightMatrix {
            lambda: self.lambda,
            entries: q,
        })
    }
}

/// Weights from the sampling-matrix construction.
pub fn weights_matrix(lambda: f64, x_samples: &[f64], net: &StarNetwork) -> Result<WeightMatrix> {
    SamplingMatrices::build(lambda, x_samples, net)?.weights()
}

/// Which closed form of `Im K` applies to the pair `(j, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelCase {
    /// both branches evanescent
    A,
    /// both propagating, `j != k`
    B,
    /// both propagating, `j == k`
    BDiagonal,
    /// `j` propagating, `k` evanescent
    C,
    /// `k` propagating, `j` evanescent
    D,
}

pub fn kernel_case_of(j: usize, k: usize, p: BandIndex) -> KernelCase {
    match (p.propagates(j), p.propagates(k)) {
        (false, false) => KernelCase::A,
        (true, true) if j == k => KernelCase::BDiagonal,
        (true, true) => KernelCase::B,
        (true, false) => KernelCase::C,
        (false, true) => KernelCase::D,
    }
}

fn check_band(lambda: f64, p: BandIndex, net: &StarNetwork) -> Result<SpectralPoint> {
    let sp = real_point(lambda, net)?;
    if BandIndex::of(lambda, net) != p {
        return Err(Error::Precondition(format!("lambda = {lambda} is not in band {}", p.0)));
    }
    Ok(sp)
}

/// `Im[(1/w) (F^{-,j+1})_j(x) (F^{-,j})_k(x')]` from the case formulas,
/// written with real `xi` (propagating) and `xi' = i xi` (evanescent).
pub fn im_kernel_case(j: usize, k: usize, p: BandIndex, x: f64, x_prime: f64, lambda: f64, net: &StarNetwork) -> Result<f64> {
    let sp = check_band(lambda, p, net)?;
    let inv_w = 1.0 / sp.w();
    let (re, im) = (inv_w.re, inv_w.im);
    let decay = |b: usize| (I * sp.xi(b)).re;
    let wave = |b: usize, t: f64| (sp.xi(b).re * t).sin_cos();
    Ok(match kernel_case_of(j, k, p) {
        KernelCase::A => im * (-decay(j) * x - decay(k) * x_prime).exp(),
        KernelCase::B => {
            let ((sj, cj), (sk, ck)) = (wave(j, x), wave(k, x_prime));
            im * (cj * ck - sj * sk) - re * (sj * ck + cj * sk)
        }
        KernelCase::BDiagonal => {
            let ((sj, cj), (sk, ck)) = (wave(j, x), wave(k, x_prime));
            let s_over_w = (sp.s(j)? * inv_w).im;
            im * cj * ck - re * (sj * ck + cj * sk) - s_over_w * sj * sk
        }
        KernelCase::C => {
            let (sj, cj) = wave(j, x);
            (-decay(k) * x_prime).exp() * (im * cj - re * sj)
        }
        KernelCase::D => {
            let (sk, ck) = wave(k, x_prime);
            (-decay(j) * x).exp() * (im * ck - re * sk)
        }
    })
}

/// The same quantity evaluated from the eigenfunctions.
pub fn im_kernel_direct(j: usize, k: usize, x: f64, x_prime: f64, lambda: f64, net: &StarNetwork) -> Result<f64> {
    let sp = real_point(lambda, net)?;
    let partner = (j + 1) % net.n();
    Ok((sp.f(partner, j, x)? * sp.f(j, k, x_prime)? / sp.w()).im)
}

/// Residuals of the linear systems the weights must satisfy, one system per
/// branch pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSystemReport {
    pub lambda: f64,
    pub band: usize,
    pub equations: usize,
    pub max_residual: f64,
    /// `(j, k, case, worst residual)` per pair.
    pub per_pair: Vec<(usize, usize, KernelCase, f64)>,
}

/// Substitute the diagonal weights (without `KAPPA`) into every equation.
pub fn verify_weight_systems(lambda: f64, net: &StarNetwork) -> Result<WeightSystemReport> {
    let sp = real_point(lambda, net)?;
    let n = net.n();
    let p = BandIndex::of(lambda, net);
    let q: Vec<f64> = sigma(&sp, net).iter().map(|s| s / KAPPA).collect();
    let qm = |l: usize, m: usize| if l == m { C::new(q[l], 0.0) } else { ZERO };
    let inv_w = 1.0 / sp.w();
    let (re, im) = (inv_w.re, inv_w.im);
    let mut per_pair = Vec::with_capacity(n * n);
    let mut equations = 0;
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for k in 0..n {
            let mut s_all = ZERO;
            let mut col = ZERO;
            let mut row = ZERO;
            for l in 0..n {
                for m in 0..n {
                    if l != j && m != k {
                        s_all += qm(l, m);
                    }
                }
                if l != j {
                    col += qm(l, k);
                }
                if l != k {
                    row += qm(j, l);
                }
            }
            let qjk = qm(j, k);
            let case = kernel_case_of(j, k, p);
            let eqs: Vec<C> = match case {
                KernelCase::A => vec![qjk, col, row, s_all - im],
                KernelCase::B | KernelCase::BDiagonal => {
                    let sj = sp.s(j)?;
                    let sk = sp.s(k)?.conj();
                    let last = if j == k { -(sp.s(j)? * inv_w).im } else { -im };
                    vec![
                        s_all + col + row + qjk - im,
                        s_all + row + sk * col + sk * qjk - I * re,
                        s_all + col + sj * (row + qjk) + I * re,
                        s_all + sk * col + sj * row + sj * sk * qjk - last,
                    ]
                }
                KernelCase::C => {
                    let sj = sp.s(j)?;
                    vec![qjk, col, s_all + row - im, s_all + sj * row + I * re]
                }
                KernelCase::D => {
                    let sk = sp.s(k)?.conj();
                    vec![qjk, row, s_all + col - im, s_all + sk * col - I * re]
                }
            };
            // scale-free residual: compare against |1/w|
            let r = eqs.iter().map(|e| e.norm()).fold(0.0, f64::max) / inv_w.norm();
            equations += eqs.len();
            worst = worst.max(r);
            per_pair.push((j, k, case, r));
        }
    }
    Ok(WeightSystemReport {
        lambda,
        band: p.0,
        equations,
        max_residual: worst,
        per_pair,
    })
}

/// Which representation of `E(a, b)` to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionFormula {
    /// Imaginary part of the resolvent kernel with its cyclic partner
    /// structure.
    Cyclic,
    /// `sum_l q_l F^{-,l} (f, F^{-,l})`.
    Symmetric,
}

fn window_grid(a: f64, b: f64, f: &NetworkFunction, net: &StarNetwork, output: &GridSpec, opts: &SpectralOptions) -> Result<Arc<SpectralGrid>> {
    let r = match f.support() {
        Support::Compact(r) => r,
        _ => return Err(Error::NonCompactSupport),
    };
    let x_out = (0..output.n()).map(|k| output.lengths[k]).fold(0.0, f64::max);
    let req = GridRequest {
        lo: a.max(net.a()[0]),
        hi: b,
        x_extent: r + x_out,
        time_extent: 0.0,
        breakpoints: Vec::new(),
    };
    Ok(Arc::new(SpectralGrid::new(net, &req, opts.policy)?))
}

/// `E(a, b) f` sampled on `output`.
pub fn projection_e(
    a: f64,
    b: f64,
    f: &NetworkFunction,
    net: &StarNetwork,
    formula: ProjectionFormula,
    output: &GridSpec,
    opts: &SpectralOptions,
) -> Result<NetworkFunction> {
    if !(a < b) {
        return Err(Error::Precondition(format!("empty spectral interval ({a}, {b})")));
    }
    if b <= net.a()[0] {
        let zeros = (0..output.n()).map(|k| vec![ZERO; output.count(k)]).collect();
        return NetworkFunction::grid(output.steps.clone(), zeros);
    }
    let grid = window_grid(a, b, f, net, output, opts)?;
    let field = match formula {
        ProjectionFormula::Symmetric => ModeField::from_spectral(&transform_v(f, &grid, opts)?),
        ProjectionFormula::Cyclic => cyclic_field(f, &grid, opts)?,
    };
    field.sample(output)
}

/// `(1/2i) int [K(lambda - i0) - conj K(lambda - i0)] f`, with `K` taken in
/// the form `(1/w) F^{j+1}(x) F^{j}(x')` on every branch `j`.
///
/// On an evanescent branch `F^{j}_j` carries a growing exponential whose
/// coefficient `(1 - s_j)/(2w)` is real; its two contributions cancel exactly
/// and are left out.
fn cyclic_field(f: &NetworkFunction, grid: &Arc<SpectralGrid>, opts: &SpectralOptions) -> Result<ModeField> {
    let net = grid.net();
    let n = net.n();
    let r = match f.support() {
        Support::Compact(r) => r,
        _ => return Err(Error::NonCompactSupport),
    };
    let width = opts.x_panel.min(opts.policy.phase_per_panel / grid.max_xi().max(1e-300));
    let rules: Vec<Vec<(f64, C)>> = (0..n)
        .map(|b| f.x_rule(b, r, width, opts.x_order).iter().map(|(x, w)| (x, f.eval(b, x) * w)).collect())
        .collect();
    let len = grid.len();
    let coeffs: Vec<Vec<(C, C)>> = (0..len)
        .into_par_iter()
        .map(|i| {
            let sp = grid.point(i);
            let lambda = sp.lambda().re;
            // per branch: int f e^{-i xi x}, int f conj(e^{-i xi x}), own-mode moments
            let mut plane = vec![ZERO; n];
            let mut plane_c = vec![ZERO; n];
            let mut own = vec![ZERO; n];
            let mut own_c = vec![ZERO; n];
            for bb in 0..n {
                let z = sp.xi(bb);
                let s = sp.s(bb).unwrap_or(ZERO);
                if lambda > net.a()[bb] {
                    let (mut cc, mut ss) = (ZERO, ZERO);
                    for &(x, v) in &rules[bb] {
                        let (sn, cs) = (z.re * x).sin_cos();
                        cc += v * cs;
                        ss += v * sn;
                    }
                    plane[bb] = cc - I * ss;
                    plane_c[bb] = cc + I * ss;
                    own[bb] = cc - I * s * ss;
                    own_c[bb] = cc + I * s.conj() * ss;
                } else {
                    let decay = (I * z).re;
                    let e: C = rules[bb].iter().map(|&(x, v)| v * (-decay * x).exp()).sum();
                    plane[bb] = e;
                    plane_c[bb] = e;
                    own[bb] = e * (1.0 + s) * 0.5;
                    own_c[bb] = e * (1.0 + s.conj()) * 0.5;
                }
            }
            let tp: C = plane.iter().sum();
            let tc: C = plane_c.iter().sum();
            let inv_w = 1.0 / sp.w();
            let scale = KAPPA * grid.weights()[i] / (2.0 * I);
            (0..n)
                .map(|j| {
                    let pj = tp - plane[j] + own[j];
                    let qj = tc - plane_c[j] + own_c[j];
                    (scale * inv_w * pj, -scale * inv_w.conj() * qj)
                })
                .collect()
        })
        .collect();
    let mut p = vec![vec![ZERO; len]; n];
    let mut q = vec![vec![ZERO; len]; n];
    for (i, row) in coeffs.into_iter().enumerate() {
        for (j, (pp, qq)) in row.into_iter().enumerate() {
            p[j][i] = pp;
            q[j][i] = qq;
        }
    }
    Ok(ModeField::from_coefficients(grid.clone(), p, q))
}
