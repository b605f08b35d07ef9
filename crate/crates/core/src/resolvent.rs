//! Resolvent kernel `K(x, x', lambda)` and application of `R(lambda, A)`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{bound_n_gamma, SpectralPoint};
use crate::network::{GridSpec, NetworkFunction, NetworkPoint, StarNetwork, Support};
use crate::numerics::{composite_gauss, gauss_legendre};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelQuery {
    pub x: NetworkPoint,
    pub x_prime: NetworkPoint,
    pub lambda: Complex64,
}

/// Kernel value using partner branch `partner != x.branch` in place of `j + 1`.
pub fn kernel_with_partner(sp: &SpectralPoint, x: NetworkPoint, xp: NetworkPoint, partner: usize) -> Result<Complex64> {
    let j = x.branch;
    debug_assert!(partner != j);
    let w = sp.w();
    if w == Complex64::new(0.0, 0.0) {
        return Err(Error::WronskianZero(sp.lambda()));
    }
    if xp.branch == j && xp.x > x.x {
        Ok(sp.f(j, j, x.x)? * sp.f(partner, xp.branch, xp.x)? / w)
    } else {
        Ok(sp.f(partner, j, x.x)? * sp.f(j, xp.branch, xp.x)? / w)
    }
}

/// Kernel with the cyclic partner `j + 1 (mod n)`.
pub fn kernel_at(sp: &SpectralPoint, x: NetworkPoint, xp: NetworkPoint) -> Result<Complex64> {
    kernel_with_partner(sp, x, xp, (x.branch + 1) % sp.n())
}

/// One of the two case formulas evaluated regardless of the ordering of
/// `x` and `x'`: `upper = true` selects the `x' > x` expression.
pub fn kernel_case(sp: &SpectralPoint, x: NetworkPoint, xp: NetworkPoint, upper: bool) -> Result<Complex64> {
    let j = x.branch;
    let partner = (j + 1) % sp.n();
    let w = sp.w();
    if upper {
        Ok(sp.f(j, j, x.x)? * sp.f(partner, xp.branch, xp.x)? / w)
    } else {
        Ok(sp.f(partner, j, x.x)? * sp.f(j, xp.branch, xp.x)? / w)
    }
}

pub fn kernel_k(q: &KernelQuery, net: &StarNetwork) -> Result<Complex64> {
    kernel_at(&SpectralPoint::for_kernel(q.lambda, net), q.x, q.x_prime)
}

fn check_resolvent_set(lambda: Complex64, net: &StarNetwork) -> Result<SpectralPoint> {
    if lambda.im == 0.0 && lambda.re >= net.a()[0] {
        return Err(Error::SpectrumPoint(lambda.re));
    }
    let sp = SpectralPoint::for_kernel(lambda, net);
    if sp.w() == Complex64::new(0.0, 0.0) {
        return Err(Error::WronskianZero(lambda));
    }
    Ok(sp)
}

/// `sum_{k} int f_k(x') exp(± i xi_k x') dx'` per branch: the moments
/// against the plane-wave parts of the eigenfunctions.
fn plane_wave_moments(sp: &SpectralPoint, f: &NetworkFunction, r: f64) -> Vec<Complex64> {
    (0..sp.n())
        .map(|k| {
            composite_gauss(0.0, r, &f.breakpoints(r), 0.1, 16)
                .integrate(|x| f.eval(k, x) * sp.plane_wave(k, x))
        })
        .collect()
}

/// `(R(lambda, A) f)` sampled on `output`.
///
/// The kernel separates on each branch, so the `x'`-integral reduces to two
/// running integrals accumulated over the cells of the output grid.
pub fn apply_resolvent(f: &NetworkFunction, lambda: Complex64, net: &StarNetwork, output: &GridSpec) -> Result<NetworkFunction> {
    let sp = check_resolvent_set(lambda, net)?;
    let r = f.compact_radius()?;
    let moments = plane_wave_moments(&sp, f, r);
    let total: Complex64 = moments.iter().sum();
    let (ref_nodes, ref_weights) = gauss_legendre(8);
    let w = sp.w();

    let samples: Result<Vec<Vec<Complex64>>> = (0..net.n())
        .into_par_iter()
        .map(|j| {
            let count = output.count(j);
            let xs: Vec<f64> = output.points(j).collect();
            sp.s(j)?;
            let bps = f.breakpoints(r);
            let own = |x: f64| sp.f(j, j, x).unwrap_or_default();
            let cell = |lo: f64, hi: f64, g: &dyn Fn(f64) -> Complex64| -> Complex64 {
                let hi = hi.min(r);
                if hi <= lo {
                    return Complex64::new(0.0, 0.0);
                }
                let mut edges = vec![lo];
                edges.extend(bps.iter().copied().filter(|&p| p > lo && p < hi));
                edges.push(hi);
                let mut acc = Complex64::new(0.0, 0.0);
                for e in edges.windows(2) {
                    let c = 0.5 * (e[0] + e[1]);
                    let h = 0.5 * (e[1] - e[0]);
                    for (t, wt) in ref_nodes.iter().zip(&ref_weights) {
                        acc += g(c + h * t) * (h * wt);
                    }
                }
                acc
            };
            let lower_integrand = |x: f64| f.eval(j, x) * own(x);
            let upper_integrand = |x: f64| f.eval(j, x) * sp.plane_wave(j, x);
            let mut lower = vec![Complex64::new(0.0, 0.0); count];
            for i in 1..count {
                lower[i] = lower[i - 1] + cell(xs[i - 1], xs[i], &lower_integrand);
            }
            let mut upper = vec![Complex64::new(0.0, 0.0); count];
            upper[count - 1] = cell(xs[count - 1], r, &upper_integrand);
            for i in (0..count - 1).rev() {
                upper[i] = upper[i + 1] + cell(xs[i], xs[i + 1], &upper_integrand);
            }
            let cross = total - moments[j];
            Ok((0..count)
                .map(|i| (sp.plane_wave(j, xs[i]) * (cross + lower[i]) + own(xs[i]) * upper[i]) / w)
                .collect())
        })
        .collect();
    NetworkFunction::grid(output.steps.clone(), samples?)
}

/// `R(lambda, A) f` as an analytic rule with exact first and second
/// derivatives (the second carries the jump term `f(x) / c_j`).
pub fn resolvent_rule(f: &NetworkFunction, lambda: Complex64, net: &StarNetwork) -> Result<NetworkFunction> {
    let sp = check_resolvent_set(lambda, net)?;
    let r = f.compact_radius()?;
    let moments = plane_wave_moments(&sp, f, r);
    for j in 0..net.n() {
        sp.s(j)?;
    }
    let total: Complex64 = moments.iter().sum();
    let c = net.c().to_vec();
    let f = f.clone();
    let eval = move |j: usize, x: f64| -> [Complex64; 3] {
        let bps = f.breakpoints(r);
        let split = x.min(r);
        let lower = composite_gauss(0.0, split, &bps, 0.05, 16)
            .integrate(|y| f.eval(j, y) * sp.f(j, j, y).unwrap_or_default());
        let upper = composite_gauss(split, r, &bps, 0.05, 16).integrate(|y| f.eval(j, y) * sp.plane_wave(j, y));
        let cross = total - moments[j];
        let left = cross + lower;
        let w = sp.w();
        let e = sp.f_derivs((j + 1) % sp.n(), j, x).unwrap_or_default();
        let own = sp.f_derivs(j, j, x).unwrap_or_default();
        [
            (e[0] * left + own[0] * upper) / w,
            (e[1] * left + own[1] * upper) / w,
            (e[2] * left + own[2] * upper) / w + f.eval(j, x) / c[j],
        ]
    };
    let eval = std::sync::Arc::new(eval);
    let (e0, e1, e2) = (eval.clone(), eval.clone(), eval);
    Ok(NetworkFunction::analytic(net.n(), Support::Decaying(r), move |j, x| e0(j, x)[0])
        .with_d1(move |j, x| e1(j, x)[1])
        .with_d2(move |j, x| e2(j, x)[2]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitingAbsorptionReport {
    pub lambda: f64,
    pub eps: Vec<f64>,
    /// `|K(x, x', lambda - i eps) - K(x, x', lambda)|`, one row per query.
    pub defects: Vec<Vec<f64>>,
    /// Largest defect at the smallest `eps`.
    pub final_defect: f64,
    /// Every row non-increasing up to `1e-12`.
    pub monotone: bool,
    pub envelope_checks: usize,
    pub envelope_violations: usize,
}

/// Boundary values of the kernel from below the real axis.
pub fn check_limiting_absorption(
    lambda: f64,
    eps_sequence: &[f64],
    sample: &[(NetworkPoint, NetworkPoint)],
    net: &StarNetwork,
) -> Result<LimitingAbsorptionReport> {
    if lambda < net.a()[0] {
        return Err(Error::Precondition(format!("lambda = {lambda} is below a_1 = {}", net.a()[0])));
    }
    if eps_sequence.is_empty() || eps_sequence.iter().any(|&e| !(e > 0.0)) || eps_sequence.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::Precondition("eps sequence must be positive and strictly decreasing".into()));
    }
    let delta = eps_sequence[0];
    let bound = bound_n_gamma(lambda, delta, net);
    let limit = SpectralPoint::for_kernel(Complex64::new(lambda, 0.0), net);
    let shifted: Vec<SpectralPoint> = eps_sequence
        .iter()
        .map(|&e| SpectralPoint::for_kernel(Complex64::new(lambda, -e), net))
        .collect();
    let mut defects = Vec::with_capacity(sample.len());
    let mut violations = 0;
    let mut checks = 0;
    for &(x, xp) in sample {
        let k0 = kernel_at(&limit, x, xp)?;
        let mut row = Vec::with_capacity(shifted.len());
        for sp in &shifted {
            let k = kernel_at(sp, x, xp)?;
            row.push((k - k0).norm());
            checks += 1;
            if k.norm() > bound.at(x.x, xp.x) {
                violations += 1;
            }
        }
        defects.push(row);
    }
    let final_defect = defects.iter().map(|r| *r.last().unwrap()).fold(0.0, f64::max);
    let monotone = defects.iter().all(|r| r.windows(2).all(|p| p[1] <= p[0] + 1e-12));
    Ok(LimitingAbsorptionReport {
        lambda,
        eps: eps_sequence.to_vec(),
        defects,
        final_defect,
        monotone,
        envelope_checks: checks,
        envelope_violations: violations,
    })
}
