//! Finite-difference model of `A` on the star truncated at `x = L`, used as
//! an independent oracle.
//!
//! Unknowns are the vertex value and the interior nodes `x_i = i h`,
//! `0 < i < m = L/h`, of each branch, with `u = 0` at `x = L`. The
//! discrete form is
//! `sum_k c_k sum_i |u_{k,i+1} - u_{k,i}|^2 / h + sum_k a_k (mass terms)`
//! against the mass weights `n h / 2` (vertex) and `h` (interior); in the
//! variables `y = W^{1/2} u` the operator is a real symmetric matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::{NetworkFunction, StarNetwork, Support};
use crate::numerics::{integrate, QuadratureSpec};

type C = Complex64;
const ZERO: C = C { re: 0.0, im: 0.0 };

/// Finite-difference operator on the truncated star.
#[derive(Debug, Clone)]
pub struct DiscreteStarOperator {
    net: StarNetwork,
    length: f64,
    h: f64,
    /// Nodes per branch including the vertex and the Dirichlet end.
    m: usize,
}

impl DiscreteStarOperator {
    pub fn n(&self) -> usize {
        self.net.n()
    }

    pub fn net(&self) -> &StarNetwork {
        &self.net
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// Interior nodes per branch.
    pub fn interior(&self) -> usize {
        self.m - 1
    }

    /// Number of unknowns.
    pub fn dim(&self) -> usize {
        1 + self.n() * self.interior()
    }

    /// Index of node `i` (`1 <= i < m`) on `branch`; the vertex is index 0.
    pub fn index(&self, branch: usize, i: usize) -> usize {
        if i == 0 {
            0
        } else {
            1 + branch * self.interior() + (i - 1)
        }
    }

    /// Mass weight of an unknown.
    pub fn mass(&self, idx: usize) -> f64 {
        if idx == 0 {
            0.5 * self.n() as f64 * self.h
        } else {
            self.h
        }
    }

    fn off_vertex(&self, k: usize) -> f64 {
        -self.net.c()[k] * (2.0 / self.n() as f64).sqrt() / (self.h * self.h)
    }

    fn vertex_diag(&self) -> f64 {
        let n = self.n() as f64;
        let sc: f64 = self.net.c().iter().sum();
        let sa: f64 = self.net.a().iter().sum();
        2.0 * sc / (n * self.h * self.h) + sa / n
    }

    /// Nonzero entries `(row, col, value)` of the symmetric matrix.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = vec![(0, 0, self.vertex_diag())];
        let h2 = self.h * self.h;
        for k in 0..self.n() {
            let (c, a) = (self.net.c()[k], self.net.a()[k]);
            let first = self.index(k, 1);
            t.push((0, first, self.off_vertex(k)));
            t.push((first, 0, self.off_vertex(k)));
            for i in 1..self.m {
                let r = self.index(k, i);
                t.push((r, r, 2.0 * c / h2 + a));
                if i + 1 < self.m {
                    t.push((r, r + 1, -c / h2));
                    t.push((r + 1, r, -c / h2));
                }
            }
        }
        t
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// `M y` in the symmetric variables.
    pub fn matvec(&self, y: &[C]) -> Vec<C> {
        let h2 = self.h * self.h;
        let mut out = vec![ZERO; y.len()];
        out[0] = y[0] * self.vertex_diag();
        for k in 0..self.n() {
            let (c, a) = (self.net.c()[k], self.net.a()[k]);
            let first = self.index(k, 1);
            let ov = self.off_vertex(k);
            out[0] += y[first] * ov;
            let last = self.index(k, self.m - 1);
            for r in first..=last {
                let mut v = y[r] * (2.0 * c / h2 + a);
                v += if r == first { y[0] * ov } else { y[r - 1] * (-c / h2) };
                if r < last {
                    v += y[r + 1] * (-c / h2);
                }
                out[r] = v;
            }
        }
        out
    }

    /// Gershgorin bound for the top of the spectrum.
    pub fn upper_bound(&self) -> f64 {
        let mut rows = vec![0.0f64; self.dim()];
        for (i, j, v) in self.triplets() {
            rows[i] += if i == j { v } else { v.abs() };
        }
        rows.into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Samples of `f` at the unknowns (the vertex value is the branch mean).
    pub fn restrict(&self, f: &NetworkFunction) -> Vec<C> {
        let mut u = vec![ZERO; self.dim()];
        u[0] = (0..self.n()).map(|k| f.eval(k, 0.0)).sum::<C>() / self.n() as f64;
        for k in 0..self.n() {
            for i in 1..self.m {
                u[self.index(k, i)] = f.eval(k, i as f64 * self.h);
            }
        }
        u
    }

    /// `W^{1/2} u`.
    pub fn to_symmetric(&self, u: &[C]) -> Vec<C> {
        u.iter().enumerate().map(|(i, v)| v * self.mass(i).sqrt()).collect()
    }

    /// `W^{-1/2} y`.
    pub fn from_symmetric(&self, y: &[C]) -> Vec<C> {
        y.iter().enumerate().map(|(i, v)| v / self.mass(i).sqrt()).collect()
    }

    /// Nodal values as a grid function (vertex, interior nodes, zero at `L`).
    pub fn to_function(&self, u: &[C]) -> Result<NetworkFunction> {
        let samples = (0..self.n())
            .map(|k| {
                let mut s = Vec::with_capacity(self.m + 1);
                s.push(u[0]);
                s.extend((1..self.m).map(|i| u[self.index(k, i)]));
                s.push(ZERO);
                s
            })
            .collect();
        NetworkFunction::grid(vec![self.h; self.n()], samples)
    }

    /// `(u, v)_W = sum_i w_i u_i conj(v_i)`.
    pub fn inner(&self, u: &[C], v: &[C]) -> C {
        u.iter().zip(v).enumerate().map(|(i, (a, b))| self.mass(i) * a * b.conj()).sum()
    }

    /// `A_h u` on nodal values.
    pub fn apply(&self, u: &[C]) -> Vec<C> {
        self.from_symmetric(&self.matvec(&self.to_symmetric(u)))
    }
}

/// Assemble the operator for a truncation length that is an integer multiple
/// (at least 4) of the step.
pub fn assemble(net: &StarNetwork, length: f64, h: f64) -> Result<DiscreteStarOperator> {
    if !(h > 0.0) || !(length > 0.0) || !length.is_finite() {
        return Err(Error::BadGrid(format!("L = {length}, h = {h}")));
    }
    let ratio = length / h;
    let m = ratio.round();
    if (ratio - m).abs() > 1e-9 * ratio || m < 4.0 {
        return Err(Error::BadGrid(format!("L / h = {ratio} must be an integer >= 4")));
    }
    Ok(DiscreteStarOperator {
        net: net.clone(),
        length,
        h,
        m: m as usize,
    })
}

/// Solve `(lambda - A_h) u = f` on nodal values by eliminating each branch
/// towards the vertex.
pub fn oracle_resolvent(op: &DiscreteStarOperator, f: &[C], lambda: C) -> Result<Vec<C>> {
    if f.len() != op.dim() {
        return Err(Error::LengthMismatch {
            expected: op.dim(),
            got: f.len(),
        });
    }
    let n = op.n();
    let m = op.m;
    let h2 = op.h * op.h;
    let tiny = 1e-300;
    // u_{i+1} = alpha_{i+1} u_i + beta_{i+1}, from u_m = 0 downwards
    let mut alpha = vec![vec![ZERO; m + 1]; n];
    let mut beta = vec![vec![ZERO; m + 1]; n];
    for k in 0..n {
        let (c, a) = (op.net.c()[k], op.net.a()[k]);
        let d = (lambda - a) * h2 / c - 2.0;
        for i in (1..m).rev() {
            let g = f[op.index(k, i)] * h2 / c;
            let piv = d + alpha[k][i + 1];
            if piv.norm() < tiny {
                return Err(Error::SingularSystem);
            }
            alpha[k][i] = -1.0 / piv;
            beta[k][i] = (g - beta[k][i + 1]) / piv;
        }
    }
    let nf = n as f64;
    let abar: f64 = op.net.a().iter().sum::<f64>() / nf;
    let mut lhs = lambda - abar;
    let mut rhs = f[0];
    for k in 0..n {
        let c = op.net.c()[k];
        lhs -= 2.0 * c / (nf * h2) * (1.0 - alpha[k][1]);
        rhs -= 2.0 * c / (nf * h2) * beta[k][1];
    }
    if lhs.norm() < tiny {
        return Err(Error::SingularSystem);
    }
    let mut u = vec![ZERO; op.dim()];
    u[0] = rhs / lhs;
    for k in 0..n {
        let mut prev = u[0];
        for i in 1..m {
            let v = alpha[k][i] * prev + beta[k][i];
            u[op.index(k, i)] = v;
            prev = v;
        }
    }
    Ok(u)
}

/// `||(lambda - A_h) u - f||_W / ||f||_W`.
pub fn resolvent_residual(op: &DiscreteStarOperator, u: &[C], f: &[C], lambda: C) -> f64 {
    let au = op.apply(u);
    let r: Vec<C> = u.iter().zip(&au).zip(f).map(|((u, a), f)| lambda * u - a - f).collect();
    let nf = op.inner(f, f).re.sqrt();
    op.inner(&r, &r).re.sqrt() / nf.max(1e-300)
}

/// `lambda -> sum_modes |(f, phi)|^2 K_eps(lambda - mu)` with the
/// fourth-order Lorentzian combination `K_eps = 2 P_eps - P_{2 eps}`,
/// evaluated through discrete resolvents.
#[derive(Debug, Clone)]
pub struct SpectralDensity {
    op: DiscreteStarOperator,
    f: Vec<C>,
    pub smoothing: f64,
}

/// Smoothed spectral density of `f` (nodal values) under `A_h`.
pub fn oracle_spectral_density(op: &DiscreteStarOperator, f: &[C], smoothing: f64) -> SpectralDensity {
    SpectralDensity {
        op: op.clone(),
        f: f.to_vec(),
        smoothing,
    }
}

impl SpectralDensity {
    /// `-(1/pi) Im (R(lambda + i eps) f, f)`.
    fn poisson(&self, lambda: f64, eps: f64) -> Result<f64> {
        let u = oracle_resolvent(&self.op, &self.f, C::new(lambda, eps))?;
        Ok(-self.op.inner(&u, &self.f).im / std::f64::consts::PI)
    }

    pub fn eval(&self, lambda: f64) -> Result<f64> {
        Ok(2.0 * self.poisson(lambda, self.smoothing)? - self.poisson(lambda, 2.0 * self.smoothing)?)
    }

    /// `int_a^b density`.
    pub fn integral(&self, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
        let spec = QuadratureSpec {
            rel_tol,
            abs_tol: 1e-14,
            max_subdivisions: 2000,
            ..QuadratureSpec::default()
        };
        let err = std::cell::Cell::new(None);
        let r = integrate(
            |l| match self.eval(l) {
                Ok(v) => C::new(v, 0.0),
                Err(e) => {
                    err.set(Some(e));
                    ZERO
                }
            },
            a,
            b,
            &spec,
        )?;
        if let Some(e) = err.take() {
            return Err(e);
        }
        Ok(r.value.re)
    }
}

/// Spectral data of `f` from a dense eigendecomposition (small problems).
#[derive(Debug, Clone)]
pub struct ModalDensity {
    pub eigenvalues: Vec<f64>,
    /// `|(f, phi_i)_W|^2`.
    pub weights: Vec<f64>,
}

impl ModalDensity {
    pub fn new(op: &DiscreteStarOperator, f: &[C]) -> Self {
        let eig = SymmetricEigen::new(op.to_dense());
        let y = op.to_symmetric(f);
        let weights = (0..op.dim())
            .map(|i| {
                let v = eig.eigenvectors.column(i);
                y.iter().zip(v.iter()).map(|(a, b)| a * *b).sum::<C>().norm_sqr()
            })
            .collect();
        Self {
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
            weights,
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Exact integral over `(a, b)` of the mollified density.
    pub fn integral(&self, a: f64, b: f64, smoothing: f64) -> f64 {
        let p = |eps: f64, mu: f64| (((b - mu) / eps).atan() - ((a - mu) / eps).atan()) / std::f64::consts::PI;
        self.eigenvalues
            .iter()
            .zip(&self.weights)
            .map(|(&mu, &w)| w * (2.0 * p(smoothing, mu) - p(2.0 * smoothing, mu)))
            .sum()
    }
}

/// Discrete displacement and velocity (nodal values).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteWaveState {
    pub u: Vec<C>,
    pub v: Vec<C>,
    pub t: f64,
}

/// `|v|_W^2 + (A_h u, u)_W`.
pub fn discrete_energy(op: &DiscreteStarOperator, st: &DiscreteWaveState) -> f64 {
    op.inner(&st.v, &st.v).re + op.inner(&op.apply(&st.u), &st.u).re
}

fn chebyshev_coefficients(f: impl Fn(f64) -> f64, lo: f64, hi: f64, degree: usize) -> Vec<f64> {
    let nodes = degree + 1;
    let vals: Vec<f64> = (0..nodes)
        .map(|j| {
            let th = std::f64::consts::PI * (j as f64 + 0.5) / nodes as f64;
            f(0.5 * (hi + lo) + 0.5 * (hi - lo) * th.cos())
        })
        .collect();
    (0..nodes)
        .map(|k| {
            let s: f64 = vals
                .iter()
                .enumerate()
                .map(|(j, v)| v * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / nodes as f64).cos())
                .sum();
            let c = 2.0 * s / nodes as f64;
            if k == 0 {
                0.5 * c
            } else {
                c
            }
        })
        .collect()
}

/// Apply `sum_k coeffs_k T_k(M)` to `y` for a spectrum inside `[lo, hi]`.
fn chebyshev_apply(op: &DiscreteStarOperator, coeffs: &[f64], lo: f64, hi: f64, y: &[C]) -> Vec<C> {
    let (mid, half) = (0.5 * (hi + lo), 0.5 * (hi - lo));
    let scaled = |v: &[C]| -> Vec<C> { op.matvec(v).iter().zip(v).map(|(m, x)| (m - x * mid) / half).collect() };
    let mut t0 = y.to_vec();
    let mut out: Vec<C> = t0.iter().map(|v| v * coeffs[0]).collect();
    if coeffs.len() == 1 {
        return out;
    }
    let mut t1 = scaled(&t0);
    for (o, v) in out.iter_mut().zip(&t1) {
        *o += v * coeffs[1];
    }
    for &ck in &coeffs[2..] {
        let s = scaled(&t1);
        let t2: Vec<C> = s.iter().zip(&t0).map(|(a, b)| 2.0 * a - b).collect();
        for (o, v) in out.iter_mut().zip(&t2) {
            *o += v * ck;
        }
        t0 = t1;
        t1 = t2;
    }
    out
}

fn support_radius(f: &NetworkFunction) -> Result<f64> {
    match f.support() {
        Support::Compact(r) => Ok(r),
        _ => Err(Error::NonCompactSupport),
    }
}

/// Discrete solution of `u_tt + A_h u = 0` at time `t`, through Chebyshev
/// expansions of `cos(t sqrt(M))` and `sin(t sqrt(M)) / sqrt(M)`.
pub fn oracle_evolve(op: &DiscreteStarOperator, u0: &NetworkFunction, v0: &NetworkFunction, t: f64) -> Result<DiscreteWaveState> {
    let reach = support_radius(u0)?.max(support_radius(v0)?) + t.abs() * op.net.max_speed();
    if reach >= op.length {
        return Err(Error::BoundaryContamination { reach, length: op.length });
    }
    let (yu, yv) = (op.to_symmetric(&op.restrict(u0)), op.to_symmetric(&op.restrict(v0)));
    if t == 0.0 {
        return Ok(DiscreteWaveState {
            u: op.from_symmetric(&yu),
            v: op.from_symmetric(&yv),
            t,
        });
    }
    // the discrete form dominates a_1 times the mass form
    let lo = op.net.a()[0] - 1e-9 * (1.0 + op.net.a()[0].abs());
    let hi = op.upper_bound() * (1.0 + 1e-12);
    let degree = (1.3 * t.abs() * (hi - lo).max(0.0).sqrt() + 60.0) as usize;
    let cosf = |l: f64| crate::evolution::cos_multiplier(l, t);
    let sinc = |l: f64| crate::evolution::sinc_multiplier(l, t);
    let msin = |l: f64| -l * crate::evolution::sinc_multiplier(l, t);
    let trim = |mut c: Vec<f64>| {
        let top = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        while c.len() > 1 && c.last().map_or(false, |v| v.abs() < 1e-17 * top) {
            c.pop();
        }
        c
    };
    let (cc, cs, cm) = (
        trim(chebyshev_coefficients(cosf, lo, hi, degree)),
        trim(chebyshev_coefficients(sinc, lo, hi, degree)),
        trim(chebyshev_coefficients(msin, lo, hi, degree)),
    );
    let add = |a: Vec<C>, b: Vec<C>| a.into_iter().zip(b).map(|(x, y)| x + y).collect::<Vec<C>>();
    let u = add(chebyshev_apply(op, &cc, lo, hi, &yu), chebyshev_apply(op, &cs, lo, hi, &yv));
    let v = add(chebyshev_apply(op, &cm, lo, hi, &yu), chebyshev_apply(op, &cc, lo, hi, &yv));
    Ok(DiscreteWaveState {
        u: op.from_symmetric(&u),
        v: op.from_symmetric(&v),
        t,
    })
}
