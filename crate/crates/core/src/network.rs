//! Star network geometry, functions on the network and the operator
//! `A u = (-c_k u_k'' + a_k u_k)_k`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{composite_gauss, integrate, QuadratureSpec};

/// `n` half-lines glued at one vertex; branch `k` carries the coefficients
/// `c_k > 0` and `a_k`, with the potentials sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct StarNetwork {
    c: Vec<f64>,
    a: Vec<f64>,
}

pub fn validate_network(c: &[f64], a: &[f64]) -> Result<()> {
    if c.len() != a.len() {
        return Err(Error::LengthMismatch {
            expected: c.len(),
            got: a.len(),
        });
    }
    if c.len() < 2 {
        return Err(Error::TooFewBranches(c.len()));
    }
    if c.iter().chain(a).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteParameter);
    }
    if let Some((branch, &value)) = c.iter().enumerate().find(|(_, &v)| v <= 0.0) {
        return Err(Error::NonPositiveSpeed { branch, value });
    }
    if let Some(k) = (1..a.len()).find(|&k| a[k] < a[k - 1]) {
        return Err(Error::UnsortedPotentials { branch: k });
    }
    Ok(())
}

impl StarNetwork {
    pub fn new(c: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        validate_network(&c, &a)?;
        Ok(Self { c, a })
    }

    /// `n` identical branches.
    pub fn uniform(n: usize, c: f64, a: f64) -> Result<Self> {
        Self::new(vec![c; n], vec![a; n])
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// `a_k`, with `a_n` (one past the last branch) read as `+inf`.
    pub fn potential(&self, k: usize) -> f64 {
        self.a.get(k).copied().unwrap_or(f64::INFINITY)
    }

    /// Number of branches with `a_k < lambda`.
    pub fn band_index(&self, lambda: f64) -> usize {
        self.a.iter().filter(|&&ak| ak < lambda).count()
    }

    /// Distinct potentials, ascending.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut t = self.a.clone();
        t.dedup();
        t
    }

    pub fn threshold_at(&self, lambda: f64) -> Option<usize> {
        self.a.iter().position(|&ak| ak == lambda)
    }

    pub fn equal_potentials(&self) -> bool {
        self.a.iter().all(|&ak| ak == self.a[0])
    }

    /// Largest propagation speed `max_k sqrt(c_k)`.
    pub fn max_speed(&self) -> f64 {
        self.c.iter().fold(0.0f64, |m, &ck| m.max(ck.sqrt()))
    }
}

/// A point on the star. All points with `x = 0` are the same vertex.
#[derive(Debug, Clone, Copy)]
pub struct NetworkPoint {
    pub branch: usize,
    pub x: f64,
}

impl NetworkPoint {
    pub fn new(branch: usize, x: f64) -> Self {
        Self { branch, x }
    }

    pub fn vertex() -> Self {
        Self { branch: 0, x: 0.0 }
    }

    pub fn is_vertex(&self) -> bool {
        self.x == 0.0
    }
}

impl PartialEq for NetworkPoint {
    fn eq(&self, other: &Self) -> bool {
        (self.is_vertex() && other.is_vertex()) || (self.branch == other.branch && self.x == other.x)
    }
}

/// Per-branch uniform output grids on `[0, L_k]` with step `h_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lengths: Vec<f64>,
    pub steps: Vec<f64>,
}

impl GridSpec {
    pub fn uniform(n: usize, length: f64, step: f64) -> Self {
        Self {
            lengths: vec![length; n],
            steps: vec![step; n],
        }
    }

    pub fn n(&self) -> usize {
        self.lengths.len()
    }

    pub fn count(&self, k: usize) -> usize {
        grid_count(self.lengths[k], self.steps[k])
    }

    pub fn x(&self, k: usize, i: usize) -> f64 {
        self.steps[k] * i as f64
    }

    pub fn points(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.count(k)).map(move |i| self.x(k, i))
    }
}

fn grid_count(length: f64, step: f64) -> usize {
    (length / step + 1e-9).floor() as usize + 1
}

pub type BranchFn = Arc<dyn Fn(usize, f64) -> Complex64 + Send + Sync>;

/// Where a function lives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    /// Zero for `x > r` on every branch.
    Compact(f64),
    /// Integrable tail beyond `r`; quadrature runs out to infinity.
    Decaying(f64),
    Unbounded,
}

#[derive(Clone)]
pub struct AnalyticRule {
    pub value: BranchFn,
    pub d1: Option<BranchFn>,
    pub d2: Option<BranchFn>,
    /// Points where the rule is not smooth (quadrature breakpoints).
    pub breakpoints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSamples {
    pub steps: Vec<f64>,
    pub samples: Vec<Vec<Complex64>>,
}

impl GridSamples {
    pub fn length(&self, k: usize) -> f64 {
        self.steps[k] * (self.samples[k].len() - 1) as f64
    }

    /// Cubic Lagrange interpolation, zero beyond the last sample.
    fn eval(&self, k: usize, x: f64) -> Complex64 {
        let u = &self.samples[k];
        let h = self.steps[k];
        let len = u.len();
        if x < 0.0 || x > self.length(k) * (1.0 + 1e-12) {
            return Complex64::new(0.0, 0.0);
        }
        if len < 4 {
            let t = (x / h).min((len - 1) as f64);
            let i = (t.floor() as usize).min(len.saturating_sub(2));
            if len == 1 {
                return u[0];
            }
            let f = t - i as f64;
            return u[i] * (1.0 - f) + u[i + 1] * f;
        }
        let t = x / h;
        let i = t.floor() as isize;
        let s = (i - 1).clamp(0, len as isize - 4) as usize;
        let t = t - s as f64;
        let l0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
        let l1 = t * (t - 2.0) * (t - 3.0) / 2.0;
        let l2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
        let l3 = t * (t - 1.0) * (t - 2.0) / 6.0;
        u[s] * l0 + u[s + 1] * l1 + u[s + 2] * l2 + u[s + 3] * l3
    }
}

#[derive(Clone)]
pub enum Representation {
    Analytic(AnalyticRule),
    Grid(GridSamples),
}

/// A complex-valued function on the star.
#[derive(Clone)]
pub struct NetworkFunction {
    n: usize,
    repr: Representation,
    support: Support,
}

impl fmt::Debug for NetworkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.repr {
            Representation::Analytic(_) => "analytic",
            Representation::Grid(_) => "grid",
        };
        f.debug_struct("NetworkFunction")
            .field("n", &self.n)
            .field("kind", &kind)
            .field("support", &self.support)
            .finish()
    }
}

impl NetworkFunction {
    pub fn analytic<F>(n: usize, support: Support, f: F) -> Self
    where
        F: Fn(usize, f64) -> Complex64 + Send + Sync + 'static,
    {
        Self {
            n,
            repr: Representation::Analytic(AnalyticRule {
                value: Arc::new(f),
                d1: None,
                d2: None,
                breakpoints: Vec::new(),
            }),
            support,
        }
    }

    pub fn with_d1<F>(mut self, f: F) -> Self
    where
        F: Fn(usize, f64) -> Complex64 + Send + Sync + 'static,
    {
        if let Representation::Analytic(rule) = &mut self.repr {
            rule.d1 = Some(Arc::new(f));
        }
        self
    }

    pub fn with_d2<F>(mut self, f: F) -> Self
    where
        F: Fn(usize, f64) -> Complex64 + Send + Sync + 'static,
    {
        if let Representation::Analytic(rule) = &mut self.repr {
            rule.d2 = Some(Arc::new(f));
        }
        self
    }

    pub fn with_breakpoints(mut self, points: impl IntoIterator<Item = f64>) -> Self {
        if let Representation::Analytic(rule) = &mut self.repr {
            rule.breakpoints.extend(points);
        }
        self
    }

    pub fn zero(n: usize) -> Self {
        let z = |_: usize, _: f64| Complex64::new(0.0, 0.0);
        Self::analytic(n, Support::Compact(0.0), z).with_d1(z).with_d2(z)
    }

    /// Grid-sampled function; sample counts fix each `L_k`.
    pub fn grid(steps: Vec<f64>, samples: Vec<Vec<Complex64>>) -> Result<Self> {
        if steps.len() != samples.len() {
            return Err(Error::LengthMismatch {
                expected: steps.len(),
                got: samples.len(),
            });
        }
        if steps.iter().any(|&h| !(h > 0.0)) || samples.iter().any(|s| s.is_empty()) {
            return Err(Error::BadGrid("steps must be positive and branches non-empty".into()));
        }
        let g = GridSamples { steps, samples };
        let radius = (0..g.steps.len()).map(|k| g.length(k)).fold(0.0, f64::max);
        Ok(Self {
            n: g.steps.len(),
            repr: Representation::Grid(g),
            support: Support::Compact(radius),
        })
    }

    /// Samples `f` on `grid`.
    pub fn sample_on(&self, grid: &GridSpec) -> NetworkFunction {
        let samples = (0..grid.n())
            .map(|k| grid.points(k).map(|x| self.eval(k, x)).collect())
            .collect();
        NetworkFunction::grid(grid.steps.clone(), samples).expect("grid spec is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn representation(&self) -> &Representation {
        &self.repr
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn set_support(mut self, support: Support) -> Self {
        self.support = support;
        self
    }

    pub fn compact_radius(&self) -> Result<f64> {
        match self.support {
            Support::Compact(r) => Ok(r),
            _ => Err(Error::NonCompactSupport),
        }
    }

    pub fn grid_samples(&self) -> Option<&GridSamples> {
        match &self.repr {
            Representation::Grid(g) => Some(g),
            Representation::Analytic(_) => None,
        }
    }

    fn outside(&self, x: f64) -> bool {
        matches!(self.support, Support::Compact(r) if x > r)
    }

    pub fn eval(&self, branch: usize, x: f64) -> Complex64 {
        if self.outside(x) {
            return Complex64::new(0.0, 0.0);
        }
        match &self.repr {
            Representation::Analytic(rule) => (rule.value)(branch, x),
            Representation::Grid(g) => g.eval(branch, x),
        }
    }

    pub fn eval_at(&self, pt: NetworkPoint) -> Complex64 {
        self.eval(pt.branch, pt.x)
    }

    pub fn d1(&self, branch: usize, x: f64) -> Option<Complex64> {
        match &self.repr {
            Representation::Analytic(AnalyticRule { d1: Some(d), .. }) => {
                Some(if self.outside(x) { Complex64::new(0.0, 0.0) } else { d(branch, x) })
            }
            _ => None,
        }
    }

    pub fn d2(&self, branch: usize, x: f64) -> Option<Complex64> {
        match &self.repr {
            Representation::Analytic(AnalyticRule { d2: Some(d), .. }) => {
                Some(if self.outside(x) { Complex64::new(0.0, 0.0) } else { d(branch, x) })
            }
            _ => None,
        }
    }

    pub fn has_d2(&self) -> bool {
        matches!(&self.repr, Representation::Analytic(AnalyticRule { d2: Some(_), .. }))
    }

    /// Declared non-smooth points on a branch, inside `(0, r)`.
    pub fn breakpoints(&self, r: f64) -> Vec<f64> {
        match &self.repr {
            Representation::Analytic(rule) => rule
                .breakpoints
                .iter()
                .copied()
                .filter(|&p| p > 0.0 && p < r)
                .collect(),
            Representation::Grid(_) => Vec::new(),
        }
    }

    /// `alpha * self + beta * other`, keeping derivative rules both sides provide.
    pub fn combine(&self, alpha: Complex64, other: &NetworkFunction, beta: Complex64) -> NetworkFunction {
        let support = match (self.support, other.support) {
            (Support::Compact(r1), Support::Compact(r2)) => Support::Compact(r1.max(r2)),
            (Support::Unbounded, _) | (_, Support::Unbounded) => Support::Unbounded,
            (s1, s2) => Support::Decaying(radius_of(s1).max(radius_of(s2))),
        };
        let (f, g) = (self.clone(), other.clone());
        let mut out = NetworkFunction::analytic(self.n, support, move |k, x| {
            f.eval(k, x) * alpha + g.eval(k, x) * beta
        });
        if self.d1(0, 0.0).is_some() && other.d1(0, 0.0).is_some() {
            let (f, g) = (self.clone(), other.clone());
            out = out.with_d1(move |k, x| {
                f.d1(k, x).unwrap_or_default() * alpha + g.d1(k, x).unwrap_or_default() * beta
            });
        }
        if self.has_d2() && other.has_d2() {
            let (f, g) = (self.clone(), other.clone());
            out = out.with_d2(move |k, x| {
                f.d2(k, x).unwrap_or_default() * alpha + g.d2(k, x).unwrap_or_default() * beta
            });
        }
        let mut bps = self.breakpoints(f64::INFINITY);
        bps.extend(other.breakpoints(f64::INFINITY));
        if let Some(g) = self.grid_samples().or(other.grid_samples()) {
            // grid kinks are handled by cell-aligned rules; record the finest step
            let h = g.steps.iter().copied().fold(f64::INFINITY, f64::min);
            let r = radius_of(support);
            if r.is_finite() {
                bps.extend((1..(r / h) as usize).map(|i| i as f64 * h));
            }
        }
        out.with_breakpoints(bps)
    }

    /// Per-branch fixed quadrature rule on `[0, r]` honouring the function's
    /// breakpoints (grid cells for sampled functions).
    pub(crate) fn x_rule(&self, branch: usize, r: f64, max_width: f64, order: usize) -> crate::numerics::NodeSet {
        match &self.repr {
            Representation::Grid(g) => {
                let h = g.steps[branch];
                let top = r.min(g.length(branch));
                let cells = ((top / h).round() as usize).max(1);
                crate::numerics::uniform_panels(0.0, top, cells, 4)
            }
            Representation::Analytic(_) => composite_gauss(0.0, r, &self.breakpoints(r), max_width, order),
        }
    }
}

fn radius_of(s: Support) -> f64 {
    match s {
        Support::Compact(r) | Support::Decaying(r) => r,
        Support::Unbounded => f64::INFINITY,
    }
}

/// `(u, v)_H = sum_k int u_k conj(v_k) dx`.
pub fn inner_product_h(u: &NetworkFunction, v: &NetworkFunction, net: &StarNetwork) -> Result<Complex64> {
    let n = net.n();
    if u.n() != n || v.n() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: u.n().min(v.n()),
        });
    }
    if let (Some(gu), Some(gv)) = (u.grid_samples(), v.grid_samples()) {
        if gu.steps == gv.steps && (0..n).all(|k| gu.samples[k].len() == gv.samples[k].len()) {
            return Ok((0..n)
                .map(|k| {
                    let prod: Vec<Complex64> = gu.samples[k]
                        .iter()
                        .zip(&gv.samples[k])
                        .map(|(a, b)| a * b.conj())
                        .collect();
                    simpson(&prod, gu.steps[k])
                })
                .sum());
        }
    }
    let radius = match (u.support(), v.support()) {
        (Support::Compact(a), Support::Compact(b)) => a.min(b),
        (Support::Compact(a), _) | (_, Support::Compact(a)) => a,
        (Support::Decaying(_), Support::Decaying(_)) => f64::INFINITY,
        _ => return Err(Error::NonIntegrable),
    };
    let tail_start = radius_of(u.support()).max(radius_of(v.support()));
    let gridded = u.grid_samples().or(v.grid_samples()).is_some();
    let mut total = Complex64::new(0.0, 0.0);
    for k in 0..n {
        let integrand = |x: f64| u.eval(k, x) * v.eval(k, x).conj();
        if gridded && radius.is_finite() {
            let src = if u.grid_samples().is_some() { u } else { v };
            total += src.x_rule(k, radius, radius, 4).integrate(integrand);
            continue;
        }
        let mut bps = u.breakpoints(radius);
        bps.extend(v.breakpoints(radius));
        if radius.is_infinite() && tail_start.is_finite() {
            bps.push(tail_start);
        }
        let spec = QuadratureSpec {
            breakpoints: bps,
            rel_tol: 1e-12,
            abs_tol: 1e-15,
            max_subdivisions: 2000,
        };
        total += integrate(integrand, 0.0, radius, &spec)?.value;
    }
    Ok(total)
}

pub fn norm_h(u: &NetworkFunction, net: &StarNetwork) -> Result<f64> {
    Ok(inner_product_h(u, u, net)?.re.max(0.0).sqrt())
}

/// Composite Simpson rule on uniform samples; a trailing odd interval uses
/// the 3/8 rule.
pub(crate) fn simpson(y: &[Complex64], h: f64) -> Complex64 {
    let m = y.len();
    match m {
        0 | 1 => Complex64::new(0.0, 0.0),
        2 => (y[0] + y[1]) * (0.5 * h),
        3 => (y[0] + y[1] * 4.0 + y[2]) * (h / 3.0),
        _ => {
            let intervals = m - 1;
            let simpson_end = if intervals % 2 == 0 { m - 1 } else { m - 4 };
            let mut acc = Complex64::new(0.0, 0.0);
            let mut i = 0;
            while i + 2 <= simpson_end {
                acc += (y[i] + y[i + 1] * 4.0 + y[i + 2]) * (h / 3.0);
                i += 2;
            }
            if simpson_end != m - 1 {
                let j = simpson_end;
                acc += (y[j] + y[j + 1] * 3.0 + y[j + 2] * 3.0 + y[j + 3]) * (3.0 * h / 8.0);
            }
            acc
        }
    }
}

/// `A u`. Analytic rules need a second-derivative rule; grids use centred
/// second differences and one-sided three-point stencils at both ends.
pub fn apply_a(u: &NetworkFunction, net: &StarNetwork) -> Result<NetworkFunction> {
    let c = net.c().to_vec();
    let a = net.a().to_vec();
    match u.representation() {
        Representation::Analytic(rule) => {
            let d2 = rule.d2.clone().ok_or(Error::MissingDerivativeRule)?;
            let value = rule.value.clone();
            Ok(NetworkFunction::analytic(u.n(), u.support(), move |k, x| {
                -d2(k, x) * c[k] + value(k, x) * a[k]
            })
            .with_breakpoints(rule.breakpoints.clone()))
        }
        Representation::Grid(g) => {
            let samples = g
                .samples
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let h2 = g.steps[k] * g.steps[k];
                    let m = s.len();
                    (0..m)
                        .map(|i| {
                            let dd = if m < 3 {
                                Complex64::new(0.0, 0.0)
                            } else if i == 0 {
                                s[0] - s[1] * 2.0 + s[2]
                            } else if i == m - 1 {
                                s[m - 1] - s[m - 2] * 2.0 + s[m - 3]
                            } else {
                                s[i - 1] - s[i] * 2.0 + s[i + 1]
                            };
                            -dd / h2 * c[k] + s[i] * a[k]
                        })
                        .collect()
                })
                .collect();
            NetworkFunction::grid(g.steps.clone(), samples)
        }
    }
}

/// Vertex condition defects of `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionDefects {
    /// `max_{i,k} |u_i(0) - u_k(0)|`
    pub t0_defect: f64,
    /// `|sum_k c_k u_k'(0+)|`
    pub t1_defect: f64,
}

impl TransmissionDefects {
    pub fn within(&self, tol: f64) -> bool {
        self.t0_defect <= tol && self.t1_defect <= tol
    }
}

pub fn check_transmission(u: &NetworkFunction, net: &StarNetwork) -> TransmissionDefects {
    let n = net.n();
    let values: Vec<Complex64> = (0..n).map(|k| u.eval(k, 0.0)).collect();
    let mut t0: f64 = 0.0;
    for i in 0..n {
        for k in i + 1..n {
            t0 = t0.max((values[i] - values[k]).norm());
        }
    }
    let flux: Complex64 = (0..n).map(|k| one_sided_derivative(u, k) * net.c()[k]).sum();
    TransmissionDefects {
        t0_defect: t0,
        t1_defect: flux.norm(),
    }
}

fn one_sided_derivative(u: &NetworkFunction, k: usize) -> Complex64 {
    if let Some(d) = u.d1(k, 0.0) {
        return d;
    }
    if let Some(g) = u.grid_samples() {
        let s = &g.samples[k];
        let h = g.steps[k];
        return match s.len() {
            0 | 1 => Complex64::new(0.0, 0.0),
            2 => (s[1] - s[0]) / h,
            _ => (-s[0] * 3.0 + s[1] * 4.0 - s[2]) / (2.0 * h),
        };
    }
    // fourth-order one-sided difference
    let h = 1e-3;
    let f = |i: f64| u.eval(k, i * h);
    (f(0.0) * -25.0 + f(1.0) * 48.0 - f(2.0) * 36.0 + f(3.0) * 16.0 - f(4.0) * 3.0) / (12.0 * h)
}

/// `amplitude * exp(-((x - center)/width)^2)` on one branch, zero elsewhere,
/// truncated at `center + 9 width`.
pub fn gaussian_on_branch(n: usize, branch: usize, center: f64, width: f64, amplitude: Complex64) -> NetworkFunction {
    let r = center + 9.0 * width;
    let g = move |k: usize, x: f64| -> (Complex64, Complex64, Complex64) {
        if k != branch {
            return Default::default();
        }
        let y = (x - center) / width;
        let e = amplitude * (-y * y).exp();
        let d1 = e * (-2.0 * y / width);
        let d2 = e * ((4.0 * y * y - 2.0) / (width * width));
        (e, d1, d2)
    };
    NetworkFunction::analytic(n, Support::Compact(r), move |k, x| g(k, x).0)
        .with_d1(move |k, x| g(k, x).1)
        .with_d2(move |k, x| g(k, x).2)
}

/// `amplitude * exp(-(x/width)^2)` on every branch. Continuous at the vertex
/// with zero slope, so it satisfies both vertex conditions.
pub fn vertex_gaussian(n: usize, width: f64, amplitude: Complex64) -> NetworkFunction {
    let r = 9.0 * width;
    let g = move |x: f64| -> (Complex64, Complex64, Complex64) {
        let y = x / width;
        let e = amplitude * (-y * y).exp();
        (e, e * (-2.0 * y / width), e * ((4.0 * y * y - 2.0) / (width * width)))
    };
    NetworkFunction::analytic(n, Support::Compact(r), move |_, x| g(x).0)
        .with_d1(move |_, x| g(x).1)
        .with_d2(move |_, x| g(x).2)
}

/// Indicator of `[lo, hi]` on one branch.
pub fn indicator(n: usize, branch: usize, lo: f64, hi: f64) -> NetworkFunction {
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    NetworkFunction::analytic(n, Support::Compact(hi), move |k, x| {
        if k == branch && x >= lo && x <= hi {
            one
        } else {
            zero
        }
    })
    .with_breakpoints([lo, hi])
}
