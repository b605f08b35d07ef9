//! Quadrature engine.
//!
//! Two families of rules live here:
//!
//! * an adaptive Gauss-Kronrod (G10/K21) integrator with mandatory caller
//!   breakpoints, used wherever an error estimate is needed, and
//! * fixed composite Gauss-Legendre panels, used to build the deterministic
//!   node sets on which eigenfunction integrals are sampled.
//!
//! All rules are open: no node ever coincides with an interval endpoint or a
//! breakpoint, so integrands with integrable endpoint singularities (for
//! example `|x - a|^{-1/2}`) are never evaluated at the singular point.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error(
        "tolerance not met after {subdivisions} subdivisions: value {value}, error estimate {error_estimate:e}"
    )]
    ToleranceNotMet {
        value: Complex64,
        error_estimate: f64,
        subdivisions: usize,
    },
    #[error("invalid interval [{0}, {1}]")]
    InvalidInterval(f64, f64),
}

/// Adaptive integration parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpec {
    /// Forced subdivision points. Points outside the open interval are ignored.
    pub breakpoints: Vec<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            breakpoints: Vec::new(),
            rel_tol: 1e-10,
            abs_tol: 1e-13,
            max_subdivisions: 400,
        }
    }
}

impl QuadratureSpec {
    pub fn with_tolerances(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            ..Self::default()
        }
    }

    pub fn with_breakpoints(mut self, breakpoints: impl IntoIterator<Item = f64>) -> Self {
        self.breakpoints.extend(breakpoints);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: Complex64,
    pub error_estimate: f64,
    pub evaluations: usize,
}

// Kronrod abscissae on [0, 1); odd entries are the 10-point Gauss abscissae.
const XGK21: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];

const WGK21: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_958_109_831,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];

const WG10: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

/// One K21 panel; returns the Kronrod value and `|kronrod - gauss|`, floored
/// by the rounding level of the panel.
fn gk21<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> (Complex64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK21[10];
    let mut abs_sum = fc.norm() * WGK21[10];
    let mut gauss = Complex64::new(0.0, 0.0);
    for i in 0..10 {
        let dx = half * XGK21[i];
        let (lo, hi) = (f(center - dx), f(center + dx));
        let pair = lo + hi;
        kronrod += pair * WGK21[i];
        abs_sum += (lo.norm() + hi.norm()) * WGK21[i];
        if i % 2 == 1 {
            gauss += pair * WG10[i / 2];
        }
    }
    let kronrod = kronrod * half;
    let gauss = gauss * half;
    let rounding = 50.0 * f64::EPSILON * abs_sum * half.abs();
    (kronrod, (kronrod - gauss).norm().max(rounding))
}

struct Panel {
    a: f64,
    b: f64,
    value: Complex64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .partial_cmp(&other.error)
            .unwrap_or(Ordering::Equal)
            // ties broken by position so the heap order is deterministic
            .then_with(|| other.a.partial_cmp(&self.a).unwrap_or(Ordering::Equal))
    }
}

/// Adaptive integration of a complex integrand over `[a, b]`.
///
/// `b` may be `f64::INFINITY`; the half-line is then mapped onto `[0, 1)`
/// with `x = a + t / (1 - t)`. The error estimate is the sum over panels of
/// the K21/G10 difference, which is a pessimistic bound for smooth integrands.
pub fn integrate<F>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<QuadResult, QuadError>
where
    F: Fn(f64) -> Complex64,
{
    if a.is_nan() || b.is_nan() || b < a || a.is_infinite() {
        return Err(QuadError::InvalidInterval(a, b));
    }
    if a == b {
        return Ok(QuadResult {
            value: Complex64::new(0.0, 0.0),
            error_estimate: 0.0,
            evaluations: 0,
        });
    }
    if b.is_infinite() {
        let mapped = |t: f64| {
            let s = 1.0 - t;
            f(a + t / s) / (s * s)
        };
        let mut mapped_spec = spec.clone();
        mapped_spec.breakpoints = spec
            .breakpoints
            .iter()
            .filter(|&&p| p > a && p.is_finite())
            .map(|&p| (p - a) / (1.0 + p - a))
            .collect();
        return integrate_finite(&mapped, 0.0, 1.0, &mapped_spec);
    }
    integrate_finite(&f, a, b, spec)
}

fn integrate_finite<F>(f: &F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<QuadResult, QuadError>
where
    F: Fn(f64) -> Complex64,
{
    let mut cuts: Vec<f64> = spec
        .breakpoints
        .iter()
        .copied()
        .filter(|&p| p > a && p < b)
        .collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(a);
    edges.extend(cuts);
    edges.push(b);

    let mut heap = BinaryHeap::new();
    let mut evaluations = 0usize;
    for w in edges.windows(2) {
        let (value, error) = gk21(f, w[0], w[1]);
        evaluations += 21;
        heap.push(Panel {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }

    let mut subdivisions = 0usize;
    loop {
        let (value, error) = totals(&heap);
        let target = spec.abs_tol.max(spec.rel_tol * value.norm());
        if error <= target {
            return Ok(QuadResult {
                value,
                error_estimate: error,
                evaluations,
            });
        }
        if subdivisions >= spec.max_subdivisions {
            return Err(QuadError::ToleranceNotMet {
                value,
                error_estimate: error,
                subdivisions,
            });
        }
        let worst = heap.pop().expect("at least one panel");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // panel cannot be split further in floating point
            heap.push(worst);
            let (value, error) = totals(&heap);
            return Err(QuadError::ToleranceNotMet {
                value,
                error_estimate: error,
                subdivisions,
            });
        }
        for (lo, hi) in [(worst.a, mid), (mid, worst.b)] {
            let (value, error) = gk21(f, lo, hi);
            evaluations += 21;
            heap.push(Panel {
                a: lo,
                b: hi,
                value,
                error,
            });
        }
        subdivisions += 1;
    }
}

fn totals(heap: &BinaryHeap<Panel>) -> (Complex64, f64) {
    // summed in position order so the result does not depend on heap layout
    let mut panels: Vec<&Panel> = heap.iter().collect();
    panels.sort_by(|x, y| x.a.partial_cmp(&y.a).unwrap_or(Ordering::Equal));
    panels.iter().fold((Complex64::new(0.0, 0.0), 0.0), |(v, e), p| {
        (v + p.value, e + p.error)
    })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "Gauss-Legendre order must be positive");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let dp = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// A fixed quadrature rule: nodes with their weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeSet {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn integrate<F: Fn(f64) -> Complex64>(&self, f: F) -> Complex64 {
        self.iter().map(|(x, w)| f(x) * w).sum()
    }

    fn extend_panel(&mut self, lo: f64, hi: f64, reference: &(Vec<f64>, Vec<f64>)) {
        let center = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        for (t, w) in reference.0.iter().zip(&reference.1) {
            self.nodes.push(center + half * t);
            self.weights.push(half * w);
        }
    }
}

/// Composite Gauss-Legendre rule on `[a, b]`: the interval is cut at every
/// breakpoint, and each piece is split into equal panels no wider than
/// `max_width`, each carrying `order` nodes.
pub fn composite_gauss(a: f64, b: f64, breakpoints: &[f64], max_width: f64, order: usize) -> NodeSet {
    let mut set = NodeSet::default();
    if b <= a {
        return set;
    }
    let reference = gauss_legendre(order);
    let mut edges: Vec<f64> = breakpoints.iter().copied().filter(|&p| p > a && p < b).collect();
    edges.push(a);
    edges.push(b);
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    edges.dedup();
    for w in edges.windows(2) {
        let len = w[1] - w[0];
        let panels = ((len / max_width).ceil() as usize).max(1);
        let step = len / panels as f64;
        for p in 0..panels {
            let lo = w[0] + step * p as f64;
            let hi = if p + 1 == panels { w[1] } else { lo + step };
            set.extend_panel(lo, hi, &reference);
        }
    }
    set
}

/// Composite Gauss-Legendre rule with exactly `panels` equal panels on `[a, b]`.
pub fn uniform_panels(a: f64, b: f64, panels: usize, order: usize) -> NodeSet {
    let width = (b - a) / panels.max(1) as f64;
    composite_gauss(a, b, &[], width * (1.0 + 1e-12), order)
}

/// A cut point of a spectral interval. Singular cuts are square-root type
/// (thresholds): panels next to them use a substitution that removes the
/// `sqrt(lambda - a)` behaviour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cut {
    pub at: f64,
    pub singular: bool,
}

/// Parameters for [`threshold_rule`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelPolicy {
    pub order: usize,
    /// Largest phase change (radians) allowed across one panel.
    pub phase_per_panel: f64,
    pub min_panels: usize,
}

impl Default for PanelPolicy {
    fn default() -> Self {
        Self {
            order: 16,
            phase_per_panel: 6.0,
            min_panels: 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum SegmentMap {
    Linear,
    /// `lambda = alpha + t^2`
    SqrtLower,
    /// `lambda = beta - t^2`
    SqrtUpper,
    /// `lambda = alpha + (beta - alpha)(1 - cos theta)/2`
    Cosine,
}

impl SegmentMap {
    fn extent(self, alpha: f64, beta: f64) -> f64 {
        match self {
            SegmentMap::Linear => beta - alpha,
            SegmentMap::SqrtLower | SegmentMap::SqrtUpper => (beta - alpha).sqrt(),
            SegmentMap::Cosine => std::f64::consts::PI,
        }
    }

    /// `(lambda(u), d lambda / du)`
    fn apply(self, alpha: f64, beta: f64, u: f64) -> (f64, f64) {
        match self {
            SegmentMap::Linear => (alpha + u, 1.0),
            SegmentMap::SqrtLower => (alpha + u * u, 2.0 * u),
            SegmentMap::SqrtUpper => (beta - u * u, 2.0 * u),
            SegmentMap::Cosine => {
                let half = 0.5 * (beta - alpha);
                (alpha + half * (1.0 - u.cos()), half * u.sin())
            }
        }
    }
}

/// Composite Gauss-Legendre rule on `[lo, hi]` for spectral integrals.
///
/// The interval is cut at every interior cut point. Each piece is mapped so
/// that square-root endpoint behaviour at singular cuts becomes smooth, and
/// is split into equal panels in the mapped variable so that the supplied
/// monotone phase estimate `phase(lambda)` changes by at most
/// `policy.phase_per_panel` per panel. Nodes come out ascending and never
/// touch a cut.
pub fn threshold_rule(lo: f64, hi: f64, cuts: &[Cut], phase: &dyn Fn(f64) -> f64, policy: PanelPolicy) -> NodeSet {
    let mut set = NodeSet::default();
    if !(hi > lo) {
        return set;
    }
    let singular = |p: f64| cuts.iter().any(|c| c.singular && c.at == p);
    let mut edges: Vec<f64> = cuts.iter().map(|c| c.at).filter(|&p| p > lo && p < hi).collect();
    edges.push(lo);
    edges.push(hi);
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    edges.dedup();
    let (ref_nodes, ref_weights) = gauss_legendre(policy.order);
    const PROBES: usize = 256;
    for e in edges.windows(2) {
        let (alpha, beta) = (e[0], e[1]);
        let map = match (singular(alpha), singular(beta)) {
            (true, true) => SegmentMap::Cosine,
            (true, false) => SegmentMap::SqrtLower,
            (false, true) => SegmentMap::SqrtUpper,
            (false, false) => SegmentMap::Linear,
        };
        let extent = map.extent(alpha, beta);
        let mut steepest: f64 = 0.0;
        let mut prev = phase(map.apply(alpha, beta, 0.0).0);
        for i in 1..=PROBES {
            let u = extent * i as f64 / PROBES as f64;
            let cur = phase(map.apply(alpha, beta, u).0);
            steepest = steepest.max((cur - prev).abs());
            prev = cur;
        }
        let total = steepest * PROBES as f64;
        let panels = ((total / policy.phase_per_panel).ceil() as usize).max(policy.min_panels);
        let width = extent / panels as f64;
        let mut seg: Vec<(f64, f64)> = Vec::with_capacity(panels * policy.order);
        for p in 0..panels {
            let center = width * (p as f64 + 0.5);
            for (t, w) in ref_nodes.iter().zip(&ref_weights) {
                let u = center + 0.5 * width * t;
                let (lambda, jac) = map.apply(alpha, beta, u);
                if lambda > alpha && lambda < beta {
                    seg.push((lambda, w * 0.5 * width * jac));
                }
            }
        }
        seg.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(Ordering::Equal));
        for (l, w) in seg {
            set.nodes.push(l);
            set.weights.push(w);
        }
    }
    set
}
