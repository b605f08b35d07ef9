//! The generalized Fourier transform `V`, its left inverse `Z` and the
//! weighted space `L^2_sigma`.
//!
//! All spectral integrals run over a [`SpectralGrid`]: a composite Gauss rule
//! on `[lo, hi]` cut at every threshold, with square-root substitutions next
//! to thresholds. Component `k` of a [`SpectralFunction`] lives on the nodes
//! above `a_k` only.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{xi, Sign, SpectralPoint};
use crate::measure::sigma;
use crate::network::{GridSpec, NetworkFunction, StarNetwork, Support};
use crate::numerics::{threshold_rule, Cut, PanelPolicy};

type C = Complex64;
const ZERO: C = C { re: 0.0, im: 0.0 };
const I: C = C { re: 0.0, im: 1.0 };

/// How the upper end of the spectral window is picked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMax {
    /// Double the window until the last piece adds less than
    /// `tail_tol` (relative) to `|Vf|_sigma^2`.
    Auto { tail_tol: f64 },
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOptions {
    pub lambda_max: LambdaMax,
    /// Hard cap for the automatic window.
    pub lambda_cap: f64,
    pub policy: PanelPolicy,
    /// Largest x-panel for the integrals defining `V`.
    pub x_panel: f64,
    pub x_order: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            lambda_max: LambdaMax::Auto { tail_tol: 1e-10 },
            lambda_cap: 2e4,
            policy: PanelPolicy::default(),
            x_panel: 0.25,
            x_order: 16,
        }
    }
}

/// What a grid has to resolve: oscillations of `e^{i xi x}` for `x` up to
/// `x_extent` and of `e^{i sqrt(lambda) t}` for `|t|` up to `time_extent`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRequest {
    pub lo: f64,
    pub hi: f64,
    pub x_extent: f64,
    pub time_extent: f64,
    /// Extra non-smooth points of the integrand (for example jumps of a
    /// spectral multiplier).
    pub breakpoints: Vec<f64>,
}

/// Quadrature nodes in `lambda` with the spectral data needed at each node.
#[derive(Debug, Clone)]
pub struct SpectralGrid {
    net: StarNetwork,
    lo: f64,
    hi: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    start: Vec<usize>,
    points: Vec<SpectralPoint>,
    sigma: Vec<Vec<f64>>,
}

impl SpectralGrid {
    pub fn new(net: &StarNetwork, req: &GridRequest, policy: PanelPolicy) -> Result<Self> {
        let lo = req.lo.max(net.a()[0]);
        let hi = req.hi;
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::BadGrid(format!("spectral window ({lo}, {hi}) is not finite")));
        }
        let mut cuts: Vec<Cut> = net.thresholds().into_iter().map(|a| Cut { at: a, singular: true }).collect();
        cuts.extend(req.breakpoints.iter().map(|&b| Cut { at: b, singular: false }));
        let (x_ext, t_ext) = (req.x_extent.max(1.0), req.time_extent.abs());
        let net2 = net.clone();
        let phase = move |l: f64| {
            let lc = C::new(l, 0.0);
            let sx: f64 = (0..net2.n()).map(|k| xi(lc, k, &net2).norm()).sum();
            x_ext * sx + t_ext * l.max(0.0).sqrt()
        };
        let rule = threshold_rule(lo, hi, &cuts, &phase, policy);
        let (nodes, weights) = (rule.nodes, rule.weights);
        let start = net
            .a()
            .iter()
            .map(|&a| nodes.partition_point(|&l| l <= a))
            .collect();
        let points: Vec<SpectralPoint> = nodes
            .par_iter()
            .map(|&l| SpectralPoint::new(C::new(l, 0.0), Sign::Minus, net))
            .collect();
        let sigma = points.par_iter().map(|sp| sigma(sp, net)).collect();
        Ok(Self {
            net: net.clone(),
            lo,
            hi,
            nodes,
            weights,
            start,
            points,
            sigma,
        })
    }

    pub fn net(&self) -> &StarNetwork {
        &self.net
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// First node index belonging to component `k` (nodes above `a_k`).
    pub fn start(&self, k: usize) -> usize {
        self.start[k]
    }

    pub fn point(&self, i: usize) -> &SpectralPoint {
        &self.points[i]
    }

    /// `sigma_k(lambda_i)`.
    pub fn sigma(&self, i: usize, k: usize) -> f64 {
        self.sigma[i][k]
    }

    fn active(&self, i: usize, k: usize) -> bool {
        i >= self.start[k]
    }

    /// Largest `|xi_k|` over the window.
    pub fn max_xi(&self) -> f64 {
        let top = C::new(self.hi, 0.0);
        (0..self.net.n()).map(|k| xi(top, k, &self.net).norm()).fold(0.0, f64::max)
    }
}

/// An element of `L^2_sigma` sampled on a [`SpectralGrid`].
#[derive(Debug, Clone)]
pub struct SpectralFunction {
    grid: Arc<SpectralGrid>,
    comps: Vec<Vec<C>>,
}

impl SpectralFunction {
    pub fn zeros(grid: Arc<SpectralGrid>) -> Self {
        let comps = (0..grid.net.n()).map(|k| vec![ZERO; grid.len() - grid.start(k)]).collect();
        Self { grid, comps }
    }

    /// Component `k` at node `lambda` is `f(k, lambda)`.
    pub fn from_fn(grid: Arc<SpectralGrid>, f: impl Fn(usize, f64) -> C) -> Self {
        let comps = (0..grid.net.n())
            .map(|k| grid.nodes[grid.start(k)..].iter().map(|&l| f(k, l)).collect())
            .collect();
        Self { grid, comps }
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.comps.len()
    }

    pub fn component(&self, k: usize) -> &[C] {
        &self.comps[k]
    }

    /// Nodes of component `k`.
    pub fn component_nodes(&self, k: usize) -> &[f64] {
        &self.grid.nodes[self.grid.start(k)..]
    }

    pub fn lambda_max(&self) -> f64 {
        self.grid.hi
    }

    /// Value of component `k` at global node `i` (zero below `a_k`).
    pub fn at(&self, k: usize, i: usize) -> C {
        let s = self.grid.start(k);
        if i < s {
            ZERO
        } else {
            self.comps[k][i - s]
        }
    }

    pub fn map(&self, f: impl Fn(usize, f64, C) -> C) -> Self {
        let comps = self
            .comps
            .iter()
            .enumerate()
            .map(|(k, v)| v.iter().zip(self.component_nodes(k)).map(|(&g, &l)| f(k, l, g)).collect())
            .collect();
        Self {
            grid: self.grid.clone(),
            comps,
        }
    }

    /// Multiplication operator `M_psi`.
    pub fn multiply(&self, psi: impl Fn(f64) -> C) -> Self {
        self.map(|_, l, g| psi(l) * g)
    }

    /// `self + alpha * other` on the same grid.
    pub fn add_scaled(&self, alpha: C, other: &SpectralFunction) -> Self {
        assert!(Arc::ptr_eq(&self.grid, &other.grid), "spectral functions live on different grids");
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + alpha * y).collect())
            .collect();
        Self {
            grid: self.grid.clone(),
            comps,
        }
    }

    /// `(F, G)_sigma = sum_k int sigma_k F_k conj(G_k)`.
    pub fn inner_sigma(&self, other: &SpectralFunction) -> C {
        assert!(Arc::ptr_eq(&self.grid, &other.grid), "spectral functions live on different grids");
        self.inner_sigma_up_to(other, f64::INFINITY)
    }

    fn inner_sigma_up_to(&self, other: &SpectralFunction, cap: f64) -> C {
        let g = &self.grid;
        let mut total = ZERO;
        for k in 0..self.n() {
            let s = g.start(k);
            for (m, (a, b)) in self.comps[k].iter().zip(&other.comps[k]).enumerate() {
                let i = s + m;
                if g.nodes[i] > cap {
                    break;
                }
                total += g.weights[i] * g.sigma[i][k] * a * b.conj();
            }
        }
        total
    }

    /// `|F|_sigma` restricted to `lambda <= cap`.
    pub fn norm_sigma_up_to(&self, cap: f64) -> f64 {
        self.inner_sigma_up_to(self, cap).re.max(0.0).sqrt()
    }

    /// Largest per-node difference, for linearity checks.
    pub fn max_abs_diff(&self, other: &SpectralFunction) -> f64 {
        self.comps
            .iter()
            .zip(&other.comps)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()))
            .fold(0.0, f64::max)
    }
}

/// `|F|_sigma`.
pub fn norm_sigma(f: &SpectralFunction) -> f64 {
    f.norm_sigma_up_to(f64::INFINITY)
}

/// Per-branch x-nodes with `weight * f(x)` folded in.
struct XSamples {
    x: Vec<Vec<f64>>,
    wf: Vec<Vec<C>>,
}

impl XSamples {
    fn new(f: &NetworkFunction, r: f64, max_xi: f64, opts: &SpectralOptions) -> Self {
        let width = opts.x_panel.min(opts.policy.phase_per_panel / max_xi.max(1e-300));
        let mut x = Vec::with_capacity(f.n());
        let mut wf = Vec::with_capacity(f.n());
        for b in 0..f.n() {
            let rule = f.x_rule(b, r, width, opts.x_order);
            let mut xs = Vec::with_capacity(rule.len());
            let mut ws = Vec::with_capacity(rule.len());
            for (t, w) in rule.iter() {
                let v = f.eval(b, t);
                if v != ZERO {
                    xs.push(t);
                    ws.push(v * w);
                }
            }
            x.push(xs);
            wf.push(ws);
        }
        Self { x, wf }
    }
}

fn compact_radius(f: &NetworkFunction) -> Result<f64> {
    match f.support() {
        Support::Compact(r) => Ok(r),
        _ => Err(Error::NonCompactSupport),
    }
}

/// `(Vf)_k(lambda) = int_N f conj(F^{-,k}_lambda)` at every node of `grid`.
pub fn transform_v(f: &NetworkFunction, grid: &Arc<SpectralGrid>, opts: &SpectralOptions) -> Result<SpectralFunction> {
    let net = grid.net();
    let n = net.n();
    if f.n() != n {
        return Err(Error::LengthMismatch { expected: n, got: f.n() });
    }
    let r = compact_radius(f)?;
    let xs = XSamples::new(f, r, grid.max_xi(), opts);
    let per_node: Vec<Vec<C>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let sp = grid.point(i);
            // per branch: C = int f cos, S = int f sin (propagating), E = int f conj(e^{-i xi x})
            let mut e = vec![ZERO; n];
            let mut cs = vec![(ZERO, ZERO); n];
            for b in 0..n {
                let z = sp.xi(b);
                if grid.active(i, b) {
                    let (mut cc, mut ss) = (ZERO, ZERO);
                    for (&x, &v) in xs.x[b].iter().zip(&xs.wf[b]) {
                        let (s, c) = (z.re * x).sin_cos();
                        cc += v * c;
                        ss += v * s;
                    }
                    cs[b] = (cc, ss);
                    e[b] = cc + I * ss;
                } else {
                    // xi = -i xi', conj(e^{-i xi x}) = e^{-xi' x}
                    let decay = -z.im;
                    e[b] = xs.x[b].iter().zip(&xs.wf[b]).map(|(&x, &v)| v * (-decay * x).exp()).sum();
                }
            }
            let total: C = e.iter().sum();
            (0..n)
                .filter(|&k| grid.active(i, k))
                .map(|k| {
                    let s = sp.s(k).unwrap_or(ZERO);
                    total - e[k] + cs[k].0 + I * s.conj() * cs[k].1
                })
                .collect()
        })
        .collect();
    let mut out = SpectralFunction::zeros(grid.clone());
    for (i, vals) in per_node.into_iter().enumerate() {
        let mut it = vals.into_iter();
        for k in 0..n {
            if grid.active(i, k) {
                out.comps[k][i - grid.start(k)] = it.next().unwrap_or(ZERO);
            }
        }
    }
    Ok(out)
}

/// A superposition of branch-wise plane waves
/// `sum_i P_{b,i} e^{-i xi_b(lambda_i) x} + Q_{b,i} conj(e^{-i xi_b(lambda_i) x})`.
///
/// `Z` and both projection formulas produce functions of this shape.
#[derive(Debug, Clone)]
pub struct ModeField {
    grid: Arc<SpectralGrid>,
    /// `(node, P, Q)` per branch, zero pairs dropped.
    modes: Vec<Vec<(usize, C, C)>>,
}

const RESYNC: usize = 64;
const NODE_CHUNK: usize = 64;

impl ModeField {
    pub fn from_coefficients(grid: Arc<SpectralGrid>, plane: Vec<Vec<C>>, plane_conj: Vec<Vec<C>>) -> Self {
        let modes = plane
            .iter()
            .zip(&plane_conj)
            .map(|(p, q)| {
                p.iter()
                    .zip(q)
                    .enumerate()
                    .filter(|(_, (p, q))| **p != ZERO || **q != ZERO)
                    .map(|(i, (&p, &q))| (i, p, q))
                    .collect()
            })
            .collect();
        Self { grid, modes }
    }

    /// The field of `Z(G) = sum_k int sigma_k G_k F^{-,k}`.
    pub fn from_spectral(g: &SpectralFunction) -> Self {
        let grid = g.grid().clone();
        let n = grid.net().n();
        let len = grid.len();
        let mut plane = vec![vec![ZERO; len]; n];
        let mut conj = vec![vec![ZERO; len]; n];
        for i in 0..len {
            let sp = grid.point(i);
            let w = grid.weights[i];
            let terms: Vec<C> = (0..n).map(|k| w * grid.sigma(i, k) * g.at(k, i)).collect();
            let total: C = terms.iter().sum();
            for b in 0..n {
                plane[b][i] = total - terms[b];
                if grid.active(i, b) && terms[b] != ZERO {
                    // cos - i s sin = E (1 + s)/2 + conj(E) (1 - s)/2 for real xi
                    let s = sp.s(b).unwrap_or(ZERO);
                    plane[b][i] += terms[b] * (1.0 + s) * 0.5;
                    conj[b][i] += terms[b] * (1.0 - s) * 0.5;
                }
            }
        }
        Self::from_coefficients(grid, plane, conj)
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    /// Value and first two derivatives on `branch` at `x`.
    pub fn eval_derivs(&self, branch: usize, x: f64) -> [C; 3] {
        let mut out = [ZERO; 3];
        for &(i, p, q) in &self.modes[branch] {
            let z = self.grid.point(i).xi(branch);
            let k = -I * z;
            let e = (k * x).exp();
            let (kc, ec) = (k.conj(), e.conj());
            out[0] += p * e + q * ec;
            out[1] += p * k * e + q * kc * ec;
            out[2] += p * k * k * e + q * kc * kc * ec;
        }
        out
    }

    pub fn eval(&self, branch: usize, x: f64) -> C {
        let mut v = ZERO;
        for &(i, p, q) in &self.modes[branch] {
            let e = (-I * self.grid.point(i).xi(branch) * x).exp();
            v += p * e + q * e.conj();
        }
        v
    }

    /// Derivative of order `deriv` at `x0 + j h` for `j < m`, by a
    /// resynchronised exponential recurrence. Chunks of nodes are reduced in
    /// order, so the result does not depend on the thread count.
    pub fn uniform_values(&self, branch: usize, x0: f64, h: f64, m: usize, deriv: u32) -> Vec<C> {
        let partial: Vec<Vec<C>> = self.modes[branch]
            .par_chunks(NODE_CHUNK)
            .map(|chunk| {
                let mut acc = vec![ZERO; m];
                for &(i, p, q) in chunk {
                    let k = -I * self.grid.point(i).xi(branch);
                    let (p, q) = (p * k.powu(deriv), q * k.conj().powu(deriv));
                    let step = (k * h).exp();
                    let mut e = C::new(1.0, 0.0);
                    for (j, a) in acc.iter_mut().enumerate() {
                        if j % RESYNC == 0 {
                            e = (k * (x0 + j as f64 * h)).exp();
                        }
                        *a += p * e + q * e.conj();
                        e *= step;
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![ZERO; m];
        for part in partial {
            for (t, v) in total.iter_mut().zip(part) {
                *t += v;
            }
        }
        total
    }

    /// Gauss-Legendre nodes on `[0, radius]` per branch, panels narrow
    /// enough for the fastest mode, with the field's derivatives `0..=deriv`
    /// at each node: `(x, weight, values)`.
    pub fn window_samples(&self, radius: f64, deriv: u32) -> Vec<Vec<(f64, f64, Vec<C>)>> {
        const ORDER: usize = 16;
        let width = (PanelPolicy::default().phase_per_panel / self.grid.max_xi().max(1e-300)).min(0.5);
        let panels = ((radius / width).ceil() as usize).max(1);
        let h = radius / panels as f64;
        let (t, w) = crate::numerics::gauss_legendre(ORDER);
        (0..self.modes.len())
            .map(|b| {
                let mut out: Vec<(f64, f64, Vec<C>)> = Vec::with_capacity(panels * ORDER);
                let cols: Vec<Vec<Vec<C>>> = t
                    .iter()
                    .map(|&tq| {
                        let x0 = 0.5 * h * (1.0 + tq);
                        (0..=deriv).map(|d| self.uniform_values(b, x0, h, panels, d)).collect()
                    })
                    .collect();
                for p in 0..panels {
                    for (q, (&tq, &wq)) in t.iter().zip(&w).enumerate() {
                        let x = h * (p as f64 + 0.5 * (1.0 + tq));
                        out.push((x, 0.5 * h * wq, cols[q].iter().map(|c| c[p]).collect()));
                    }
                }
                out
            })
            .collect()
    }

    /// `||field||_H^2` over `[0, radius]` on every branch.
    pub fn norm_sq(&self, radius: f64) -> f64 {
        self.window_samples(radius, 0)
            .iter()
            .flatten()
            .map(|(_, w, v)| w * v[0].norm_sqr())
            .sum()
    }

    /// Evaluate on a uniform grid.
    pub fn sample(&self, output: &GridSpec) -> Result<NetworkFunction> {
        let n = self.grid.net().n();
        if output.n() != n {
            return Err(Error::LengthMismatch { expected: n, got: output.n() });
        }
        let samples = (0..n)
            .map(|b| self.uniform_values(b, 0.0, output.steps[b], output.count(b), 0))
            .collect();
        NetworkFunction::grid(output.steps.clone(), samples)
    }

    /// The field as an analytic function with derivative rules, cut off
    /// beyond `radius`.
    pub fn into_function(self, radius: f64) -> NetworkFunction {
        let n = self.grid.net().n();
        let me = Arc::new(self);
        let (f0, f1, f2) = (me.clone(), me.clone(), me);
        NetworkFunction::analytic(n, Support::Compact(radius), move |b, x| f0.eval(b, x))
            .with_d1(move |b, x| f1.eval_derivs(b, x)[1])
            .with_d2(move |b, x| f2.eval_derivs(b, x)[2])
    }
}

/// `Z(G)` sampled on `output`.
pub fn transform_z(g: &SpectralFunction, output: &GridSpec) -> Result<NetworkFunction> {
    ModeField::from_spectral(g).sample(output)
}

fn widest(output: &GridSpec) -> f64 {
    (0..output.n())
        .map(|k| output.x(k, output.count(k) - 1))
        .fold(0.0, f64::max)
}

/// Pick the upper end of the spectral window for the given inputs.
///
/// The window `[a_1, a_n + 16]` is doubled until the newest piece adds
/// less than `tail_tol` (relative) to `sum |Vf|_sigma^2`.
pub fn choose_lambda_max(fs: &[&NetworkFunction], net: &StarNetwork, opts: &SpectralOptions) -> Result<f64> {
    let tail_tol = match opts.lambda_max {
        LambdaMax::Fixed(v) => return Ok(v),
        LambdaMax::Auto { tail_tol } => tail_tol,
    };
    let a1 = net.a()[0];
    let mut r: f64 = 0.0;
    for f in fs {
        r = r.max(compact_radius(f)?);
    }
    let piece_norm = |lo: f64, hi: f64| -> Result<f64> {
        let req = GridRequest {
            lo,
            hi,
            x_extent: r,
            time_extent: 0.0,
            breakpoints: Vec::new(),
        };
        let grid = Arc::new(SpectralGrid::new(net, &req, opts.policy)?);
        let mut s = 0.0;
        for f in fs {
            s += norm_sigma(&transform_v(f, &grid, opts)?).powi(2);
        }
        Ok(s)
    };
    let mut hi = net.a()[net.n() - 1] + 16.0;
    let mut total = piece_norm(a1, hi)?;
    while hi < opts.lambda_cap {
        let next = (a1 + 2.0 * (hi - a1)).min(opts.lambda_cap);
        let piece = piece_norm(hi, next)?;
        total += piece;
        hi = next;
        if piece <= tail_tol * total {
            break;
        }
    }
    Ok(hi)
}

/// Spectral grid adequate for transforming `fs` and evaluating the result
/// out to `x_out` after evolving for `time_extent`.
pub fn grid_for(
    fs: &[&NetworkFunction],
    net: &StarNetwork,
    x_out: f64,
    time_extent: f64,
    breakpoints: &[f64],
    opts: &SpectralOptions,
) -> Result<Arc<SpectralGrid>> {
    let hi = choose_lambda_max(fs, net, opts)?;
    let mut r: f64 = 0.0;
    for f in fs {
        r = r.max(compact_radius(f)?);
    }
    let req = GridRequest {
        lo: net.a()[0],
        hi,
        x_extent: r + x_out + time_extent.abs() * net.max_speed(),
        time_extent,
        breakpoints: breakpoints.to_vec(),
    };
    Ok(Arc::new(SpectralGrid::new(net, &req, opts.policy)?))
}

/// `psi(A) f = Z(M_psi V f)` sampled on `output`. `psi_breaks` lists the
/// points where `psi` is not smooth.
pub fn apply_function_of_a(
    psi: &dyn Fn(f64) -> f64,
    psi_breaks: &[f64],
    f: &NetworkFunction,
    net: &StarNetwork,
    output: &GridSpec,
    opts: &SpectralOptions,
) -> Result<NetworkFunction> {
    let grid = grid_for(&[f], net, widest(output), 0.0, psi_breaks, opts)?;
    let vf = transform_v(f, &grid, opts)?;
    transform_z(&vf.multiply(|l| C::new(psi(l), 0.0)), output)
}

/// Outcome of [`sobolev_membership`].
#[derive(Debug, Clone, PartialEq)]
pub struct SobolevReport {
    pub j: u32,
    /// `|M_{p_j} V f|_sigma`, including the extrapolated tail when finite.
    pub norm_j: f64,
    /// Extrapolated contribution beyond that window (infinite if the
    /// increments do not shrink).
    pub tail_estimate: f64,
    pub finite: bool,
    /// `(Lambda, norm_j up to Lambda)` for every window examined.
    pub history: Vec<(f64, f64)>,
}

/// Decide whether `f` lies in `D(A^j)` by watching
/// `|lambda^j V f|_sigma` over the windows `[a_1, a_n + 16 * 2^m]`.
pub fn sobolev_membership(f: &NetworkFunction, j: u32, net: &StarNetwork, opts: &SpectralOptions) -> Result<SobolevReport> {
    const WINDOWS: usize = 10;
    let r = compact_radius(f)?;
    let base = net.a()[net.n() - 1] + 16.0;
    let top = base * 2f64.powi(WINDOWS as i32 - 1);
    let mut cuts: Vec<f64> = (0..WINDOWS - 1).map(|m| base * 2f64.powi(m as i32)).collect();
    cuts.retain(|&c| c > net.a()[0]);
    let req = GridRequest {
        lo: net.a()[0],
        hi: top,
        x_extent: r,
        time_extent: 0.0,
        breakpoints: cuts,
    };
    let grid = Arc::new(SpectralGrid::new(net, &req, opts.policy)?);
    let g = transform_v(f, &grid, opts)?.multiply(|l| C::new(l.powi(j as i32), 0.0));
    let history: Vec<(f64, f64)> = (0..WINDOWS)
        .map(|m| {
            let cap = base * 2f64.powi(m as i32);
            (cap, g.norm_sigma_up_to(cap))
        })
        .collect();
    let sq: Vec<f64> = history.iter().map(|h| h.1 * h.1).collect();
    let norm_sq = sq[WINDOWS - 1];
    let d_last = sq[WINDOWS - 1] - sq[WINDOWS - 2];
    let d_prev = sq[WINDOWS - 2] - sq[WINDOWS - 3];
    let negligible = d_last <= 1e-12 * norm_sq.max(1e-300) || norm_sq == 0.0;
    let ratio = if d_prev > 0.0 { d_last / d_prev } else { 0.0 };
    // increments of a convergent tail shrink geometrically under doubling
    let (finite, tail) = if negligible {
        (true, d_last.max(0.0))
    } else if ratio < 0.85 {
        (true, d_last * ratio / (1.0 - ratio))
    } else {
        (false, f64::INFINITY)
    };
    Ok(SobolevReport {
        j,
        norm_j: if finite { (norm_sq + tail).sqrt() } else { norm_sq.sqrt() },
        tail_estimate: tail,
        finite,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{gaussian_on_branch, indicator, inner_product_h, norm_h, vertex_gaussian};

    fn net3() -> StarNetwork {
        StarNetwork::new(vec![1.0, 2.0, 0.5], vec![0.0, 1.5, 4.0]).unwrap()
    }

    fn grid(net: &StarNetwork, hi: f64, x_extent: f64) -> Arc<SpectralGrid> {
        let req = GridRequest {
            lo: net.a()[0],
            hi,
            x_extent,
            time_extent: 0.0,
            breakpoints: vec![],
        };
        Arc::new(SpectralGrid::new(net, &req, PanelPolicy::default()).unwrap())
    }

    #[test]
    fn grid_respects_components() {
        let net = net3();
        let g = grid(&net, 30.0, 3.0);
        for k in 0..3 {
            let s = g.start(k);
            assert!(g.nodes()[s..].iter().all(|&l| l > net.a()[k]));
            assert!(s == 0 || g.nodes()[s - 1] < net.a()[k]);
        }
        assert!(g.nodes().iter().all(|l| !net.a().contains(l)));
    }

    #[test]
    fn indicator_transform_matches_closed_form() {
        let net = net3();
        let g = grid(&net, 40.0, 1.0);
        let f = indicator(3, 1, 0.0, 1.0);
        let vf = transform_v(&f, &g, &SpectralOptions::default()).unwrap();
        for k in [0usize, 2] {
            for (&l, &v) in vf.component_nodes(k).iter().zip(vf.component(k)).step_by(37) {
                if l <= net.a()[1] {
                    continue;
                }
                let z = g.point(0).xi(1) * 0.0 + xi(C::new(l, 0.0), 1, &net);
                let exact = ((I * z).exp() - 1.0) / (I * z);
                assert!((v - exact).norm() < 1e-12, "k={k} l={l} {v} {exact}");
            }
        }
    }

    #[test]
    fn zero_and_linearity() {
        let net = net3();
        let g = grid(&net, 30.0, 4.0);
        let opts = SpectralOptions::default();
        let z = transform_v(&NetworkFunction::zero(3).set_support(Support::Compact(1.0)), &g, &opts).unwrap();
        assert_eq!(norm_sigma(&z), 0.0);
        let f = gaussian_on_branch(3, 0, 1.5, 0.4, C::new(1.0, 0.0));
        let h = vertex_gaussian(3, 0.5, C::new(0.0, 2.0));
        let alpha = C::new(0.3, -1.2);
        let lhs = transform_v(&f.combine(alpha, &h, C::new(1.0, 0.0)), &g, &opts).unwrap();
        let rhs = transform_v(&f, &g, &opts).unwrap().multiply(|_| alpha).add_scaled(C::new(1.0, 0.0), &transform_v(&h, &g, &opts).unwrap());
        assert!(lhs.max_abs_diff(&rhs) < 1e-13);
        assert!(matches!(
            transform_v(&f.clone().set_support(Support::Unbounded), &g, &opts),
            Err(Error::NonCompactSupport)
        ));
    }

    #[test]
    fn plancherel_for_vertex_gaussian() {
        let net = net3();
        let f = vertex_gaussian(3, 0.6, C::new(1.0, 0.0));
        let opts = SpectralOptions::default();
        let g = grid_for(&[&f], &net, 0.0, 0.0, &[], &opts).unwrap();
        let vf = transform_v(&f, &g, &opts).unwrap();
        let lhs = norm_h(&f, &net).unwrap().powi(2);
        let rhs = norm_sigma(&vf).powi(2);
        assert!((lhs - rhs).abs() / lhs < 1e-6, "{lhs} {rhs}");
    }

    #[test]
    fn adjoint_identity() {
        let net = net3();
        let f = gaussian_on_branch(3, 2, 1.0, 0.3, C::new(1.0, 0.5));
        let opts = SpectralOptions::default();
        let g = grid(&net, 60.0, 4.0);
        let vf = transform_v(&f, &g, &opts).unwrap();
        let gg = SpectralFunction::from_fn(g.clone(), |k, l| C::new((-(l - 5.0).powi(2) / 20.0).exp(), 0.1 * k as f64));
        let lhs = gg.inner_sigma(&vf);
        let zg = ModeField::from_spectral(&gg).into_function(4.0);
        let rhs = inner_product_h(&zg, &f, &net).unwrap();
        assert!((lhs - rhs).norm() < 1e-8 * lhs.norm().max(1.0), "{lhs} {rhs}");
    }

    #[test]
    fn round_trip_reconstructs() {
        let net = net3();
        let f = gaussian_on_branch(3, 1, 2.0, 0.5, C::new(1.0, 0.0));
        let opts = SpectralOptions::default();
        let out = GridSpec::uniform(3, 5.0, 0.05);
        let back = apply_function_of_a(&|_| 1.0, &[], &f, &net, &out, &opts).unwrap();
        let mut err: f64 = 0.0;
        for k in 0..3 {
            for x in out.points(k) {
                err = err.max((back.eval(k, x) - f.eval(k, x)).norm());
            }
        }
        assert!(err < 1e-3, "{err}");
        let sampled = ModeField::from_spectral(&transform_v(&f, &grid_for(&[&f], &net, 5.0, 0.0, &[], &opts).unwrap(), &opts).unwrap());
        let direct = sampled.eval(1, 2.0);
        assert!((direct - back.eval(1, 2.0)).norm() < 1e-9);
    }

    #[test]
    fn sobolev_detects_vertex_jump() {
        let net = net3();
        let opts = SpectralOptions::default();
        let smooth = vertex_gaussian(3, 0.5, C::new(1.0, 0.0));
        let rep = sobolev_membership(&smooth, 1, &net, &opts).unwrap();
        assert!(rep.finite, "{rep:?}");
        let af = norm_h(&crate::network::apply_a(&smooth, &net).unwrap(), &net).unwrap();
        assert!((rep.norm_j - af).abs() / af < 1e-3, "{} {af}", rep.norm_j);
        let jump = gaussian_on_branch(3, 0, 0.0, 0.5, C::new(1.0, 0.0));
        let rep = sobolev_membership(&jump, 1, &net, &opts).unwrap();
        assert!(!rep.finite, "{rep:?}");
        let zero = sobolev_membership(&NetworkFunction::zero(3).set_support(Support::Compact(1.0)), 1, &net, &opts).unwrap();
        assert!(zero.finite && zero.norm_j == 0.0);
    }
}
