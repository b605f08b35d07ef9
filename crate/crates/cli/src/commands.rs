use std::sync::Arc;

use anyhow::Result;
use num_complex::Complex64;
use star_kg_core::evolution::{energy, tunnel_decay_profile, Evolver};
use star_kg_core::fd_oracle::{assemble, oracle_evolve, oracle_resolvent};
use star_kg_core::kernel::{wronskian_w, BandIndex, Sign, SpectralPoint};
use star_kg_core::measure::{
    im_kernel_case, im_kernel_direct, projection_e, sigma, verify_weight_systems, weights_diagonal, weights_matrix, ProjectionFormula,
    WeightMatrix,
};
use star_kg_core::network::{
    apply_a, check_transmission, gaussian_on_branch, norm_h, vertex_gaussian, GridSpec, NetworkPoint, StarNetwork,
    Support,
};
use star_kg_core::resolvent::{check_limiting_absorption, kernel_case, kernel_k, resolvent_rule, KernelQuery};
use star_kg_core::transform::{grid_for, norm_sigma, transform_v, transform_z, GridRequest, SpectralGrid, SpectralOptions};

use crate::config::{build_source, ExperimentConfig};
use crate::output::{svg_plot, Output, Report, Series, Table};

type C = Complex64;

const ODE_TOL: f64 = 1e-10;
const VERTEX_TOL: f64 = 1e-12;
const WRONSKIAN_TOL: f64 = 1e-12;
const CONJ_TOL: f64 = 1e-13;
const DIAG_TOL: f64 = 1e-12;
const ABSORPTION_TOL: f64 = 1e-8;
const RESOLVENT_TOL: f64 = 1e-6;
const RESOLVENT_ORACLE_TOL: f64 = 5e-3;
const CASE_TOL: f64 = 1e-12;
const WEIGHT_TOL: f64 = 1e-10;
const SYSTEM_TOL: f64 = 1e-12;
const PROJECTION_TOL: f64 = 1e-3;
const PLANCHEREL_TOL: f64 = 1e-4;
const ROUND_TRIP_TOL: f64 = 1e-3;
const DIAGONAL_TOL: f64 = 1e-6;
const ENERGY_TOL: f64 = 1e-4;
const EVOLVE_ORACLE_TOL: f64 = 1e-2;
const RATE_SLACK: f64 = 0.05;

pub struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub net: StarNetwork,
    pub opts: SpectralOptions,
    pub report: Report,
    pub out: Output,
}

impl Ctx<'_> {
    fn check(&mut self, name: impl Into<String>, residual: f64, tol: f64) {
        self.report.check(name, residual, tol + self.cfg.quadrature.abs_tol);
    }

    /// Run `f`; a library error becomes a failed check carrying the message.
    fn guard<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> star_kg_core::Result<T>) -> Option<T> {
        match f(self) {
            Ok(v) => Some(v),
            Err(e) => {
                self.report.fail(name, format!("{e:?}: {e}"));
                None
            }
        }
    }
}

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

/// Deterministic low-discrepancy sample in `[lo, hi)`.
fn sample(i: usize, stream: f64, lo: f64, hi: f64) -> f64 {
    let g = 0.618_033_988_749_894_9 * (i as f64 + 1.0) + stream;
    lo + (hi - lo) * g.fract()
}

/// One representative real lambda inside every band, avoiding thresholds.
fn band_lambdas(net: &StarNetwork) -> Vec<f64> {
    let mut t: Vec<f64> = net.thresholds();
    t.dedup();
    let mut out: Vec<f64> = t.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    out.push(t[t.len() - 1] + 2.5);
    out
}

fn complex_header(names: &[String]) -> Vec<String> {
    let mut h = vec!["branch".to_string(), "x".to_string()];
    for n in names {
        h.push(format!("{n}_re"));
        h.push(format!("{n}_im"));
    }
    h
}

/// Tabulate several network functions on `out`, one row per `(branch, x)`.
fn sample_table(name: &str, columns: &[(&str, &dyn Fn(usize, f64) -> C)], out: &GridSpec) -> Table {
    let names: Vec<String> = columns.iter().map(|c| c.0.to_string()).collect();
    let mut t = Table::with_header(name, complex_header(&names));
    for k in 0..out.n() {
        for x in out.points(k) {
            let mut row = vec![k as f64, x];
            for (_, f) in columns {
                let v = f(k, x);
                row.push(v.re);
                row.push(v.im);
            }
            t.push(row);
        }
    }
    t
}

fn relative_l2(a: &dyn Fn(usize, f64) -> C, b: &dyn Fn(usize, f64) -> C, out: &GridSpec, net: &StarNetwork) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..out.n() {
        for x in out.points(k) {
            let (u, v) = (a(k, x), b(k, x));
            num += net.c()[k].recip() * (u - v).norm_sqr();
            den += net.c()[k].recip() * v.norm_sqr();
        }
    }
    (num / den.max(1e-300)).sqrt()
}

fn branch_plot(title: &str, y_label: &str, f: &dyn Fn(usize, f64) -> f64, out: &GridSpec) -> String {
    let series: Vec<Series> = (0..out.n())
        .map(|k| Series::new(format!("branch {k}"), out.points(k).map(|x| (x, f(k, x))).collect()))
        .collect();
    svg_plot(title, "x", y_label, &series, false)
}

pub fn eigen(cx: &mut Ctx) -> Result<()> {
    let net = cx.net.clone();
    let e = cx.cfg.eigen.clone();
    let n = net.n();
    let mut names = Vec::new();
    for k in 0..n {
        names.push(format!("xi_{k}"));
    }
    for k in 0..n {
        names.push(format!("s_{k}"));
    }
    names.push("w".into());
    let mut header = vec!["lambda".to_string()];
    for nm in &names {
        header.push(format!("{nm}_re"));
        header.push(format!("{nm}_im"));
    }
    header.push("w_abs_sq".into());
    header.push("wronskian_bound".into());
    let mut table = Table::with_header("eigen_parameters", header);
    let (mut ode, mut t0, mut t1, mut wr) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut w_series, mut b_series) = (Vec::new(), Vec::new());
    for i in 0..e.count {
        let lambda = e.lambda_range[0] + (e.lambda_range[1] - e.lambda_range[0]) * i as f64 / (e.count - 1) as f64;
        if net.a().iter().any(|a| (lambda - a).abs() < 1e-9) {
            continue;
        }
        let sp = SpectralPoint::new(c(lambda, 0.0), Sign::Minus, &net);
        let mut row = vec![lambda];
        for k in 0..n {
            row.extend([sp.xi(k).re, sp.xi(k).im]);
        }
        for k in 0..n {
            let s = sp.s(k).unwrap_or(c(f64::NAN, f64::NAN));
            row.extend([s.re, s.im]);
        }
        let w = sp.w();
        let bound: f64 = net.c().iter().zip(net.a()).map(|(c, a)| c * (lambda - a).abs()).sum();
        row.extend([w.re, w.im, w.norm_sqr(), bound]);
        table.push(row);
        w_series.push((lambda, w.norm_sqr()));
        b_series.push((lambda, bound));
        if bound > 0.0 {
            wr = wr.max((bound - w.norm_sqr()).max(0.0) / bound);
        }
        for j in 0..n {
            let mut flux = c(0.0, 0.0);
            for k in 0..n {
                for x in [0.3, 1.7, 4.1] {
                    if let Ok([f, _, d2]) = sp.f_derivs(j, k, x) {
                        ode = ode.max((-d2 * net.c()[k] + f * net.a()[k] - f * lambda).norm() / f.norm().max(1.0));
                    }
                }
                if let Ok(v) = sp.f_derivs(j, k, 0.0) {
                    t0 = t0.max((v[0] - 1.0).norm());
                    flux += v[1] * net.c()[k];
                }
            }
            t1 = t1.max(flux.norm());
        }
    }
    cx.out.table(table);
    cx.out.plot(
        "eigen_wronskian",
        svg_plot(
            "Wronskian on the real axis",
            "lambda",
            "value",
            &[Series::new("|w|^2", w_series), Series::new("sum c_k |lambda - a_k|", b_series)],
            false,
        ),
    );
    cx.check("eigen.ode_residual", ode, ODE_TOL);
    cx.check("eigen.continuity_defect", t0, VERTEX_TOL);
    cx.check("eigen.flux_defect", t1, VERTEX_TOL);
    cx.check("eigen.wronskian_bound_deficit", wr, WRONSKIAN_TOL);

    let grid = GridSpec::uniform(n, e.x_max, e.dx);
    for (p, &lambda) in e.profiles.iter().enumerate() {
        let sp = SpectralPoint::new(c(lambda, 0.0), Sign::Minus, &net);
        let names: Vec<String> = (0..n).map(|j| format!("F{j}")).collect();
        let mut t = Table::with_header(&format!("eigen_profile_{p}"), complex_header(&names));
        for k in 0..n {
            for x in grid.points(k) {
                let mut row = vec![k as f64, x];
                for j in 0..n {
                    let v = sp.f(j, k, x).unwrap_or(c(f64::NAN, f64::NAN));
                    row.extend([v.re, v.im]);
                }
                t.push(row);
            }
        }
        cx.out.table(t);
        cx.out.plot(
            &format!("eigen_profile_{p}"),
            branch_plot(
                &format!("Re F^(-,0) at lambda = {lambda}"),
                "Re F",
                &|k, x| sp.f(0, k, x).map(|v| v.re).unwrap_or(f64::NAN),
                &grid,
            ),
        );
    }
    Ok(())
}

pub fn resolvent(cx: &mut Ctx) -> Result<()> {
    let net = cx.net.clone();
    let r = cx.cfg.resolvent.clone();
    let n = net.n();
    let lambda = c(r.lambda[0], r.lambda[1]);
    let f = build_source(&r.source, n);
    let out = GridSpec::uniform(n, r.x_max, r.dx);
    let Some(rf) = cx.guard("resolvent.analytic", |_| resolvent_rule(&f, lambda, &net)) else {
        return Ok(());
    };
    let residual = cx.guard("resolvent.residual", |_| {
        let lhs = rf.combine(lambda, &apply_a(&rf, &net)?, c(-1.0, 0.0));
        let res = lhs.combine(c(1.0, 0.0), &f, c(-1.0, 0.0)).set_support(Support::Compact(r.x_max));
        Ok(norm_h(&res, &net)? / norm_h(&f, &net)?)
    });
    if let Some(v) = residual {
        cx.check("resolvent.residual", v, RESOLVENT_TOL);
    }

    let oracle = if r.oracle {
        let (length, h) = (cx.cfg.grid.length, cx.cfg.grid.h);
        cx.guard("resolvent.oracle", |_| {
            let op = assemble(&net, length, h)?;
            op.to_function(&oracle_resolvent(&op, &op.restrict(&f), lambda)?)
        })
    } else {
        None
    };
    let an = |k: usize, x: f64| rf.eval(k, x);
    match &oracle {
        Some(o) => {
            let fd = |k: usize, x: f64| o.eval(k, x);
            let inner = GridSpec::uniform(n, r.x_max.min(cx.cfg.grid.length / 2.0), r.dx);
            let err = relative_l2(&fd, &an, &inner, &net);
            cx.check("resolvent.oracle_relative_l2", err, RESOLVENT_ORACLE_TOL);
            cx.out.table(sample_table("resolvent", &[("analytic", &an), ("oracle", &fd)], &out));
        }
        None => cx.out.table(sample_table("resolvent", &[("analytic", &an)], &out)),
    }
    cx.out.plot("resolvent_abs", branch_plot("|R(lambda) f|", "|Rf|", &|k, x| rf.eval(k, x).norm(), &out));

    let src = NetworkPoint::new(0, 1.0);
    let netr = &net;
    let kern = |l: C| {
        move |k: usize, x: f64| {
            kernel_k(
                &KernelQuery {
                    x: NetworkPoint::new(k, x),
                    x_prime: src,
                    lambda: l,
                },
                netr,
            )
            .unwrap_or(c(f64::NAN, f64::NAN))
        }
    };
    let (k1, k2) = (kern(lambda), kern(lambda.conj()));
    let mut conj = 0.0f64;
    for k in 0..n {
        for x in out.points(k) {
            let (a, b) = (k1(k, x), k2(k, x));
            conj = conj.max((a.conj() - b).norm() / a.norm().max(1.0));
        }
    }
    if lambda.im != 0.0 {
        cx.check("resolvent.kernel_conjugation", conj, CONJ_TOL);
    }
    cx.out.table(sample_table("kernel_slice", &[("K", &k1)], &out));
    Ok(())
}

fn sampling_points(n: usize, shift: f64) -> Vec<f64> {
    (0..n - 1).map(|i| 0.37 + shift + 0.61 * i as f64).collect()
}

fn matrix_weights(lambda: f64, net: &StarNetwork) -> star_kg_core::Result<WeightMatrix> {
    let mut last = None;
    for shift in [0.0, 0.13, 0.29, 0.47] {
        match weights_matrix(lambda, &sampling_points(net.n(), shift), net) {
            Ok(m) => return Ok(m),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

pub fn measure(cx: &mut Ctx) -> Result<()> {
    let net = cx.net.clone();
    let m = cx.cfg.measure.clone();
    let n = net.n();
    let lambdas = if m.lambdas.is_empty() {
        let top = net.a()[n - 1] + 10.0;
        (0..60)
            .map(|i| net.a()[0] + (top - net.a()[0]) * (i as f64 + 0.5) / 60.0)
            .filter(|l| net.a().iter().all(|a| (l - a).abs() > 1e-6))
            .collect()
    } else {
        m.lambdas.clone()
    };
    let mut header = vec!["lambda".to_string(), "band".to_string()];
    for k in 0..n {
        header.push(format!("q_diag_{k}"));
    }
    for k in 0..n {
        header.push(format!("q_matrix_{k}"));
    }
    header.extend(["max_off_diagonal".to_string(), "system_residual".to_string()]);
    let mut table = Table::with_header("weights", header);
    let (mut diff, mut system) = (0.0f64, 0.0f64);
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
    for &lambda in &lambdas {
        let res = (|| -> star_kg_core::Result<_> {
            let d = weights_diagonal(lambda, &net)?;
            let mm = matrix_weights(lambda, &net)?;
            let sys = verify_weight_systems(lambda, &net)?;
            Ok((d, mm, sys))
        })();
        let Some((d, mm, sys)) = cx.guard(&format!("measure.weights at lambda = {lambda}"), |_| res) else {
            continue;
        };
        diff = diff.max(mm.max_abs_diff(&d));
        system = system.max(sys.max_residual);
        let mut row = vec![lambda, BandIndex::of(lambda, &net).0 as f64];
        row.extend(d.diagonal());
        row.extend(mm.diagonal());
        row.extend([mm.max_off_diagonal(), sys.max_residual]);
        table.push(row);
        let sg = sigma(&SpectralPoint::new(c(lambda, 0.0), Sign::Minus, &net), &net);
        for k in 0..n {
            series[k].push((lambda, sg[k]));
        }
    }
    cx.out.table(table);
    cx.out.plot(
        "spectral_weights",
        svg_plot(
            "Spectral weights sigma_k",
            "lambda",
            "sigma",
            &series.into_iter().enumerate().map(|(k, p)| Series::new(format!("branch {k}"), p)).collect::<Vec<_>>(),
            false,
        ),
    );
    cx.check("measure.matrix_vs_diagonal", diff, WEIGHT_TOL);
    cx.check("measure.weight_systems", system, SYSTEM_TOL);

    let f = build_source(&m.source, n);
    let out = GridSpec::uniform(n, m.x_max, m.dx);
    let [a, b] = m.interval;
    let opts = cx.opts.clone();
    let pair = cx.guard("measure.projection", |_| {
        Ok((
            projection_e(a, b, &f, &net, ProjectionFormula::Symmetric, &out, &opts)?,
            projection_e(a, b, &f, &net, ProjectionFormula::Cyclic, &out, &opts)?,
        ))
    });
    if let Some((sym, cyc)) = pair {
        let (s, y) = (|k: usize, x: f64| sym.eval(k, x), |k: usize, x: f64| cyc.eval(k, x));
        cx.check("measure.cyclic_vs_symmetric", relative_l2(&y, &s, &out, &net), PROJECTION_TOL);
        cx.out.table(sample_table("projection", &[("symmetric", &s), ("cyclic", &y)], &out));
        cx.out.plot(
            "projection",
            branch_plot(&format!("Re E({a}, {b}) f"), "Re Ef", &|k, x| sym.eval(k, x).re, &out),
        );
    }
    Ok(())
}

pub fn transform(cx: &mut Ctx) -> Result<()> {
    let net = cx.net.clone();
    let tc = cx.cfg.transform.clone();
    let n = net.n();
    let opts = cx.opts.clone();
    let out = GridSpec::uniform(n, tc.x_max, tc.dx);
    for (i, src) in tc.functions.iter().enumerate() {
        let f = build_source(src, n);
        let Some((grid, vf)) = cx.guard(&format!("transform.{i}.transform"), |_| {
            let grid = grid_for(&[&f], &net, tc.x_max, 0.0, &[], &opts)?;
            let vf = transform_v(&f, &grid, &opts)?;
            Ok((grid, vf))
        }) else {
            continue;
        };
        let Some(fn2) = cx.guard(&format!("transform.{i}.norm"), |_| norm_h(&f, &net)) else {
            continue;
        };
        let lhs = fn2 * fn2;
        let rhs = norm_sigma(&vf).powi(2);
        cx.check(format!("transform.{i}.plancherel"), (lhs - rhs).abs() / lhs.max(1e-300), PLANCHEREL_TOL);

        let mut t = Table::new(&format!("spectral_{i}"), &["branch", "lambda", "sigma", "Vf_re", "Vf_im"]);
        let mut series = Vec::new();
        for k in 0..n {
            let nodes = vf.component_nodes(k);
            let mut pts = Vec::new();
            for (idx, (&l, v)) in nodes.iter().zip(vf.component(k)).enumerate() {
                let s = grid.sigma(grid.start(k) + idx, k);
                t.push(vec![k as f64, l, s, v.re, v.im]);
                pts.push((l, v.norm_sqr() * s));
            }
            series.push(Series::new(format!("branch {k}"), pts));
        }
        cx.out.table(t);
        cx.out.plot(
            &format!("spectral_{i}"),
            svg_plot("Spectral density |Vf_k|^2 sigma_k", "lambda", "density", &series, true),
        );
        if let Some(zf) = cx.guard(&format!("transform.{i}.inverse"), |_| transform_z(&vf, &out)) {
            let (a, b) = (|k: usize, x: f64| zf.eval(k, x), |k: usize, x: f64| f.eval(k, x));
            cx.check(format!("transform.{i}.round_trip"), relative_l2(&a, &b, &out, &net), ROUND_TRIP_TOL);
            cx.out.table(sample_table(&format!("roundtrip_{i}"), &[("f", &b), ("ZVf", &a)], &out));
        }
    }
    Ok(())
}

pub fn evolve(cx: &mut Ctx) -> Result<()> {
    let net = cx.net.clone();
    let ec = cx.cfg.evolve.clone();
    let n = net.n();
    let opts = cx.opts.clone();
    let out = GridSpec::uniform(n, ec.x_max, ec.dx);
    let u0 = build_source(&ec.u0, n);
    let v0 = build_source(&ec.v0, n);
    let t_max = ec.times.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if !ec.times.is_empty() {
        if let Some(ev) = cx.guard("evolve.setup", |_| Evolver::new(&u0, &v0, t_max, &net, &opts)) {
            let mut e0 = None;
            let mut drift = 0.0f64;
            let mut energies = Table::new("energy", &["t", "energy"]);
            let op = if ec.oracle {
                let (length, h) = (cx.cfg.grid.length, cx.cfg.grid.h);
                cx.guard("evolve.oracle", |_| assemble(&net, length, h))
            } else {
                None
            };
            for (i, &t) in ec.times.iter().enumerate() {
                let Some(st) = cx.guard(&format!("evolve.state at t = {t}"), |_| ev.state(t)) else {
                    continue;
                };
                let (u, v) = (|k: usize, x: f64| st.u.eval(k, x), |k: usize, x: f64| st.v.eval(k, x));
                cx.out.table(sample_table(&format!("frame_{i}"), &[("u", &u), ("v", &v)], &out));
                cx.out
                    .plot(&format!("frame_{i}"), branch_plot(&format!("Re u at t = {t}"), "Re u", &|k, x| st.u.eval(k, x).re, &out));
                if ev.conforming() {
                    if let Some(e) = cx.guard(&format!("evolve.energy at t = {t}"), |_| energy(&st, &net)) {
                        energies.push(vec![t, e]);
                        let base = *e0.get_or_insert(e);
                        drift = drift.max((e - base).abs() / base.max(1e-300));
                    }
                }
                if let Some(op) = &op {
                    let name = format!("evolve.oracle_relative_l2 at t = {t}");
                    match oracle_evolve(op, &u0, &v0, t).and_then(|s| op.to_function(&s.u)) {
                        Ok(fd) => {
                            let inner = GridSpec::uniform(n, ec.x_max.min(op.length()), ec.dx);
                            let o = |k: usize, x: f64| fd.eval(k, x);
                            cx.check(name, relative_l2(&o, &u, &inner, &net), EVOLVE_ORACLE_TOL);
                        }
                        Err(e) => cx.report.fail(name, format!("{e:?}: {e}")),
                    }
                }
            }
            if ev.conforming() && energies.rows.len() > 1 {
                cx.check("evolve.energy_drift", drift, ENERGY_TOL);
            }
            if ev.conforming() {
                cx.out.table(energies);
            }
        }
    }
    if let Some(tc) = ec.tunnel.clone() {
        let src = tc.source.as_ref().map(|s| build_source(s, n)).unwrap_or_else(|| u0.clone());
        if let Some(rep) = cx.guard("evolve.tunnel", |_| {
            tunnel_decay_profile((tc.band[0], tc.band[1]), tc.branch, &src, &net, tc.t, (tc.window[0], tc.window[1]), &opts)
        }) {
            let (lo, hi) = rep.predicted_rate_interval;
            let miss = if rep.fitted_rate < lo {
                (lo - rep.fitted_rate) / lo
            } else if rep.fitted_rate > hi {
                (rep.fitted_rate - hi) / hi
            } else {
                0.0
            };
            cx.check(format!("evolve.tunnel_rate (fitted {:.4}, predicted [{lo:.4}, {hi:.4}])", rep.fitted_rate), miss, RATE_SLACK);
            let mut t = Table::new("tunnel_profile", &["x", "abs_u"]);
            for &(x, a) in &rep.profile {
                t.push(vec![x, a]);
            }
            cx.out.table(t);
            let x0 = rep.profile[0].0;
            let a0 = rep.profile[0].1;
            let guide = |r: f64| rep.profile.iter().map(|&(x, _)| (x, a0 * (-r * (x - x0)).exp())).collect();
            cx.out.plot(
                "tunnel_profile",
                svg_plot(
                    &format!("|u| on branch {} at t = {}", tc.branch, tc.t),
                    "x",
                    "|u|",
                    &[
                        Series::new("|u|", rep.profile.clone()),
                        Series::new("slowest predicted", guide(lo)),
                        Series::new("fastest predicted", guide(hi)),
                    ],
                    true,
                ),
            );
        }
    }
    Ok(())
}

/// The invariant suite on the configured network.
pub fn verify(cx: &mut Ctx) -> Result<()> {
    let net = cx.net.clone();
    let n = net.n();
    let a1 = net.a()[0];

    // eigenfunctions off the real axis and on it
    let (mut ode, mut t0, mut t1) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..40 {
        let lambda = c(sample(i, 0.1, a1 - 3.0, a1 + 30.0), sample(i, 0.7, -2.0, 2.0));
        if net.a().iter().any(|&a| (lambda - a).norm() < 1e-3) {
            continue;
        }
        let sign = if i % 2 == 0 { Sign::Plus } else { Sign::Minus };
        let sp = SpectralPoint::new(lambda, sign, &net);
        for j in 0..n {
            let mut flux = c(0.0, 0.0);
            for k in 0..n {
                let x = sample(i * n + k, 0.3, 0.0, 4.0);
                if let Ok([f, _, d2]) = sp.f_derivs(j, k, x) {
                    ode = ode.max((-d2 * net.c()[k] + f * net.a()[k] - lambda * f).norm() / f.norm().max(1.0));
                }
                if let Ok(v) = sp.f_derivs(j, k, 0.0) {
                    t0 = t0.max((v[0] - 1.0).norm());
                    flux += v[1] * net.c()[k];
                }
            }
            t1 = t1.max(flux.norm());
        }
    }
    cx.check("eigenfunction ODE residual", ode, ODE_TOL);
    cx.check("eigenfunction continuity at the vertex", t0, VERTEX_TOL);
    cx.check("eigenfunction flux at the vertex", t1, VERTEX_TOL);

    let mut wr = 0.0f64;
    for i in 0..100 {
        let lambda = a1 + 20.0 * i as f64 / 99.0;
        let bound: f64 = net.c().iter().zip(net.a()).map(|(c, a)| c * (lambda - a).abs()).sum();
        for e in 0..100 {
            let w = wronskian_w(c(lambda, -5.0 * e as f64 / 99.0), Sign::Minus, &net);
            if bound > 0.0 {
                wr = wr.max((bound - w.norm_sqr()).max(0.0) / bound);
            }
        }
    }
    cx.check("Wronskian lower bound deficit", wr, WRONSKIAN_TOL);

    let (mut conj, mut diag) = (0.0f64, 0.0f64);
    for i in 0..300 {
        let lam = c(sample(i, 0.2, a1 - 2.0, a1 + 25.0), sample(i, 0.9, 0.01, 3.0) * if i % 2 == 0 { 1.0 } else { -1.0 });
        let x = NetworkPoint::new(i % n, sample(i, 0.4, 0.0, 4.0));
        let xp = NetworkPoint::new((i / n) % n, sample(i, 0.5, 0.0, 4.0));
        let r = (|| -> star_kg_core::Result<(f64, f64)> {
            let k = kernel_k(&KernelQuery { x, x_prime: xp, lambda: lam }, &net)?;
            let kc = kernel_k(&KernelQuery { x, x_prime: xp, lambda: lam.conj() }, &net)?;
            let sp = SpectralPoint::for_kernel(lam, &net);
            let up = kernel_case(&sp, x, x, true)?;
            let down = kernel_case(&sp, x, x, false)?;
            Ok(((k.conj() - kc).norm() / k.norm().max(1.0), (up - down).norm() / up.norm().max(1.0)))
        })();
        if let Some((a, b)) = cx.guard("kernel evaluation", |_| r) {
            conj = conj.max(a);
            diag = diag.max(b);
        }
    }
    cx.check("kernel conjugation symmetry", conj, CONJ_TOL);
    cx.check("kernel two-sided diagonal agreement", diag, DIAG_TOL);

    let pairs: Vec<_> = (0..20)
        .map(|i| {
            (
                NetworkPoint::new(i % n, sample(i, 0.11, 0.0, 5.0)),
                NetworkPoint::new((i + 1) % n, sample(i, 0.77, 0.0, 5.0)),
            )
        })
        .collect();
    let eps: Vec<f64> = (1..=10).map(|p| 10f64.powi(-p)).collect();
    let (mut defect, mut violations) = (0.0f64, 0usize);
    for lambda in band_lambdas(&net) {
        if let Some(rep) = cx.guard("limiting absorption", |_| check_limiting_absorption(lambda, &eps, &pairs, &net)) {
            defect = defect.max(rep.final_defect);
            violations += rep.envelope_violations;
        }
    }
    cx.check("limiting absorption defect", defect, ABSORPTION_TOL);
    cx.check("limiting absorption envelope violations", violations as f64, 0.0);

    let mut case = 0.0f64;
    for lambda in band_lambdas(&net) {
        let p = BandIndex::of(lambda, &net);
        for j in 0..n {
            for k in 0..n {
                let (x, xp) = (sample(j * n + k, 0.21, 0.0, 4.0), sample(j * n + k, 0.63, 0.0, 4.0));
                let r = im_kernel_case(j, k, p, x, xp, lambda, &net).and_then(|a| Ok((a - im_kernel_direct(j, k, x, xp, lambda, &net)?).abs()));
                if let Some(v) = cx.guard("case formulas", |_| r) {
                    case = case.max(v);
                }
            }
        }
    }
    cx.check("imaginary kernel case formulas", case, CASE_TOL);

    let (mut wd, mut sys) = (0.0f64, 0.0f64);
    for i in 0..40 {
        let lambda = sample(i, 0.05, a1 + 0.05, net.a()[n - 1] + 30.0);
        if net.a().iter().any(|a| (lambda - a).abs() < 1e-3) {
            continue;
        }
        let r = (|| -> star_kg_core::Result<(f64, f64)> {
            let d = weights_diagonal(lambda, &net)?;
            let m = matrix_weights(lambda, &net)?;
            Ok((m.max_abs_diff(&d), verify_weight_systems(lambda, &net)?.max_residual))
        })();
        if let Some((a, b)) = cx.guard("weights", |_| r) {
            wd = wd.max(a);
            sys = sys.max(b);
        }
    }
    cx.check("matrix weights equal diagonal weights", wd, WEIGHT_TOL);
    cx.check("weight systems residual", sys, SYSTEM_TOL);

    let opts = cx.opts.clone();
    let fs = [
        vertex_gaussian(n, 0.6, c(1.0, 0.0)),
        gaussian_on_branch(n, n - 1, 2.0, 0.5, c(1.0, 0.0)),
        gaussian_on_branch(n, 0, 1.5, 0.4, c(0.0, 1.0)),
    ];
    let mut planch = 0.0f64;
    for f in &fs {
        let r = (|| -> star_kg_core::Result<f64> {
            let grid = grid_for(&[f], &net, 0.0, 0.0, &[], &opts)?;
            let lhs = norm_h(f, &net)?.powi(2);
            Ok((lhs - norm_sigma(&transform_v(f, &grid, &opts)?).powi(2)).abs() / lhs)
        })();
        if let Some(v) = cx.guard("Plancherel", |_| r) {
            planch = planch.max(v);
        }
    }
    cx.check("Plancherel identity", planch, PLANCHEREL_TOL);

    let r = (|| -> star_kg_core::Result<f64> {
        let f = &fs[0];
        let af = apply_a(f, &net)?;
        let req = GridRequest {
            lo: a1,
            hi: 200.0,
            x_extent: 5.4,
            time_extent: 0.0,
            breakpoints: vec![],
        };
        let grid = Arc::new(SpectralGrid::new(&net, &req, opts.policy)?);
        let lvf = transform_v(f, &grid, &opts)?.multiply(|l| c(l, 0.0));
        let vaf = transform_v(&af, &grid, &opts)?;
        let scale = (0..n).flat_map(|k| lvf.component(k).iter().map(|v| v.norm())).fold(0.0, f64::max);
        Ok(vaf.max_abs_diff(&lvf) / scale)
    })();
    if let Some(v) = cx.guard("diagonalization", |_| r) {
        cx.check("transform diagonalizes A", v, DIAGONAL_TOL);
    }

    let f = gaussian_on_branch(n, 0, 2.0, 0.5, c(1.0, 0.0));
    let lambda = c(a1 + 1.0, 1.0);
    let r = (|| -> star_kg_core::Result<f64> {
        let rf = resolvent_rule(&f, lambda, &net)?;
        let lhs = rf.combine(lambda, &apply_a(&rf, &net)?, c(-1.0, 0.0));
        let res = lhs.combine(c(1.0, 0.0), &f, c(-1.0, 0.0)).set_support(Support::Compact(20.0));
        Ok(norm_h(&res, &net)? / norm_h(&f, &net)?)
    })();
    if let Some(v) = cx.guard("resolvent", |_| r) {
        cx.check("resolvent residual", v, RESOLVENT_TOL);
    }
    let d = check_transmission(&vertex_gaussian(n, 0.6, c(1.0, 0.0)), &net);
    cx.check("vertex Gaussian conforms", d.t0_defect.max(d.t1_defect), VERTEX_TOL);
    Ok(())
}
