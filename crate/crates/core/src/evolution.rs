//! Klein-Gordon evolution `u_tt + A u = 0` through the spectral
//! representation, energy bookkeeping and the tunnel-effect measurement.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernel::xi;
use crate::network::{check_transmission, NetworkFunction, StarNetwork, Support, TransmissionDefects};
use crate::transform::{grid_for, transform_v, GridRequest, ModeField, SpectralFunction, SpectralGrid, SpectralOptions};

type C = Complex64;

/// Extra room beyond `r + |t| max sqrt(c_k)` kept in the evaluation window.
pub const WINDOW_MARGIN: f64 = 8.0;
/// Transmission defects above this mark initial data as non-conforming.
pub const CONFORMING_TOL: f64 = 1e-8;

/// `cos(sqrt(lambda) t)`.
pub fn cos_multiplier(lambda: f64, t: f64) -> f64 {
    if lambda >= 0.0 {
        (lambda.sqrt() * t).cos()
    } else {
        ((-lambda).sqrt() * t).cosh()
    }
}

/// `sin(sqrt(lambda) t) / sqrt(lambda)`, by series near `lambda = 0`.
pub fn sinc_multiplier(lambda: f64, t: f64) -> f64 {
    if lambda.abs() < 1e-8 {
        t - lambda * t * t * t / 6.0
    } else if lambda > 0.0 {
        let r = lambda.sqrt();
        (r * t).sin() / r
    } else {
        let r = (-lambda).sqrt();
        (r * t).sinh() / r
    }
}

/// Displacement and velocity at time `t`.
#[derive(Debug, Clone)]
pub struct WaveState {
    pub u: NetworkFunction,
    pub v: NetworkFunction,
    pub t: f64,
    /// Whether the initial data satisfied the vertex conditions; energy is
    /// only reported for conforming data.
    pub conforming: bool,
    /// The fields are cut off beyond this radius.
    pub radius: f64,
    u_field: Arc<ModeField>,
    v_field: Arc<ModeField>,
}

/// Precomputed transforms of the initial data, reusable for many times.
#[derive(Debug, Clone)]
pub struct Evolver {
    net: StarNetwork,
    vu0: SpectralFunction,
    vv0: SpectralFunction,
    t_max: f64,
    support: f64,
    defects: TransmissionDefects,
}

fn radius(f: &NetworkFunction) -> Result<f64> {
    match f.support() {
        Support::Compact(r) => Ok(r),
        _ => Err(Error::NonCompactSupport),
    }
}

impl Evolver {
    /// Prepare evolution of `(u0, v0)` for `|t| <= t_max`.
    pub fn new(u0: &NetworkFunction, v0: &NetworkFunction, t_max: f64, net: &StarNetwork, opts: &SpectralOptions) -> Result<Self> {
        let support = radius(u0)?.max(radius(v0)?);
        let du = check_transmission(u0, net);
        let dv = check_transmission(v0, net);
        let defects = TransmissionDefects {
            t0_defect: du.t0_defect.max(dv.t0_defect),
            t1_defect: du.t1_defect,
        };
        let x_out = support + WINDOW_MARGIN;
        let grid = grid_for(&[u0, v0], net, x_out, t_max.abs(), &[], opts)?;
        Ok(Self {
            net: net.clone(),
            vu0: transform_v(u0, &grid, opts)?,
            vv0: transform_v(v0, &grid, opts)?,
            t_max: t_max.abs(),
            support,
            defects,
        })
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        self.vu0.grid()
    }

    pub fn conforming(&self) -> bool {
        self.defects.within(CONFORMING_TOL)
    }

    pub fn defects(&self) -> TransmissionDefects {
        self.defects
    }

    /// Spectral data `(V u(t), V v(t))`.
    pub fn spectral_state(&self, t: f64) -> (SpectralFunction, SpectralFunction) {
        let u = self
            .vu0
            .map(|_, l, g| g * cos_multiplier(l, t))
            .add_scaled(C::new(1.0, 0.0), &self.vv0.map(|_, l, g| g * sinc_multiplier(l, t)));
        let v = self
            .vu0
            .map(|_, l, g| -g * l * sinc_multiplier(l, t))
            .add_scaled(C::new(1.0, 0.0), &self.vv0.map(|_, l, g| g * cos_multiplier(l, t)));
        (u, v)
    }

    pub fn state(&self, t: f64) -> Result<WaveState> {
        if t.abs() > self.t_max * (1.0 + 1e-12) {
            return Err(Error::Precondition(format!("t = {t} exceeds the prepared range {}", self.t_max)));
        }
        let (gu, gv) = self.spectral_state(t);
        let radius = self.support + t.abs() * self.net.max_speed() + WINDOW_MARGIN;
        let u_field = Arc::new(ModeField::from_spectral(&gu));
        let v_field = Arc::new(ModeField::from_spectral(&gv));
        Ok(WaveState {
            u: (*u_field).clone().into_function(radius),
            v: (*v_field).clone().into_function(radius),
            t,
            conforming: self.conforming(),
            radius,
            u_field,
            v_field,
        })
    }

    /// `Z e^{-i sqrt(lambda) t} V u_0`.
    pub fn half_wave(&self, t: f64) -> ModeField {
        ModeField::from_spectral(&self.vu0.map(|_, l, g| {
            let r = l.max(0.0).sqrt();
            g * C::new(0.0, -r * t).exp()
        }))
    }
}

/// Evolve `(u0, v0)` to time `t`.
pub fn evolve(u0: &NetworkFunction, v0: &NetworkFunction, t: f64, net: &StarNetwork, opts: &SpectralOptions) -> Result<WaveState> {
    Evolver::new(u0, v0, t, net, opts)?.state(t)
}

/// `|v|^2 + sum_k (c_k |u_k'|^2 + a_k |u_k|^2)` integrated over the state's
/// window.
pub fn energy(state: &WaveState, net: &StarNetwork) -> Result<f64> {
    if !state.conforming {
        let d = check_transmission(&state.u, net);
        return Err(Error::NonConformingInitialData {
            t0: d.t0_defect,
            t1: d.t1_defect,
        });
    }
    let us = state.u_field.window_samples(state.radius, 1);
    let vs = state.v_field.window_samples(state.radius, 0);
    let mut total = 0.0;
    for k in 0..net.n() {
        for ((_, w, u), (_, _, v)) in us[k].iter().zip(&vs[k]) {
            total += w * (v[0].norm_sqr() + net.c()[k] * u[1].norm_sqr() + net.a()[k] * u[0].norm_sqr());
        }
    }
    Ok(total)
}

/// Result of [`tunnel_decay_profile`].
#[derive(Debug, Clone, PartialEq)]
pub struct TunnelReport {
    pub branch: usize,
    pub band: (f64, f64),
    pub fitted_rate: f64,
    /// `[xi'_k(lambda_hi), xi'_k(lambda_lo)]`.
    pub predicted_rate_interval: (f64, f64),
    pub window: (f64, f64),
    /// Largest `|u|` inside the fit window.
    pub amplitude: f64,
    /// `(x, |u(t, x)|)` samples used in the fit.
    pub profile: Vec<(f64, f64)>,
}

/// Smooth bump equal to 1 in the middle of `(lo, hi)` and vanishing to all
/// orders at both ends.
pub fn band_bump(lo: f64, hi: f64) -> impl Fn(f64) -> f64 + Send + Sync + Copy {
    move |l: f64| {
        if l <= lo || l >= hi {
            return 0.0;
        }
        let s = 2.0 * (l - lo) / (hi - lo) - 1.0;
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// Band-limit `u0` to `band` with a smooth bump, evolve it to time `t` and
/// fit `log |u|` against `x` on branch `k` over `window`.
pub fn tunnel_decay_profile(
    band: (f64, f64),
    k: usize,
    u0: &NetworkFunction,
    net: &StarNetwork,
    t: f64,
    window: (f64, f64),
    opts: &SpectralOptions,
) -> Result<TunnelReport> {
    const FLOOR: f64 = 1e-12;
    const SAMPLES: usize = 101;
    let (lo, hi) = band;
    let outside = Error::BandOutsideGap { lo, hi, branch: k };
    let p = net.band_index(lo);
    if !(lo < hi) || k >= net.n() || p == 0 || net.band_index(hi) != p || p >= net.n() || hi >= net.a()[p] || k < p {
        return Err(outside);
    }
    let r = radius(u0)?;
    let req = GridRequest {
        lo,
        hi,
        x_extent: r + window.1,
        time_extent: t,
        breakpoints: Vec::new(),
    };
    let grid = Arc::new(SpectralGrid::new(net, &req, opts.policy)?);
    let psi = band_bump(lo, hi);
    let g = transform_v(u0, &grid, opts)?.map(|_, l, v| v * psi(l) * cos_multiplier(l, t));
    let field = ModeField::from_spectral(&g);
    let profile: Vec<(f64, f64)> = (0..SAMPLES)
        .map(|i| {
            let x = window.0 + (window.1 - window.0) * i as f64 / (SAMPLES - 1) as f64;
            (x, field.eval(k, x).norm())
        })
        .collect();
    let amplitude = profile.iter().map(|p| p.1).fold(0.0, f64::max);
    if amplitude < FLOOR || profile.iter().any(|p| p.1 < FLOOR) {
        return Err(Error::AmplitudeUnderflow(profile.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)));
    }
    let m = SAMPLES as f64;
    let (sx, sy) = profile.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1.ln()));
    let (mx, my) = (sx / m, sy / m);
    let (sxy, sxx) = profile
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + (p.0 - mx) * (p.1.ln() - my), b + (p.0 - mx).powi(2)));
    let rate = -sxy / sxx;
    let decay = |l: f64| (C::new(0.0, 1.0) * xi(C::new(l, 0.0), k, net)).re;
    Ok(TunnelReport {
        branch: k,
        band,
        fitted_rate: rate,
        predicted_rate_interval: (decay(hi), decay(lo)),
        window,
        amplitude,
        profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{gaussian_on_branch, norm_h, vertex_gaussian};

    #[test]
    fn multipliers_are_smooth_through_zero() {
        for t in [0.5, 2.0] {
            assert!((sinc_multiplier(1e-9, t) - t).abs() < 1e-8);
            assert!((sinc_multiplier(-1e-9, t) - t).abs() < 1e-8);
            assert!((sinc_multiplier(1e-7, t) - (1e-7f64.sqrt() * t).sin() / 1e-7f64.sqrt()).abs() < 1e-14);
            assert!((cos_multiplier(-4.0, t) - (2.0 * t).cosh()).abs() < 1e-12);
        }
    }

    #[test]
    fn dalembert_split_on_free_line() {
        let net = StarNetwork::uniform(2, 1.0, 0.0).unwrap();
        let u0 = gaussian_on_branch(2, 0, 5.0, 0.7, C::new(1.0, 0.0));
        let zero = NetworkFunction::zero(2).set_support(Support::Compact(0.0));
        let opts = SpectralOptions::default();
        let st = evolve(&u0, &zero, 3.0, &net, &opts).unwrap();
        let g = |y: f64| (-(y / 0.7).powi(2)).exp();
        let mut err: f64 = 0.0;
        for i in 0..=200 {
            let x = 12.0 * i as f64 / 200.0;
            // branch 0 is y = x, branch 1 is y = -x on the line
            let e0 = 0.5 * (g(x - 8.0) + g(x - 2.0));
            let e1 = 0.5 * g(-x - 2.0);
            err = err.max((st.u.eval(0, x).re - e0).abs()).max((st.u.eval(1, x).re - e1).abs());
        }
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn energy_is_conserved_and_half_wave_is_unitary() {
        let net = StarNetwork::new(vec![1.0, 2.0, 0.5], vec![0.0, 1.5, 4.0]).unwrap();
        let u0 = vertex_gaussian(3, 0.6, C::new(1.0, 0.0));
        let v0 = gaussian_on_branch(3, 2, 3.0, 0.5, C::new(0.5, 0.0));
        let opts = SpectralOptions {
            lambda_max: crate::transform::LambdaMax::Fixed(400.0),
            ..SpectralOptions::default()
        };
        let ev = Evolver::new(&u0, &v0, 4.0, &net, &opts).unwrap();
        assert!(ev.conforming());
        let e0 = energy(&ev.state(0.0).unwrap(), &net).unwrap();
        for t in [1.0, 4.0] {
            let e = energy(&ev.state(t).unwrap(), &net).unwrap();
            assert!((e - e0).abs() / e0 < 1e-5, "{e} {e0}");
        }
        let n0 = norm_h(&u0, &net).unwrap();
        let hw = ev.half_wave(2.5).norm_sq(20.0).sqrt();
        assert!((hw - n0).abs() < 1e-3, "{hw} {n0}");
    }

    #[test]
    fn non_conforming_data_blocks_energy() {
        let net = StarNetwork::uniform(3, 1.0, 0.0).unwrap();
        let u0 = gaussian_on_branch(3, 0, 0.0, 0.5, C::new(1.0, 0.0));
        let zero = NetworkFunction::zero(3).set_support(Support::Compact(0.0));
        let st = evolve(&u0, &zero, 1.0, &net, &SpectralOptions::default()).unwrap();
        assert!(!st.conforming);
        assert!(matches!(energy(&st, &net), Err(Error::NonConformingInitialData { .. })));
    }

    #[test]
    fn tunnel_band_checks() {
        let net = StarNetwork::new(vec![1.0; 3], vec![0.0, 4.0, 16.0]).unwrap();
        let u0 = vertex_gaussian(3, 0.5, C::new(1.0, 0.0));
        let opts = SpectralOptions::default();
        let err = |band, k| tunnel_decay_profile(band, k, &u0, &net, 2.0, (0.5, 3.0), &opts);
        assert!(matches!(err((20.0, 22.0), 2), Err(Error::BandOutsideGap { .. })));
        assert!(matches!(err((1.0, 3.0), 0), Err(Error::BandOutsideGap { .. })));
        assert!(matches!(err((3.0, 5.0), 2), Err(Error::BandOutsideGap { .. })));
    }
}
