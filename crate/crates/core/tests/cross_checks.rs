//! Identities that tie separate modules together.

use num_complex::Complex64;
use star_kg_core::evolution::{tunnel_decay_profile, Evolver};
use star_kg_core::fd_oracle::{assemble, discrete_energy, oracle_evolve, ModalDensity};
use star_kg_core::network::{gaussian_on_branch, norm_h, vertex_gaussian, GridSpec, NetworkFunction, StarNetwork, Support};
use star_kg_core::resolvent::apply_resolvent;
use star_kg_core::transform::{apply_function_of_a, transform_v, GridRequest, SpectralGrid, SpectralOptions};
use star_kg_core::Error;

type C = Complex64;

fn net3() -> StarNetwork {
    StarNetwork::new(vec![1.0, 2.0, 0.5], vec![0.0, 1.5, 4.0]).unwrap()
}

#[test]
fn resolvent_below_spectrum_matches_functional_calculus() {
    let net = net3();
    let f = gaussian_on_branch(3, 1, 2.0, 0.5, C::new(1.0, 0.0));
    let z = -1.0;
    let out = GridSpec::uniform(3, 6.0, 0.05);
    let direct = apply_resolvent(&f, C::new(z, 0.0), &net, &out).unwrap();
    let spectral = apply_function_of_a(&|l| 1.0 / (z - l), &[], &f, &net, &out, &SpectralOptions::default()).unwrap();
    let mut err: f64 = 0.0;
    for k in 0..3 {
        for x in out.points(k) {
            err = err.max((direct.eval(k, x) - spectral.eval(k, x)).norm());
        }
    }
    assert!(err < 1e-7, "{err}");
}

#[test]
fn transform_intertwines_the_resolvent() {
    // V(R(z) f) = V f / (z - lambda), with R(z) f sampled and cut off far out
    let net = net3();
    let f = vertex_gaussian(3, 0.6, C::new(1.0, 0.0));
    let z = C::new(2.0, 1.5);
    let opts = SpectralOptions::default();
    let out = GridSpec::uniform(3, 30.0, 2e-3);
    let rf = apply_resolvent(&f, z, &net, &out).unwrap().set_support(Support::Compact(30.0));
    let req = GridRequest {
        lo: 0.0,
        hi: 30.0,
        x_extent: 30.0,
        time_extent: 0.0,
        breakpoints: vec![],
    };
    let small = std::sync::Arc::new(SpectralGrid::new(&net, &req, opts.policy).unwrap());
    let lhs = transform_v(&rf, &small, &opts).unwrap();
    let rhs = transform_v(&f, &small, &opts).unwrap().multiply(|l| 1.0 / (z - l));
    let scale = (0..3).flat_map(|k| rhs.component(k).iter().map(|v| v.norm())).fold(0.0, f64::max);
    assert!(lhs.max_abs_diff(&rhs) / scale < 1e-4, "{}", lhs.max_abs_diff(&rhs) / scale);
}

#[test]
fn discrete_parseval_and_energy() {
    let net = net3();
    let op = assemble(&net, 6.0, 0.05).unwrap();
    let f = op.restrict(&vertex_gaussian(3, 0.6, C::new(1.0, 0.0)));
    let modal = ModalDensity::new(&op, &f);
    let direct = op.inner(&f, &f).re;
    assert!((modal.total() - direct).abs() < 1e-10 * direct);
    let u0 = gaussian_on_branch(3, 0, 3.0, 0.4, C::new(1.0, 0.0));
    let zero = NetworkFunction::zero(3).set_support(Support::Compact(0.0));
    let op = assemble(&net, 12.0, 0.05).unwrap();
    let e = |t: f64| discrete_energy(&op, &oracle_evolve(&op, &u0, &zero, t).unwrap());
    assert!((e(0.4) - e(0.0)).abs() < 1e-8 * e(0.0));
}

#[test]
fn tunnel_rejects_bands_that_propagate_on_the_branch() {
    let net = StarNetwork::new(vec![1.0; 3], vec![0.0, 4.0, 16.0]).unwrap();
    let u0 = vertex_gaussian(3, 0.5, C::new(1.0, 0.0));
    let opts = SpectralOptions::default();
    for (band, k) in [((1.0, 3.0), 0), ((3.0, 5.0), 2), ((-1.0, -0.5), 2)] {
        let r = tunnel_decay_profile(band, k, &u0, &net, 2.0, (0.5, 3.0), &opts);
        assert!(matches!(r, Err(Error::BandOutsideGap { .. })), "{band:?} {k}");
    }
}

#[test]
fn evolution_at_time_zero_returns_the_data() {
    let net = net3();
    let u0 = gaussian_on_branch(3, 1, 2.5, 0.5, C::new(1.0, 0.0));
    let v0 = gaussian_on_branch(3, 0, 2.5, 0.5, C::new(0.0, 0.5));
    let ev = Evolver::new(&u0, &v0, 1.0, &net, &SpectralOptions::default()).unwrap();
    let st = ev.state(0.0).unwrap();
    let du = st.u.combine(C::new(1.0, 0.0), &u0, C::new(-1.0, 0.0)).set_support(Support::Compact(6.0));
    let dv = st.v.combine(C::new(1.0, 0.0), &v0, C::new(-1.0, 0.0)).set_support(Support::Compact(6.0));
    assert!(norm_h(&du, &net).unwrap() < 1e-6 * norm_h(&u0, &net).unwrap());
    assert!(norm_h(&dv, &net).unwrap() < 1e-6 * norm_h(&v0, &net).unwrap());
}
