//! Exercises the C entry points the way a foreign caller would: raw
//! pointers, caller-allocated buffers, explicit status codes.

use std::ffi::CStr;
use truncdiff::batch::SampleBatch;
use truncdiff::denoiser::AnalyticDenoiser;
use truncdiff::diffusion::{sample_chain, SamplerKind, SamplerSpec};
use truncdiff::metrics::energy_distance;
use truncdiff::mixture::GaussianMixture;
use truncdiff::rng::child_seed;
use truncdiff::schedule::NoiseSchedule;
use truncdiff_ffi::*;

fn two_mode() -> *mut TdMixture {
    let weights = [0.5f64, 0.5];
    let means = [-3.0f64, 0.0, 3.0, 0.0];
    let vars = [1.0f64, 1.0, 1.0, 1.0];
    let mut out: *mut TdMixture = std::ptr::null_mut();
    let st = td_mixture_new(2, 2, weights.as_ptr(), means.as_ptr(), vars.as_ptr(), &mut out);
    assert_eq!(st, TdStatus::Ok);
    out
}

#[test]
fn schedule_round_trip_matches_core() {
    let mut handle: *mut TdSchedule = std::ptr::null_mut();
    assert_eq!(
        td_schedule_new_linear(1000, 1e-4, 0.02, &mut handle),
        TdStatus::Ok
    );
    assert_eq!(td_schedule_len(handle), 1000);
    let core = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    for t in [0usize, 1, 500, 1000] {
        let mut ab = 0.0;
        assert_eq!(td_schedule_alpha_bar(handle, t, &mut ab), TdStatus::Ok);
        assert_eq!(ab.to_bits(), core.alpha_bar(t).to_bits());
    }
    let mut sig = 0.0;
    assert_eq!(td_schedule_sigma(handle, 1, &mut sig), TdStatus::Ok);
    assert_eq!(sig, 0.0);
    td_schedule_free(handle);
}

#[test]
fn invalid_schedule_reports_param_error_with_message() {
    let mut handle: *mut TdSchedule = std::ptr::null_mut();
    let st = td_schedule_new_linear(0, 1e-4, 0.02, &mut handle);
    assert_eq!(st, TdStatus::Param);
    let msg = unsafe { CStr::from_ptr(td_last_error_message()) };
    assert!(msg.to_str().unwrap().contains("T"), "{msg:?}");
}

#[test]
fn mixture_sampling_matches_core_bitwise() {
    let m = two_mode();
    let mut buf = vec![0.0f64; 100 * 2];
    assert_eq!(td_mixture_sample(m, 100, 42, buf.as_mut_ptr()), TdStatus::Ok);
    let gm = GaussianMixture::new(
        vec![0.5, 0.5],
        vec![vec![-3.0, 0.0], vec![3.0, 0.0]],
        vec![vec![1.0, 1.0], vec![1.0, 1.0]],
    )
    .unwrap();
    let core = gm.sample(100, 42).unwrap();
    assert_eq!(buf, core.as_slice());
    td_mixture_free(m);
}

#[test]
fn chain_through_abi_matches_core_bitwise() {
    let m = two_mode();
    let mut s: *mut TdSchedule = std::ptr::null_mut();
    assert_eq!(td_schedule_new_linear(200, 5e-4, 0.1, &mut s), TdStatus::Ok);
    let n = 64;
    let mut buf = vec![0.0f64; n * 2];
    assert_eq!(
        td_sample_chain(m, s, TdSampler::Ddim, 200, 20, n, 7, buf.as_mut_ptr()),
        TdStatus::Ok
    );

    let gm = GaussianMixture::new(
        vec![0.5, 0.5],
        vec![vec![-3.0, 0.0], vec![3.0, 0.0]],
        vec![vec![1.0, 1.0], vec![1.0, 1.0]],
    )
    .unwrap();
    let sched = NoiseSchedule::linear(200, 5e-4, 0.1).unwrap();
    let den = AnalyticDenoiser {
        mixture: &gm,
        schedule: &sched,
    };
    let start = SampleBatch::standard_normal(n, 2, child_seed(7, 0));
    let spec = SamplerSpec {
        kind: SamplerKind::Ddim,
        t_start: 200,
        n_steps: 20,
    };
    let core = sample_chain(&den, None, &spec, &start, &sched, child_seed(7, 1)).unwrap();
    assert_eq!(buf, core.as_slice());

    td_schedule_free(s);
    td_mixture_free(m);
}

#[test]
fn truncation_identity_at_zero_through_abi() {
    let m = two_mode();
    let mut s: *mut TdSchedule = std::ptr::null_mut();
    assert_eq!(td_schedule_new_linear(100, 1e-4, 0.02, &mut s), TdStatus::Ok);
    let coarse: Vec<f64> = (0..20).map(|i| i as f64 * 0.25 - 2.0).collect();
    let mut out = vec![0.0f64; 20];
    assert_eq!(
        td_truncated_sample(m, s, TdSampler::Ddim, 0, 1, coarse.as_ptr(), 10, 3, out.as_mut_ptr()),
        TdStatus::Ok
    );
    assert_eq!(coarse, out);
    td_schedule_free(s);
    td_mixture_free(m);
}

#[test]
fn energy_distance_matches_core() {
    let a = [0.0f64, 2.0];
    let b = [1.0f64];
    let mut e = 0.0;
    assert_eq!(
        td_energy_distance(a.as_ptr(), 2, b.as_ptr(), 1, 1, &mut e),
        TdStatus::Ok
    );
    let ca = SampleBatch::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
    let cb = SampleBatch::from_rows(&[vec![1.0]]).unwrap();
    assert_eq!(e, energy_distance(&ca, &cb).unwrap());
    assert_eq!(e, 1.0);
}

#[test]
fn blend_solves_single_pixel_system() {
    // 3x3, center unknown, f* zero boundary, h spike: solution 2.0.
    let f_star = [0.0f64; 9];
    let mut h = [8.0f64; 9];
    h[4] = 10.0;
    let mut omega = [0u8; 9];
    omega[4] = 1;
    let mut out = [0.0f64; 9];
    assert_eq!(
        td_poisson_blend(
            3,
            3,
            f_star.as_ptr(),
            h.as_ptr(),
            omega.as_ptr(),
            TdSolver::Dense,
            1e-8,
            0,
            out.as_mut_ptr()
        ),
        TdStatus::Ok
    );
    assert!((out[4] - 2.0).abs() < 1e-12);
    for (i, v) in out.iter().enumerate() {
        if i != 4 {
            assert_eq!(*v, 0.0);
        }
    }
}

#[test]
fn null_pointers_are_rejected_not_crashing() {
    let mut e = 0.0;
    assert_eq!(
        td_energy_distance(std::ptr::null(), 2, std::ptr::null(), 1, 1, &mut e),
        TdStatus::Param
    );
    assert_eq!(td_schedule_len(std::ptr::null()), 0);
    td_schedule_free(std::ptr::null_mut());
    td_mixture_free(std::ptr::null_mut());
}

#[test]
fn generated_header_covers_the_surface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/truncdiff.h");
    let text = std::fs::read_to_string(header).expect("header generated at build time");
    for symbol in [
        "td_schedule_new_linear",
        "td_schedule_free",
        "td_mixture_new",
        "td_sample_chain",
        "td_truncated_sample",
        "td_energy_distance",
        "td_poisson_blend",
        "td_last_error_message",
        "TdStatus",
        "TdSampler",
        "TdSolver",
    ] {
        assert!(text.contains(symbol), "header is missing {symbol}");
    }
}
