//! Thin wrapper around rustfft with per-thread plan caching.
//!
//! Complex buffers are passed around as interleaved `[re0, im0, re1, im1, ..]`
//! slices so the gradient tape can treat them as ordinary real vectors.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<PlanCache> = RefCell::new(PlanCache::default());
}

#[derive(Default)]
struct PlanCache {
    planner: Option<FftPlanner<f64>>,
    plans: HashMap<(usize, bool), Arc<dyn Fft<f64>>>,
}

fn with_plan<R>(len: usize, inverse: bool, f: impl FnOnce(&Arc<dyn Fft<f64>>) -> R) -> R {
    PLANS.with(|cell| {
        let mut cache = cell.borrow_mut();
        if !cache.plans.contains_key(&(len, inverse)) {
            let planner = cache.planner.get_or_insert_with(FftPlanner::new);
            let plan = if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            };
            cache.plans.insert((len, inverse), plan);
        }
        f(&cache.plans[&(len, inverse)])
    })
}

/// In-place transform of an interleaved complex buffer.
/// Both directions are unnormalized (rustfft convention).
pub fn transform_interleaved(buf: &mut [f64], inverse: bool) {
    assert!(buf.len() % 2 == 0, "interleaved complex buffer");
    let n = buf.len() / 2;
    let complex: &mut [Complex<f64>] = unsafe {
        std::slice::from_raw_parts_mut(buf.as_mut_ptr() as *mut Complex<f64>, n)
    };
    with_plan(n, inverse, |plan| plan.process(complex));
}

/// Forward FFT of a real signal, zero-padded to `n`. Returns interleaved complex of length 2n.
pub fn fft_real(signal: &[f64], n: usize) -> Vec<f64> {
    assert!(signal.len() <= n);
    let mut buf = vec![0.0; 2 * n];
    for (i, &s) in signal.iter().enumerate() {
        buf[2 * i] = s;
    }
    transform_interleaved(&mut buf, false);
    buf
}

/// Magnitudes of the first `bins` entries of an interleaved complex buffer.
pub fn magnitudes(interleaved: &[f64], bins: usize) -> Vec<f64> {
    (0..bins)
        .map(|k| (interleaved[2 * k].powi(2) + interleaved[2 * k + 1].powi(2)).sqrt())
        .collect()
}

/// Next power of two ≥ n (n ≥ 1).
pub fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_recovers_signal() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
        let mut buf = fft_real(&x, 16);
        transform_interleaved(&mut buf, true);
        for (i, &want) in x.iter().enumerate() {
            let got = buf[2 * i] / 16.0;
            assert!((got - want).abs() < 1e-12, "bin {i}: {got} vs {want}");
        }
    }

    #[test]
    fn sine_concentrates_in_one_bin() {
        let n = 64;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 5.0 * i as f64 / n as f64).sin())
            .collect();
        let spec = fft_real(&x, n);
        let mags = magnitudes(&spec, n / 2 + 1);
        let peak = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 5);
    }
}
