//! Butterworth band-pass design as second-order sections, with causal and
//! forward-backward application.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FilterError {
    #[error("band {low}..{high} Hz must lie strictly inside (0, {nyquist}) Hz")]
    Band { low: f64, high: f64, nyquist: f64 },
    #[error("filter order {0} must be a positive even number")]
    Order(usize),
}

/// How a band-pass is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Forward then backward pass; no net phase shift.
    #[default]
    ZeroPhase,
    /// Single forward pass.
    Causal,
}

/// One biquad, `a[0]` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = self.a[0] + z_inv * (self.a[1] + z_inv * self.a[2]);
        num / den
    }

    /// Steady-state transposed direct-form II state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let rhs0 = b1 - a1 * b0;
        let rhs1 = b2 - a2 * b0;
        let det = 1.0 + a1 + a2;
        [(rhs0 + rhs1) / det, ((1.0 + a1) * rhs1 - a2 * rhs0) / det]
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }
}

/// Cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64, sample_rate: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / sample_rate);
        self.sections
            .iter()
            .map(|s| s.response(z_inv))
            .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
    }

    /// Magnitude of a single pass at `freq`.
    pub fn gain(&self, freq: f64, sample_rate: f64) -> f64 {
        self.response(freq, sample_rate).norm()
    }

    fn run(&self, x: &[f64], init: Option<&[[f64; 2]]>) -> Vec<f64> {
        let mut y = x.to_vec();
        for (k, s) in self.sections.iter().enumerate() {
            let [mut z0, mut z1] = init.map_or([0.0; 2], |zi| zi[k]);
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            for v in y.iter_mut() {
                let xin = *v;
                let out = b0 * xin + z0;
                z0 = b1 * xin - a1 * out + z1;
                z1 = b2 * xin - a2 * out;
                *v = out;
            }
        }
        y
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        self.run(x, None)
    }

    /// Step-response initial state for each section, as in `sosfilt_zi`.
    fn initial_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let zi = s.step_state();
                let out = [zi[0] * scale, zi[1] * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    /// Forward-backward filtering with odd-reflection padding and
    /// step-matched initial states.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let trivial_b = self.sections.iter().filter(|s| s.b[2] == 0.0).count();
        let trivial_a = self.sections.iter().filter(|s| s.a[2] == 0.0).count();
        let pad = (3 * (2 * self.sections.len() + 1 - trivial_b.min(trivial_a))).min(n - 1);

        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.initial_state();
        let scaled = |v: f64| -> Vec<[f64; 2]> { zi.iter().map(|z| [z[0] * v, z[1] * v]).collect() };

        let fwd = self.run(&ext, Some(&scaled(ext[0])));
        let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
        let y0 = rev[0];
        rev = self.run(&rev, Some(&scaled(y0)));
        rev.reverse();
        rev[pad..pad + n].to_vec()
    }

    pub fn apply(&self, x: &[f64], mode: FilterMode) -> Vec<f64> {
        match mode {
            FilterMode::ZeroPhase => self.filtfilt(x),
            FilterMode::Causal => self.filter(x),
        }
    }
}

/// Butterworth band-pass of total `order` (an even number; `order / 2` is the
/// low-pass prototype order) with pass band `center ± halfwidth` Hz.
///
/// Band edges are pre-warped for the bilinear transform and the gain is 1 at
/// the geometric centre of the warped band.
pub fn butterworth_bandpass(
    sample_rate: f64,
    center: f64,
    halfwidth: f64,
    order: usize,
) -> Result<SosFilter, FilterError> {
    if order == 0 || !order.is_multiple_of(2) {
        return Err(FilterError::Order(order));
    }
    let (low, high) = (center - halfwidth, center + halfwidth);
    let nyquist = sample_rate / 2.0;
    if !(halfwidth > 0.0 && low > 0.0 && high < nyquist) {
        return Err(FilterError::Band { low, high, nyquist });
    }
    let n = order / 2;
    let fs2 = 2.0 * sample_rate;
    let w1 = fs2 * (PI * low / sample_rate).tan();
    let w2 = fs2 * (PI * high / sample_rate).tan();
    let w0 = (w1 * w2).sqrt();
    let bw = w2 - w1;

    // Analog prototype poles, mapped to band-pass then through the bilinear
    // transform. Keep the upper-half-plane member of each conjugate pair.
    let mut poles: Vec<Complex64> = Vec::with_capacity(n);
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta) * bw;
        let disc = (p * p - 4.0 * w0 * w0).sqrt();
        for s in [(p + disc) / 2.0, (p - disc) / 2.0] {
            let z = (fs2 + s) / (fs2 - s);
            if z.im > 0.0 {
                poles.push(z);
            }
        }
    }
    debug_assert_eq!(poles.len(), n);

    // Pair poles with zeros the way scipy's zpk2sos does for this family:
    // poles nearest the unit circle first, each taking its two nearest
    // remaining zeros; sections are emitted in reverse order.
    poles.sort_by(|a, b| (1.0 - a.norm()).total_cmp(&(1.0 - b.norm())));
    let mut zeros: Vec<f64> = std::iter::repeat_n(1.0, n)
        .chain(std::iter::repeat_n(-1.0, n))
        .collect();
    let mut sections = Vec::with_capacity(n);
    for p in &poles {
        let mut pair = [0.0; 2];
        for slot in &mut pair {
            let (idx, _) = zeros
                .iter()
                .enumerate()
                .map(|(i, &z)| (i, (Complex64::new(z, 0.0) - p).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("zeros remain");
            *slot = zeros.swap_remove(idx);
        }
        sections.push(Biquad {
            b: [1.0, -(pair[0] + pair[1]), pair[0] * pair[1]],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        });
    }
    sections.reverse();

    let mut filter = SosFilter { sections };
    let digital_center = 2.0 * (w0 / fs2).atan() * sample_rate / (2.0 * PI);
    let g = filter.gain(digital_center, sample_rate);
    for c in &mut filter.sections[0].b {
        *c /= g;
    }
    Ok(filter)
}

/// Band-pass `signal` around `center` with the given half-width and order.
pub fn bandpass(
    signal: &[f64],
    sample_rate: f64,
    center: f64,
    halfwidth: f64,
    order: usize,
    mode: FilterMode,
) -> Result<Vec<f64>, FilterError> {
    Ok(butterworth_bandpass(sample_rate, center, halfwidth, order)?.apply(signal, mode))
}
