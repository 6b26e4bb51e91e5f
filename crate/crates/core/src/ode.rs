//! Adaptive Dormand–Prince 5(4) stepping for small autonomous-in-form ODE
//! systems `y' = f(t, y)` with a fixed state dimension.

/// Outcome of a single attempted step.
#[derive(Debug, Clone, Copy)]
pub struct Step<const D: usize> {
    pub y: [f64; D],
    pub error: f64,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<const D: usize>(y: &[f64; D], terms: &[(f64, &[f64; D])], h: f64) -> [f64; D] {
    let mut out = *y;
    for (c, k) in terms {
        for d in 0..D {
            out[d] += h * c * k[d];
        }
    }
    out
}

/// One Dormand–Prince step of size `h` from `(t, y)`. The returned error is
/// the scaled RMS norm used for step control (accept when `<= 1`).
pub fn dopri_step<const D: usize, F>(f: &F, t: f64, y: &[f64; D], h: f64, rtol: f64, atol: f64) -> Step<D>
where
    F: Fn(f64, &[f64; D]) -> [f64; D],
{
    let k1 = f(t, y);
    let k2 = f(t + C2 * h, &axpy(y, &[(A21, &k1)], h));
    let k3 = f(t + C3 * h, &axpy(y, &[(A31, &k1), (A32, &k2)], h));
    let k4 = f(t + C4 * h, &axpy(y, &[(A41, &k1), (A42, &k2), (A43, &k3)], h));
    let k5 = f(t + C5 * h, &axpy(y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], h));
    let k6 = f(t + h, &axpy(y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h));
    let y5 = axpy(y, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], h);
    let k7 = f(t + h, &y5);
    let mut err = 0.0;
    for d in 0..D {
        let e = h * (E1 * k1[d] + E3 * k3[d] + E4 * k4[d] + E5 * k5[d] + E6 * k6[d] + E7 * k7[d]);
        let sc = atol + rtol * y[d].abs().max(y5[d].abs());
        err += (e / sc).powi(2);
    }
    Step { y: y5, error: (err / D as f64).sqrt() }
}

/// Integrates from `t0` through each of the increasing `stops`, calling
/// `record(i, y)` as stop `i` is reached. `halt(t, y)` is checked after
/// every accepted step; returning `true` ends the integration early.
/// Returns the final time and state.
#[allow(clippy::too_many_arguments)]
pub fn integrate_to_stops<const D: usize, F, R, H>(
    f: &F,
    t0: f64,
    y0: [f64; D],
    stops: &[f64],
    rtol: f64,
    atol: f64,
    mut record: R,
    mut halt: H,
) -> (f64, [f64; D])
where
    F: Fn(f64, &[f64; D]) -> [f64; D],
    R: FnMut(usize, &[f64; D]),
    H: FnMut(f64, &[f64; D]) -> bool,
{
    let mut t = t0;
    let mut y = y0;
    let mut h = stops.first().map(|s| (s - t0).abs().max(1e-6) * 0.5).unwrap_or(1e-3);
    for (i, &stop) in stops.iter().enumerate() {
        while t < stop {
            let remaining = stop - t;
            let step_h = h.min(remaining);
            let s = dopri_step(f, t, &y, step_h, rtol, atol);
            if s.error <= 1.0 || step_h < 1e-14 {
                t = if step_h == remaining { stop } else { t + step_h };
                y = s.y;
                if halt(t, &y) {
                    return (t, y);
                }
            }
            let factor = if s.error == 0.0 { 5.0 } else { (0.9 * s.error.powf(-0.2)).clamp(0.2, 5.0) };
            // Do not let a short landing step shrink the working step size.
            if step_h == remaining && s.error <= 1.0 {
                h = h.max(step_h * factor);
            } else {
                h = step_h * factor;
            }
        }
        record(i, &y);
    }
    (t, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_phase() {
        let f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let stops: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let mut out = vec![[0.0; 2]; stops.len()];
        integrate_to_stops(&f, 0.0, [1.0, 0.0], &stops, 1e-12, 1e-14, |i, y| out[i] = *y, |_, _| false);
        for (t, y) in stops.iter().zip(&out) {
            assert!((y[0] - t.cos()).abs() < 1e-9, "t={t}");
            assert!((y[1] + t.sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn halting_stops_early() {
        let f = |_t: f64, _y: &[f64; 1]| [1.0];
        let (t, y) = integrate_to_stops(&f, 0.0, [0.0], &[10.0], 1e-10, 1e-12, |_, _| {}, |_, y| y[0] > 2.0);
        assert!(t < 10.0 && y[0] > 2.0);
    }
}
