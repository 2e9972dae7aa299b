//! Bessel functions of the first kind, J₀..J_N, for the Chebyshev propagator
//! expansion coefficients.

/// All of J₀(x)..J_{n_max}(x) for x ≥ 0, by Miller's backward recurrence
/// normalized with J₀ + 2·Σ J_{2k} = 1.
pub fn bessel_j_array(x: f64, n_max: usize) -> Vec<f64> {
    assert!(x >= 0.0 && x.is_finite());
    if x == 0.0 {
        let mut out = vec![0.0; n_max + 1];
        out[0] = 1.0;
        return out;
    }
    if x < 1e-6 {
        return small_argument_series(x, n_max);
    }

    // Start the downward recurrence well above both the requested order and
    // the turnover point k ~ x; the margin sets the seeding error (~1e-15
    // here).
    let start = {
        let base = n_max.max(x.ceil() as usize);
        let m = base + 24 + (160.0 * (base as f64 + 1.0)).sqrt().ceil() as usize;
        m + (m & 1) // even
    };

    let mut out = vec![0.0; n_max + 1];
    let mut jp = 0.0_f64; // J_{k+1}
    let mut j = 1e-300_f64; // J_k, arbitrary seed
    let mut sum = 0.0_f64;
    for k in (0..=start).rev() {
        let jm = (2.0 * (k as f64 + 1.0) / x) * j - jp; // J_k from J_{k+1}, J_{k+2}
        jp = j;
        j = jm;
        if k % 2 == 0 && k > 0 {
            sum += 2.0 * j;
        }
        if k <= n_max {
            out[k] = j;
        }
        if j.abs() > 1e250 {
            // rescale everything accumulated so far
            let scale = 1e-250;
            j *= scale;
            jp *= scale;
            sum *= scale;
            for v in out.iter_mut() {
                *v *= scale;
            }
        }
    }
    sum += j; // the k = 0 term, excluded from the even-k accumulation above
    let norm = 1.0 / sum;
    for v in out.iter_mut() {
        *v *= norm;
    }
    out
}

fn small_argument_series(x: f64, n_max: usize) -> Vec<f64> {
    // J_k(x) ≈ (x/2)^k / k! · (1 - (x/2)² / (k+1)), ample at |x| < 1e-6.
    let half = 0.5 * x;
    let mut out = vec![0.0; n_max + 1];
    let mut lead = 1.0_f64; // (x/2)^k / k!
    for (k, v) in out.iter_mut().enumerate() {
        *v = lead * (1.0 - half * half / (k as f64 + 1.0));
        lead *= half / (k as f64 + 1.0);
        if lead == 0.0 {
            break;
        }
    }
    out
}
