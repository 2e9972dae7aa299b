//! Cubic interpolation: natural splines for potential matrix elements and
//! monotone (Fritsch-Carlson) cubics for trajectory resampling.

/// Second derivatives of the natural cubic spline through `(x, y)`.
///
/// Requires `x` strictly increasing with at least 4 points (callers enforce
/// that as a model invariant).
pub fn natural_second_derivs(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 3 && y.len() == n);
    let mut y2 = vec![0.0; n];
    let mut u = vec![0.0; n - 1];
    for i in 1..n - 1 {
        let sig = (x[i] - x[i - 1]) / (x[i + 1] - x[i - 1]);
        let p = sig * y2[i - 1] + 2.0;
        y2[i] = (sig - 1.0) / p;
        let dy1 = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
        let dy0 = (y[i] - y[i - 1]) / (x[i] - x[i - 1]);
        u[i] = (6.0 * (dy1 - dy0) / (x[i + 1] - x[i - 1]) - sig * u[i - 1]) / p;
    }
    for i in (0..n - 1).rev() {
        y2[i] = y2[i] * y2[i + 1] + u[i];
    }
    y2
}

/// Evaluate a cubic spline on segment `seg` (so `x[seg] <= r <= x[seg+1]`).
#[inline]
pub fn eval_segment(x: &[f64], y: &[f64], y2: &[f64], seg: usize, r: f64) -> f64 {
    let h = x[seg + 1] - x[seg];
    let a = (x[seg + 1] - r) / h;
    let b = (r - x[seg]) / h;
    a * y[seg]
        + b * y[seg + 1]
        + ((a * a * a - a) * y2[seg] + (b * b * b - b) * y2[seg + 1]) * (h * h) / 6.0
}

/// Index of the segment containing `r`, clamped to the grid range.
#[inline]
pub fn find_segment(x: &[f64], r: f64) -> usize {
    match x.binary_search_by(|v| v.partial_cmp(&r).unwrap()) {
        Ok(i) => i.min(x.len() - 2),
        Err(0) => 0,
        Err(i) => (i - 1).min(x.len() - 2),
    }
}

/// Monotonicity-preserving piecewise cubic (Fritsch-Carlson slopes).
///
/// Used to resample trajectories R(t) on arbitrary time grids without the
/// overshoot a natural spline can produce near the turning point.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n);
        let mut d = vec![0.0; n];
        if n == 2 {
            let s = (y[1] - y[0]) / (x[1] - x[0]);
            d[0] = s;
            d[1] = s;
            return Self { x, y, d };
        }
        let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        let s: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        for i in 1..n - 1 {
            if s[i - 1] * s[i] <= 0.0 {
                d[i] = 0.0;
            } else {
                // weighted harmonic mean of neighbouring secants
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                d[i] = (w1 + w2) / (w1 / s[i - 1] + w2 / s[i]);
            }
        }
        d[0] = edge_slope(h[0], h[1], s[0], s[1]);
        d[n - 1] = edge_slope(h[n - 2], h[n - 3], s[n - 2], s[n - 3]);
        Self { x, y, d }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let seg = find_segment(&self.x, t);
        let h = self.x[seg + 1] - self.x[seg];
        let u = ((t - self.x[seg]) / h).clamp(0.0, 1.0);
        let (y0, y1) = (self.y[seg], self.y[seg + 1]);
        let (d0, d1) = (self.d[seg], self.d[seg + 1]);
        let u2 = u * u;
        let u3 = u2 * u;
        y0 * (2.0 * u3 - 3.0 * u2 + 1.0)
            + h * d0 * (u3 - 2.0 * u2 + u)
            + y1 * (-2.0 * u3 + 3.0 * u2)
            + h * d1 * (u3 - u2)
    }

    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.x.last().unwrap()
    }
}

fn edge_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    // Three-point estimate, clamped to keep the end segment monotone.
    let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if d * s0 <= 0.0 {
        0.0
    } else if s0 * s1 <= 0.0 && d.abs() > 3.0 * s0.abs() {
        3.0 * s0
    } else {
        d
    }
}
