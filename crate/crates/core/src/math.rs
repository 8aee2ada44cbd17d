//! Numerically stable scalar primitives shared by every objective.

/// Logistic function, evaluated on the branch that never overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

/// `ln σ(x) = −softplus(−x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// `σ(x)^p` through the log domain, so tiny likelihoods keep their exponent.
#[inline]
pub fn sigmoid_pow(x: f64, p: f64) -> f64 {
    libm::exp(p * log_sigmoid(x))
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn powf(x: f64, p: f64) -> f64 {
    libm::pow(x, p)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// `⌊n·ratio⌋` for a ratio given in decimal, tolerant of the representation
/// error in products such as `100 × 0.29`.
pub fn floor_count(n: usize, ratio: f64) -> usize {
    let k = floor(n as f64 * ratio + 1e-9);
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n)
    }
}

/// `max(xs) + ln Σ exp(x − max)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + ln(xs.iter().map(|x| exp(x - m)).sum::<f64>())
}
