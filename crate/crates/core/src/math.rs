//! Thin wrappers over `libm` so the rest of the crate stays `no_std`-clean.

pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub(crate) fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub(crate) fn log10(x: f64) -> f64 {
    libm::log10(x)
}

pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

pub(crate) fn sin(x: f64) -> f64 {
    libm::sin(x)
}

pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]; requires `y` in (0, 1).
pub(crate) fn logit(y: f64) -> f64 {
    ln(y / (1.0 - y))
}

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        exp(x)
    } else {
        ln_1p(exp(x))
    }
}

/// Inverse of [`softplus`]; requires `y > 0`.
pub(crate) fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        ln(libm::expm1(y))
    }
}
