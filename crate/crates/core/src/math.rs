//! Scalar type and the handful of float functions the crate needs without `std`.

#[cfg(not(feature = "wide"))]
pub type Real = f32;
#[cfg(feature = "wide")]
pub type Real = f64;

/// Name written into checkpoint manifests for the active storage type.
#[cfg(not(feature = "wide"))]
pub const DTYPE: &str = "f32";
#[cfg(feature = "wide")]
pub const DTYPE: &str = "f64";

#[cfg(not(feature = "wide"))]
mod imp {
    use super::Real;
    #[inline]
    pub fn exp(x: Real) -> Real {
        libm::expf(x)
    }
    #[inline]
    pub fn ln(x: Real) -> Real {
        libm::logf(x)
    }
    #[inline]
    pub fn sqrt(x: Real) -> Real {
        libm::sqrtf(x)
    }
    #[inline]
    pub fn erf(x: Real) -> Real {
        libm::erff(x)
    }
    #[inline]
    pub fn sin(x: Real) -> Real {
        libm::sinf(x)
    }
    #[inline]
    pub fn cos(x: Real) -> Real {
        libm::cosf(x)
    }
    #[inline]
    pub fn powf(x: Real, y: Real) -> Real {
        libm::powf(x, y)
    }
}

#[cfg(feature = "wide")]
mod imp {
    use super::Real;
    #[inline]
    pub fn exp(x: Real) -> Real {
        libm::exp(x)
    }
    #[inline]
    pub fn ln(x: Real) -> Real {
        libm::log(x)
    }
    #[inline]
    pub fn sqrt(x: Real) -> Real {
        libm::sqrt(x)
    }
    #[inline]
    pub fn erf(x: Real) -> Real {
        libm::erf(x)
    }
    #[inline]
    pub fn sin(x: Real) -> Real {
        libm::sin(x)
    }
    #[inline]
    pub fn cos(x: Real) -> Real {
        libm::cos(x)
    }
    #[inline]
    pub fn powf(x: Real, y: Real) -> Real {
        libm::pow(x, y)
    }
}

pub use imp::*;

/// Converts an `f64` constant into the storage type.
#[inline]
pub fn real(x: f64) -> Real {
    x as Real
}
