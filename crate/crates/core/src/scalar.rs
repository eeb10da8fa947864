use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar type the engine and model are generic over.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from an `f64` constant.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Double-double precision, for reference evaluations.
impl Scalar for twofloat::TwoFloat {
    // the crate's `FromPrimitive` truncates floats to integers
    fn lit(v: f64) -> Self {
        Self::from(v)
    }

    fn to_f64_lossy(self) -> f64 {
        self.hi() + self.lo()
    }
}
