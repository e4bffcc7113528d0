//! Floating-point abstraction shared by the optics, actuation and fitting code.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Real scalar usable by the model and fitting routines: `f32` or `f64`.
pub trait Scalar:
    'static + Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync
{
    /// Lossy conversion from an `f64` literal or measurement.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn pi() -> Self {
        Self::of(std::f64::consts::PI)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Serde adapter writing non-finite values as `null` and reading `null` back as NaN,
/// so fit reports with undefined uncertainties stay valid JSON.
pub mod nullable {
    use super::Scalar;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Scalar + Serialize, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            v.serialize(s)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, T: Scalar + Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<T, D::Error> {
        Ok(Option::<T>::deserialize(d)?.unwrap_or_else(T::nan))
    }
}

/// [`nullable`] for every element of a vector.
pub mod nullable_vec {
    use super::Scalar;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Scalar + Serialize, S: Serializer>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
        let out: Vec<Option<T>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, T: Scalar + Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<Vec<T>, D::Error> {
        let v = Vec::<Option<T>>::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or_else(T::nan)).collect())
    }
}
