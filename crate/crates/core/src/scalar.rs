//! Scalar types used for embeddings, similarity scores and persisted vectors.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of an embedding index.
///
/// Implemented for `f32` and `f64`. The persisted vector block stores values
/// at the native width of the scalar, little-endian.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Tag written to the persisted index header.
    const DTYPE: &'static str;
    /// Width in bytes of one encoded value.
    const WIDTH: usize;

    fn write_le(self, out: &mut Vec<u8>);

    /// Decodes one value; `bytes` must hold exactly `WIDTH` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $tag:literal) => {
        impl Scalar for $t {
            const DTYPE: &'static str = $tag;
            const WIDTH: usize = std::mem::size_of::<$t>();

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(bytes);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_scalar!(f32, "f32");
impl_scalar!(f64, "f64");

/// Dot product accumulated left to right.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn l2_norm<S: Scalar>(v: &[S]) -> S {
    dot(v, v).sqrt()
}

/// Cosine similarity clamped to `[-1, 1]`; zero vectors score 0.
pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    if a.len() != b.len() {
        return S::zero();
    }
    let denom = l2_norm(a) * l2_norm(b);
    if denom == S::zero() {
        return S::zero();
    }
    (dot(a, b) / denom).max(-S::one()).min(S::one())
}
