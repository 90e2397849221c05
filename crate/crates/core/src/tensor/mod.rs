//! Dense tensors with a recorded-graph reverse-mode autodiff tape.
//!
//! Layout convention: volumes are `[batch, channels, x, y, z]`, row-major
//! with `z` fastest. Vectors are `[batch, features]`. Forward/training runs
//! in `f32`; the same code paths are generic over [`Scalar`] so gradient
//! checks can run in `f64`.

mod adam;
mod ops;
mod tape;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use ops::{conv_out_dim, Padding};
pub use tape::{BackwardMode, BnMode, BnState, Tape, TensorId};

use crate::error::{CoreError, Result};

/// Element type the tape can differentiate through.
pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Run `f` over two reusable per-thread scratch slices. Convolution
    /// lowering borrows these instead of allocating multi-megabyte buffers
    /// per call.
    fn with_scratch<R>(n1: usize, n2: usize, f: impl FnOnce(&mut [Self], &mut [Self]) -> R) -> R;
}

macro_rules! impl_scalar {
    ($ty:ty, $tls:ident) => {
        impl Scalar for $ty {
            fn from_f64(v: f64) -> Self {
                v as $ty
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn with_scratch<R>(
                n1: usize,
                n2: usize,
                f: impl FnOnce(&mut [Self], &mut [Self]) -> R,
            ) -> R {
                thread_local! {
                    static $tls: std::cell::RefCell<Vec<$ty>> =
                        const { std::cell::RefCell::new(Vec::new()) };
                }
                $tls.with(|cell| {
                    let mut buf = cell.borrow_mut();
                    if buf.len() < n1 + n2 {
                        buf.resize(n1 + n2, 0.0);
                    }
                    let (a, rest) = buf.split_at_mut(n1);
                    f(a, &mut rest[..n2])
                })
            }
        }
    };
}

impl_scalar!(f32, SCRATCH_F32);
impl_scalar!(f64, SCRATCH_F64);

/// A dense n-dimensional value. Plain data; autodiff happens on the [`Tape`].
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CoreError::ShapeMismatch {
                ctx: "Tensor::new",
                expected: format!("{} elements for shape {:?}", n, shape),
                got: format!("{}", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Cast elementwise; used by the f64 gradient-check path.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

pub(crate) fn dims5(shape: &[usize], ctx: &'static str) -> Result<[usize; 5]> {
    if shape.len() != 5 {
        return Err(CoreError::ShapeMismatch {
            ctx,
            expected: "rank-5 [b, c, x, y, z]".into(),
            got: format!("{:?}", shape),
        });
    }
    Ok([shape[0], shape[1], shape[2], shape[3], shape[4]])
}
