use core::fmt;

use crate::autodiff::Shape;

/// Errors produced by the core numerics.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two rasters that must share dimensions do not.
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// Raster data length does not match width × height (× channels).
    BadDataLength { expected: usize, got: usize },
    /// An image is smaller than an operation's minimum window.
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    /// Operand shapes are incompatible even under broadcasting.
    ShapeMismatch { left: Shape, right: Shape },
    /// `backward` was called on a non-scalar node.
    NonScalarLoss(Shape),
    /// Values from two different graphs were combined.
    GraphMismatch,
    /// A depth map contains negative values.
    NegativeDepth,
    /// A convolution kernel does not fit the operand.
    KernelTooLarge {
        kernel: (usize, usize),
        image: (usize, usize),
    },
    /// Rendering or initialization was asked to work on an empty cloud.
    EmptyCloud,
    /// An invalid camera was constructed (non-positive focal length or a
    /// rotation that is not special orthogonal).
    InvalidCamera,
    /// A training step produced a non-finite loss.
    NonFiniteLoss,
    /// Pruning removed every Gaussian in the scene.
    DegenerateScene,
    /// A configuration value is outside its valid range.
    InvalidConfig(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, got } => write!(
                f,
                "dimension mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::BadDataLength { expected, got } => {
                write!(f, "bad data length: expected {expected}, got {got}")
            }
            Error::ImageTooSmall { width, height, min } => {
                write!(f, "image {width}x{height} smaller than minimum {min}x{min}")
            }
            Error::ShapeMismatch { left, right } => {
                write!(f, "shape mismatch: {left} vs {right}")
            }
            Error::NonScalarLoss(shape) => {
                write!(f, "backward requires a scalar loss, got shape {shape}")
            }
            Error::GraphMismatch => write!(f, "operands belong to different graphs"),
            Error::NegativeDepth => write!(f, "depth map contains negative values"),
            Error::KernelTooLarge { kernel, image } => write!(
                f,
                "kernel {}x{} does not fit image {}x{}",
                kernel.0, kernel.1, image.0, image.1
            ),
            Error::EmptyCloud => write!(f, "operation requires a nonempty Gaussian cloud"),
            Error::InvalidCamera => write!(f, "invalid camera parameters"),
            Error::NonFiniteLoss => write!(f, "training step produced a non-finite loss"),
            Error::DegenerateScene => write!(f, "pruning removed every Gaussian"),
            Error::InvalidConfig(what) => write!(f, "invalid configuration: {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
