//! Camera ISP forward model, its analytic per-pixel Jacobian, and a two-stage
//! robust inverse that maps a perturbed sRGB image back to linear RGB around a
//! known linear estimate.
//!
//! ```
//! use ispinv::{forward_isp, invert_image, InversionConfig, IspParams, LinearImage};
//!
//! let params = IspParams::identity();
//! let l_b = LinearImage::filled(2, 2, [0.2, 0.3, 0.4]).unwrap();
//! let s_b = forward_isp(&l_b, &params).unwrap();
//! let (l_d, report) = invert_image(&s_b, Some(&s_b), &l_b, &params, &InversionConfig::default()).unwrap();
//! assert_eq!(l_d, l_b);
//! assert_eq!(report.n_pixels, 4);
//! ```

pub mod check;
pub mod degradation;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod isp;
pub mod jacobian;
pub mod linalg;
pub mod metrics;
pub mod naive;
pub mod robust;
pub mod svd;
pub mod synth;

pub use degradation::{degradation_map, downsample, mosaic, DegradationOptions, DownsampleKernel};
pub use error::{IspError, Result};
pub use image::{
    BayerPattern, DegradationMap, LinearImage, RawImage, ResidualImage, RgbImage, SrgbImage,
};
pub use isp::{forward_isp, forward_pixel, IspParams};
pub use jacobian::{jacobian_at, jacobian_image, PixelJacobian};
pub use metrics::{psnr, Decibels, Percentiles};
pub use naive::naive_invert_image;
pub use robust::{
    blend_lambda_r, first_order_update, invert_image, solve_residual, tsvd_update,
    InversionConfig, InversionReport, Stages,
};
pub use svd::{svd3, Svd3};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
