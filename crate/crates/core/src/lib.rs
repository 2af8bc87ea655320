//! Specular highlight removal from a single linear-light color image.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled;
//! the default `parallel` feature pulls in `std` and rayon.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod cluster;
pub mod color;
pub mod eval;
pub mod image;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod recovery;
pub mod synth;

pub use color::Rgb;
pub use image::LinearImage;
