//! Polaron-frame TCL2 dynamics of a two-level system coupled to a spin bath and a boson bath.

pub mod bath;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod output;
pub mod quadrature;
pub mod scenario;
pub mod sectors;
pub mod special;
pub mod spinbath;
pub mod tcl;
pub mod tls;

pub use bath::{BathKernels, BathParams, Channel, Mode, PolaronConstants, Spectrum, TimeGrid};
pub use error::{Error, Result};
pub use linalg::Mat2;
pub use tls::{InitialTls, SystemParams};
