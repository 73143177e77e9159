//! Explicit-weight constructions: hand-built transformer layers that
//! realize gradient descent, the Newton-Schulz iteration, token copying
//! and the surrounding pre/post processing, each verified against an
//! independent oracle in `verify`.

pub mod copy_layer;
pub mod decoder;
pub mod ffn;
pub mod gd;
pub mod layout;
pub mod newton;
pub mod quasi;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConstructionError {
    #[error("invalid construction scale: {0}")]
    Scale(String),
    #[error("{what}: band holds {band} rows but {needed} are needed")]
    BandMismatch {
        what: &'static str,
        band: usize,
        needed: usize,
    },
    #[error("alpha {alpha} outside (0, {alpha_max}]")]
    AlphaOutOfRange { alpha: f64, alpha_max: f64 },
    #[error(transparent)]
    Quasi(#[from] quasi::QuasiError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, ConstructionError>;

/// Scale constants shared by the constructions: the score pin C, the
/// coupling c, the positional attention temperature tau and the realized
/// step size eta (absorbed into feed-forward weights).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstructionScale {
    pub big_c: f64,
    pub small_c: f64,
    pub tau: f64,
    pub eta: f64,
}

impl Default for ConstructionScale {
    fn default() -> Self {
        ConstructionScale {
            big_c: 30.0,
            small_c: 1e-6,
            tau: 50.0,
            eta: 0.1,
        }
    }
}

impl ConstructionScale {
    pub fn validate(&self) -> Result<()> {
        if !(self.big_c > 0.0 && self.big_c <= 700.0) {
            return Err(ConstructionError::Scale(format!(
                "C = {} must lie in (0, 700] so exp(C) stays finite at 64-bit",
                self.big_c
            )));
        }
        if self.small_c <= 0.0 {
            return Err(ConstructionError::Scale(format!(
                "c = {} must be positive",
                self.small_c
            )));
        }
        if self.tau <= 0.0 {
            return Err(ConstructionError::Scale(format!(
                "tau = {} must be positive",
                self.tau
            )));
        }
        if self.eta <= 0.0 {
            return Err(ConstructionError::Scale(format!(
                "eta = {} must be positive",
                self.eta
            )));
        }
        Ok(())
    }
}

pub use copy_layer::build_copy_layer;
pub use decoder::build_decoder_gd_layer;
pub use gd::{
    build_gd_loop_layer, build_label_broadcast_layer, build_phi_layers, build_post_readout_layer,
    gd_oracle, label_band_readout, RepresentationModel,
};
pub use layout::{copy_layout, decoder_layout, gd_layout, newton_layout};
pub use newton::{build_newton_blocks, NewtonBlocks};
pub use quasi::{orthonormal, quasi_orthogonal, QuasiOrthogonal};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_validation() {
        assert!(ConstructionScale::default().validate().is_ok());
        let too_big = ConstructionScale {
            big_c: 800.0,
            ..Default::default()
        };
        assert!(too_big.validate().is_err(), "exp(800) would overflow");
        let bad_c = ConstructionScale {
            small_c: 0.0,
            ..Default::default()
        };
        assert!(bad_c.validate().is_err());
    }
}
