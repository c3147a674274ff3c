//! Two-stream point/pseudo-point network: transformer downsampling and
//! upsampling stages, cross-modal fusion links and the proposal head.

mod attention;
mod config;
mod network;
mod pft;
mod ptd;
mod rpn;
mod upsample;

pub use attention::{AttentionBlock, AttnMode};
pub use config::{AttentionModes, NetworkConfig};
pub use network::{DecoderStage, TwoStreamNet, TwoStreamOutput};
pub use pft::{CombineMode, PftOutput, PftStage};
pub use ptd::{PtdStage, StageOutput};
pub use rpn::{decode_box, encode_box, ProposalSet, RpnHead, RpnOutput, REG_CHANNELS};
pub use upsample::{interpolation_weights, FpLayer, PtuStage, INTERP_K, INTERP_POWER};
