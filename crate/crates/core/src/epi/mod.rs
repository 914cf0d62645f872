//! Online importance estimation and evolving isolation masks.

mod mask;
mod probe;
mod select;
mod sensitivity;

pub use mask::{diff_masks, BitMask, IsolationMask, MaskStrategy, MaskTransition};
pub use probe::{probe_static_mask, ProbeConfig, ProbeOutcome};
pub use select::{generate_mask, refresh_policy, select_mask, target_count, top_k, RefreshDecision};
pub use sensitivity::{normalize_layerwise, SensitivityState, NORMALIZE_EPS};
