use serde::{Deserialize, Serialize};

use crate::arch::{build_model, count_flops, count_params, ModelConfig};
use crate::error::Result;

pub const MAX_PARAMS: usize = 2_000_000;
pub const MAX_GFLOPS: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateReason {
    Params,
    Gflops,
}

/// Outcome of the pre-training cost check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub n_params: usize,
    pub gflops: f64,
    /// Empty when the model may be trained.
    pub reasons: Vec<GateReason>,
}

impl GateVerdict {
    pub fn passes(&self) -> bool {
        self.reasons.is_empty()
    }

    /// A verdict for points with no architecture cost.
    pub fn free() -> Self {
        Self {
            n_params: 0,
            gflops: 0.0,
            reasons: Vec::new(),
        }
    }
}

/// Terminates strictly above either budget; both reasons are kept.
pub fn gate_costs(n_params: usize, gflops: f64) -> GateVerdict {
    let mut reasons = Vec::new();
    if n_params > MAX_PARAMS {
        reasons.push(GateReason::Params);
    }
    if gflops > MAX_GFLOPS || gflops.is_nan() {
        reasons.push(GateReason::Gflops);
    }
    GateVerdict {
        n_params,
        gflops,
        reasons,
    }
}

/// Builds the network for `cfg` and gates on its measured size and
/// compute at `cfg.input_size`. An unbuildable config is an error.
pub fn constraint_gate(cfg: &ModelConfig) -> Result<GateVerdict> {
    let m = build_model::<f32>(cfg, 0)?;
    let flops = count_flops(&m, cfg.input_size)?;
    Ok(gate_costs(count_params(&m), flops / 1e9))
}
