//! Nodal injections from SCADA telemetry.
//!
//! Offline: hourly profiles (standing in for smart-meter history) are
//! summarized by per-channel Gaussian mixtures, Monte-Carlo scenarios drawn
//! from them are run through the power flow to build `(z, y)` training
//! pairs, a network is fit to map SCADA vectors `z` to injections `y`, and
//! a mixture over its holdout errors sets the weight of every generated
//! injection. Online: each SCADA tick is mapped to injection measurements.

mod distribution;
mod gmm;
mod mlp;
mod model;
mod profiles;
mod training;

use serde::{Deserialize, Serialize};

use crate::grid::{GridModel, NodeId, NodeKind};
use crate::telemetry::MeasurementKind;

pub use distribution::{fit_distribution, InjectionDistribution};
pub use gmm::{fit_gmm, fit_gmm_scalar, GmmFit, GmmModel, GmmOptions};
pub use mlp::{gradient_check, train_mlp, Gradients, MlpHyper, MlpModel, TrainReport};
pub use model::{
    drift_check, fit_error_gmm, infer_injections, train_injection_model, InjectionModel, InjectionWeights,
    TrainConfig, MODEL_FORMAT, MODEL_VERSION, SIGMA_FLOOR,
};
pub use profiles::{daily_shape, gen_load_profiles, solar_shape, LoadProfiles, ProfileParams};
pub use training::{build_training_set, TrainingSet};

/// One generated injection: active or reactive power at a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Channel {
    pub node: NodeId,
    pub reactive: bool,
}

impl Channel {
    pub fn kind(&self, grid: &GridModel) -> MeasurementKind {
        let dc = grid
            .node_index(self.node)
            .map(|i| grid.nodes()[i].kind == NodeKind::Dc)
            .unwrap_or(false);
        match (dc, self.reactive) {
            (true, _) => MeasurementKind::DcPInj(self.node),
            (false, false) => MeasurementKind::AcPInj(self.node),
            (false, true) => MeasurementKind::AcQInj(self.node),
        }
    }

    /// `node:p` or `node:q`.
    pub fn label(&self) -> String {
        format!("{}:{}", self.node, if self.reactive { "q" } else { "p" })
    }
}

/// Every load/generation injection in node order: `P` and `Q` on AC nodes,
/// `P` on DC nodes.
pub fn injection_channels(grid: &GridModel) -> Vec<Channel> {
    let mut out = Vec::new();
    for i in grid.injection_nodes() {
        let n = &grid.nodes()[i];
        out.push(Channel {
            node: n.id,
            reactive: false,
        });
        if n.kind == NodeKind::Ac {
            out.push(Channel {
                node: n.id,
                reactive: true,
            });
        }
    }
    out
}
