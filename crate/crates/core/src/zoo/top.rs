use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, NodeId};
use crate::layers::{Activation, LayerSpec};

/// Prefix for every node a head adds, keeping head and embedding names apart.
pub const TOP_PREFIX: &str = "top_";

/// Task-specific layers appended after an embedding.
#[derive(Debug, Clone, PartialEq)]
pub enum TopModule {
    /// flatten, dense(horizon * features), reshape `[horizon, features]`
    Forecast {
        horizon: usize,
        features: usize,
        activation: Activation,
    },
    /// flatten, dropout, dense 20, dense 10, dense(classes) softmax
    Classify { classes: usize, dropout: f64 },
    /// flatten, dense 32, dense 64, dense(features), dense(steps * features), reshape
    Anomaly { steps: usize, features: usize },
    Custom(Vec<LayerSpec>),
}

fn positive(what: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Param(format!("{what} must be positive")));
    }
    Ok(())
}

impl TopModule {
    /// Forecast head with ReLU output units.
    pub fn forecast(horizon: usize, features: usize) -> Result<Self> {
        positive("forecast horizon", horizon)?;
        positive("forecast features", features)?;
        Ok(TopModule::Forecast {
            horizon,
            features,
            activation: Activation::Relu,
        })
    }

    pub fn classify(classes: usize) -> Result<Self> {
        positive("class count", classes)?;
        Ok(TopModule::Classify {
            classes,
            dropout: 0.2,
        })
    }

    pub fn anomaly(steps: usize, features: usize) -> Result<Self> {
        positive("anomaly steps", steps)?;
        positive("anomaly features", features)?;
        Ok(TopModule::Anomaly { steps, features })
    }

    pub fn custom(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Param("custom head needs at least one layer".into()));
        }
        Ok(TopModule::Custom(layers))
    }

    /// Replaces the forecast output activation; other heads are unchanged.
    pub fn with_activation(self, activation: Activation) -> Self {
        match self {
            TopModule::Forecast {
                horizon, features, ..
            } => TopModule::Forecast {
                horizon,
                features,
                activation,
            },
            other => other,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TopModule::Forecast { .. } => "forecast",
            TopModule::Classify { .. } => "classify",
            TopModule::Anomaly { .. } => "anomaly",
            TopModule::Custom(_) => "custom",
        }
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        match self {
            TopModule::Forecast {
                horizon,
                features,
                activation,
            } => vec![
                LayerSpec::Flatten,
                LayerSpec::dense(horizon * features, *activation),
                LayerSpec::Reshape {
                    shape: vec![*horizon, *features],
                },
            ],
            TopModule::Classify { classes, dropout } => vec![
                LayerSpec::Flatten,
                LayerSpec::dropout(*dropout),
                LayerSpec::dense(20, Activation::Relu),
                LayerSpec::dense(10, Activation::Relu),
                LayerSpec::dense(*classes, Activation::Softmax),
            ],
            TopModule::Anomaly { steps, features } => vec![
                LayerSpec::Flatten,
                LayerSpec::dense(32, Activation::Relu),
                LayerSpec::dense(64, Activation::Relu),
                LayerSpec::dense(*features, Activation::Relu),
                LayerSpec::dense(steps * features, Activation::Linear),
                LayerSpec::Reshape {
                    shape: vec![*steps, *features],
                },
            ],
            TopModule::Custom(layers) => layers.clone(),
        }
    }

    pub(crate) fn attach(&self, g: &mut GraphBuilder, from: NodeId) -> Result<NodeId> {
        let mut at = from;
        for spec in self.layers() {
            at = g.add_prefixed(TOP_PREFIX, spec, &[at])?;
        }
        Ok(at)
    }
}
