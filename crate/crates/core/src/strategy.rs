//! Optimization strategies: ordered natural-language transformation actions.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformationAction {
    pub transformation: String,
    pub change: String,
    /// Verbatim text the action was parsed from.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub raw: String,
}

impl TransformationAction {
    pub fn new(transformation: impl Into<String>, change: impl Into<String>) -> Self {
        TransformationAction {
            transformation: transformation.into(),
            change: change.into(),
            raw: String::new(),
        }
    }

    /// Text matched against the knowledge base.
    pub fn query_text(&self) -> String {
        format!("{} {}", self.transformation, self.change)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initial,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizationStrategy {
    pub stage: Stage,
    pub actions: Vec<TransformationAction>,
    /// The model output region the actions came from (the whole `<advice>`
    /// block for refined strategies).
    pub raw_text: String,
}

impl OptimizationStrategy {
    pub fn initial(actions: Vec<TransformationAction>, raw_text: impl Into<String>) -> Self {
        OptimizationStrategy {
            stage: Stage::Initial,
            actions,
            raw_text: raw_text.into(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("strategy serializes")
    }

    /// Text for the `<advice>` slot: the verbatim model output when present,
    /// otherwise the actions re-rendered in step format.
    pub fn as_advice(&self) -> String {
        if !self.raw_text.trim().is_empty() {
            return self.raw_text.clone();
        }
        self
                .actions
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    format!(
                        "<step>\n{}. **Transformation**: {}\n   **Change**: {}\n</step>",
                        i + 1,
                        a.transformation,
                        a.change
                    )
                })
            .collect::<Vec<_>>()
            .join("\n")
    }
}
