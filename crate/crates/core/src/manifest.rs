//! Record of one selection round.

use serde::Serialize;

use crate::config::{SelectionConfig, Strategy};
use crate::strategies::{Diagnostics, StrategyOutput};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionManifest {
    pub tool_version: String,
    pub strategy: Strategy,
    pub config: SelectionConfig,
    /// SHA-256 of the canonical config JSON.
    pub config_hash: String,
    pub round: usize,
    pub selected_images: Vec<String>,
    pub diagnostics: Diagnostics,
    /// Wall-clock time of the selection. Omitted when timing is disabled so
    /// that reruns are byte-identical.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
}

impl SelectionManifest {
    pub fn new(config: &SelectionConfig, round: usize, output: StrategyOutput, duration_ms: Option<u64>) -> Self {
        SelectionManifest {
            tool_version: crate::VERSION.to_owned(),
            strategy: config.strategy,
            config: config.clone(),
            config_hash: config.content_hash(),
            round,
            selected_images: output.selected_images,
            diagnostics: output.diagnostics,
            duration_ms,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn output() -> StrategyOutput {
        StrategyOutput {
            selected_images: vec!["b".into(), "a".into()],
            diagnostics: Diagnostics {
                unlabeled: 3,
                ..Default::default()
            },
        }
    }

    #[test]
    fn echoes_config_and_hash() {
        let cfg = SelectionConfig::new(Strategy::Wse, 2);
        let m = SelectionManifest::new(&cfg, 3, output(), None);
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["strategy"], "wse");
        assert_eq!(v["round"], 3);
        assert_eq!(v["config_hash"], cfg.content_hash());
        assert_eq!(v["config"]["budget"], 2);
        assert_eq!(v["selected_images"], serde_json::json!(["b", "a"]));
        assert!(v.get("duration_ms").is_none());
        let back: SelectionConfig = serde_json::from_value(v["config"].clone()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn only_timing_differs() {
        let cfg = SelectionConfig::new(Strategy::Random, 2);
        let a = SelectionManifest::new(&cfg, 1, output(), Some(5));
        let b = SelectionManifest::new(&cfg, 1, output(), Some(9));
        assert_ne!(a.to_json(), b.to_json());
        let strip = |m: &SelectionManifest| {
            SelectionManifest {
                duration_ms: None,
                ..m.clone()
            }
            .to_json()
        };
        assert_eq!(strip(&a), strip(&b));
    }
}
