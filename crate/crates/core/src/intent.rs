//! Intent parsing and policy dispatch.
//!
//! Two intent templates are understood, keyword matching case-insensitive,
//! identifiers captured verbatim:
//!
//! ```text
//! add device <device_id> to domain <domain_id>
//! add ML-technique <ML-tech_id> to ML-technique type <ML-tech_type_name>
//! ```
//!
//! A parsed intent serializes to a fixed JSON shape whose key names are part
//! of the wire contract: `intent_name`, `device`, `domain`, `ML-technique`,
//! `ML-technique_type`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::StoreSnapshot;

pub const DEVICE_TEMPLATE: &str = "add device <device_id> to domain <domain_id>";
pub const TECHNIQUE_TEMPLATE: &str =
    "add ML-technique <ML-tech_id> to ML-technique type <ML-tech_type_name>";

#[derive(Debug, Error)]
pub enum IntentError {
    #[error("no intent template matches; nearest template: {hint}")]
    NoTemplateMatch { hint: String },
    #[error("missing identifier <{slot}>; template: {template}")]
    MissingIdentifier {
        slot: &'static str,
        template: &'static str,
    },
    #[error("identifier `{0}` must be nonempty without embedded whitespace")]
    InvalidIdentifier(String),
    #[error("invalid intent JSON: {0}")]
    Json(String),
}

/// A parsed intent, tagged the way the JSON wire format spells it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "intent_name")]
pub enum StructuredIntent {
    #[serde(rename = "adding device")]
    AddDevice { device: String, domain: String },
    #[serde(rename = "adding ML-technique")]
    AddTechnique {
        #[serde(rename = "ML-technique")]
        technique: String,
        #[serde(rename = "ML-technique_type")]
        technique_type: String,
    },
}

/// Expected token at each template position: a fixed keyword or a capture.
enum Slot {
    Keyword(&'static str),
    Identifier(&'static str),
}

const DEVICE_SLOTS: [Slot; 6] = [
    Slot::Keyword("add"),
    Slot::Keyword("device"),
    Slot::Identifier("device_id"),
    Slot::Keyword("to"),
    Slot::Keyword("domain"),
    Slot::Identifier("domain_id"),
];

const TECHNIQUE_SLOTS: [Slot; 7] = [
    Slot::Keyword("add"),
    Slot::Keyword("ml-technique"),
    Slot::Identifier("ml-tech_id"),
    Slot::Keyword("to"),
    Slot::Keyword("ml-technique"),
    Slot::Keyword("type"),
    Slot::Identifier("ml-tech_type_name"),
];

/// Parses an intent line. Surrounding whitespace is ignored; every input
/// either yields exactly one intent or a structured error, never a panic.
pub fn parse_intent(text: &str) -> Result<StructuredIntent, IntentError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let both = format!("{DEVICE_TEMPLATE} | {TECHNIQUE_TEMPLATE}");
    if tokens.is_empty() || !tokens[0].eq_ignore_ascii_case("add") {
        return Err(IntentError::NoTemplateMatch { hint: both });
    }
    match tokens.get(1) {
        Some(t) if t.eq_ignore_ascii_case("device") => {
            let captured = match_template(&tokens, &DEVICE_SLOTS, DEVICE_TEMPLATE)?;
            Ok(StructuredIntent::AddDevice {
                device: captured[0].to_string(),
                domain: captured[1].to_string(),
            })
        }
        Some(t) if t.eq_ignore_ascii_case("ml-technique") => {
            let captured = match_template(&tokens, &TECHNIQUE_SLOTS, TECHNIQUE_TEMPLATE)?;
            Ok(StructuredIntent::AddTechnique {
                technique: captured[0].to_string(),
                technique_type: captured[1].to_string(),
            })
        }
        _ => Err(IntentError::NoTemplateMatch { hint: both }),
    }
}

fn match_template<'a>(
    tokens: &[&'a str],
    slots: &[Slot],
    template: &'static str,
) -> Result<Vec<&'a str>, IntentError> {
    let mut captured = Vec::with_capacity(2);
    for (pos, slot) in slots.iter().enumerate() {
        match (slot, tokens.get(pos)) {
            (Slot::Keyword(kw), Some(tok)) if tok.eq_ignore_ascii_case(kw) => {}
            (Slot::Keyword(_), Some(_)) | (Slot::Keyword(_), None) => {
                return Err(IntentError::NoTemplateMatch {
                    hint: template.to_string(),
                })
            }
            (Slot::Identifier(_), Some(tok)) => captured.push(*tok),
            (Slot::Identifier(slot), None) => {
                return Err(IntentError::MissingIdentifier { slot, template })
            }
        }
    }
    if tokens.len() > slots.len() {
        return Err(IntentError::NoTemplateMatch {
            hint: template.to_string(),
        });
    }
    Ok(captured)
}

/// Serializes an intent to its structured JSON form (compact, fixed key
/// names, `intent_name` first).
pub fn to_structured_json(intent: &StructuredIntent) -> String {
    serde_json::to_string(intent).expect("intent serializes")
}

/// Parses the structured JSON form back into an intent, validating that
/// identifiers are nonempty and whitespace-free.
pub fn from_structured_json(text: &str) -> Result<StructuredIntent, IntentError> {
    let intent: StructuredIntent =
        serde_json::from_str(text).map_err(|e| IntentError::Json(e.to_string()))?;
    let check = |s: &str| -> Result<(), IntentError> {
        if s.is_empty() || s.contains(char::is_whitespace) {
            return Err(IntentError::InvalidIdentifier(s.to_string()));
        }
        Ok(())
    };
    match &intent {
        StructuredIntent::AddDevice { device, domain } => {
            check(device)?;
            check(domain)?;
        }
        StructuredIntent::AddTechnique {
            technique,
            technique_type,
        } => {
            check(technique)?;
            check(technique_type)?;
        }
    }
    Ok(intent)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyCheck {
    pub name: String,
    pub passed: bool,
    pub message: String,
}

/// Result of running an intent's policy checks. The recommender workflow is
/// triggered only when every check passed; otherwise the failed messages are
/// the user alerts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub checks: Vec<PolicyCheck>,
    pub triggered_recommender: bool,
}

impl PolicyOutcome {
    fn from_checks(checks: Vec<PolicyCheck>) -> Self {
        let triggered_recommender = checks.iter().all(|c| c.passed);
        PolicyOutcome {
            checks,
            triggered_recommender,
        }
    }

    /// Messages of the failed checks, in check order.
    pub fn alerts(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.message.as_str())
            .collect()
    }
}

/// Answers whether a device is reachable. The registry-backed default reads
/// the device record's connectivity flag and treats devices the registry has
/// never seen as reachable (there is no evidence against them yet); real
/// deployments can plug in an active prober.
pub trait ConnectivityProber {
    fn is_connected(&self, store: &StoreSnapshot, device_id: &str) -> bool;
}

pub struct RegistryProber;

impl ConnectivityProber for RegistryProber {
    fn is_connected(&self, store: &StoreSnapshot, device_id: &str) -> bool {
        store
            .device_index(device_id)
            .map(|idx| store.devices()[idx].connectivity)
            .unwrap_or(true)
    }
}

/// Runs the policy checks for an intent against the store using the default
/// registry-backed connectivity prober. Never mutates the store.
pub fn configure_policies(intent: &StructuredIntent, store: &StoreSnapshot) -> PolicyOutcome {
    configure_policies_with(intent, store, &RegistryProber)
}

/// Same as [`configure_policies`] with an injected connectivity prober.
pub fn configure_policies_with(
    intent: &StructuredIntent,
    store: &StoreSnapshot,
    prober: &dyn ConnectivityProber,
) -> PolicyOutcome {
    match intent {
        StructuredIntent::AddDevice { device, domain } => {
            let fresh = store.device_index(device).is_none();
            let connected = prober.is_connected(store, device);
            PolicyOutcome::from_checks(vec![
                PolicyCheck {
                    name: "device-absent".to_string(),
                    passed: fresh,
                    message: if fresh {
                        format!("device {device} is new to domain {domain}")
                    } else {
                        format!("device {device} already registered")
                    },
                },
                PolicyCheck {
                    name: "connectivity".to_string(),
                    passed: connected,
                    message: if connected {
                        format!("device {device} is connected")
                    } else {
                        format!("connectivity check failed for {device}")
                    },
                },
            ])
        }
        StructuredIntent::AddTechnique {
            technique,
            technique_type,
        } => {
            let existing = store.technique_index(technique);
            let absent = existing.is_none();
            let type_ok = !technique_type.is_empty();
            PolicyOutcome::from_checks(vec![
                PolicyCheck {
                    name: "technique-absent".to_string(),
                    passed: absent,
                    message: if absent {
                        format!(
                            "no ML-technique {technique} of type {technique_type} in the store"
                        )
                    } else {
                        format!("ML-technique {technique} already exists in the store")
                    },
                },
                PolicyCheck {
                    name: "technique-type".to_string(),
                    passed: type_ok,
                    message: if type_ok {
                        format!("ML-technique type {technique_type} accepted")
                    } else {
                        "ML-technique type must be nonempty".to_string()
                    },
                },
            ])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{DeviceRecord, TechniqueRecord};
    use proptest::prelude::*;

    #[test]
    fn parses_add_device() {
        let intent = parse_intent("add device edge_100 to domain warehouse_5").unwrap();
        assert_eq!(
            intent,
            StructuredIntent::AddDevice {
                device: "edge_100".to_string(),
                domain: "warehouse_5".to_string(),
            }
        );
    }

    #[test]
    fn parses_add_technique() {
        let intent =
            parse_intent("add ML-technique MobileNet-V2 to ML-technique type threat-detection")
                .unwrap();
        assert_eq!(
            intent,
            StructuredIntent::AddTechnique {
                technique: "MobileNet-V2".to_string(),
                technique_type: "threat-detection".to_string(),
            }
        );
    }

    #[test]
    fn keywords_are_case_insensitive() {
        let a = parse_intent("ADD DEVICE edge_1 TO DOMAIN factory").unwrap();
        let b = parse_intent("add device edge_1 to domain factory").unwrap();
        assert_eq!(a, b);
        parse_intent("Add Ml-Technique VGG-19 To Ml-Technique Type classification").unwrap();
    }

    #[test]
    fn identifiers_keep_their_case() {
        match parse_intent("add device Edge_100 to domain Warehouse_5").unwrap() {
            StructuredIntent::AddDevice { device, domain } => {
                assert_eq!(device, "Edge_100");
                assert_eq!(domain, "Warehouse_5");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn surrounding_whitespace_ignored() {
        parse_intent("   add device a to domain b \t ").unwrap();
    }

    #[test]
    fn unsupported_verb_is_no_match() {
        match parse_intent("delete device x") {
            Err(IntentError::NoTemplateMatch { hint }) => {
                assert!(hint.contains("add device"));
                assert!(hint.contains("add ML-technique"));
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn missing_identifiers_are_named() {
        match parse_intent("add device") {
            Err(IntentError::MissingIdentifier { slot, .. }) => assert_eq!(slot, "device_id"),
            other => panic!("unexpected: {other:?}"),
        }
        match parse_intent("add device e to domain") {
            Err(IntentError::MissingIdentifier { slot, .. }) => assert_eq!(slot, "domain_id"),
            other => panic!("unexpected: {other:?}"),
        }
        match parse_intent("add ML-technique m to ML-technique type") {
            Err(IntentError::MissingIdentifier { slot, .. }) => {
                assert_eq!(slot, "ml-tech_type_name")
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn trailing_tokens_are_no_match() {
        assert!(matches!(
            parse_intent("add device a to domain b extra"),
            Err(IntentError::NoTemplateMatch { .. })
        ));
    }

    #[test]
    fn truncated_keyword_positions_are_no_match() {
        assert!(matches!(
            parse_intent("add device x"),
            Err(IntentError::NoTemplateMatch { .. })
        ));
        assert!(matches!(
            parse_intent("add device x to realm y"),
            Err(IntentError::NoTemplateMatch { .. })
        ));
    }

    #[test]
    fn json_shape_add_device() {
        let intent = StructuredIntent::AddDevice {
            device: "edge_100".to_string(),
            domain: "warehouse_5".to_string(),
        };
        assert_eq!(
            to_structured_json(&intent),
            r#"{"intent_name":"adding device","device":"edge_100","domain":"warehouse_5"}"#
        );
    }

    #[test]
    fn json_shape_add_technique() {
        let intent = StructuredIntent::AddTechnique {
            technique: "MobileNet-V2-threat_1".to_string(),
            technique_type: "threat-detection".to_string(),
        };
        assert_eq!(
            to_structured_json(&intent),
            r#"{"intent_name":"adding ML-technique","ML-technique":"MobileNet-V2-threat_1","ML-technique_type":"threat-detection"}"#
        );
    }

    #[test]
    fn json_roundtrip() {
        let intent = parse_intent("add device edge_100 to domain warehouse_5").unwrap();
        let back = from_structured_json(&to_structured_json(&intent)).unwrap();
        assert_eq!(back, intent);
    }

    #[test]
    fn json_rejects_whitespace_identifiers() {
        let text = r#"{"intent_name":"adding device","device":"a b","domain":"c"}"#;
        assert!(matches!(
            from_structured_json(text),
            Err(IntentError::InvalidIdentifier(_))
        ));
    }

    fn store_with(devices: &[(&str, bool)], techniques: &[&str]) -> StoreSnapshot {
        let mut s = StoreSnapshot::new();
        for id in techniques {
            s.register_technique(TechniqueRecord {
                id: id.to_string(),
                technique_type: "threat-detection".to_string(),
                registered_at: 0,
            })
            .unwrap();
        }
        for (id, connectivity) in devices {
            s.register_device(DeviceRecord {
                id: id.to_string(),
                domain: "warehouse_5".to_string(),
                connectivity: *connectivity,
            })
            .unwrap();
        }
        s
    }

    #[test]
    fn duplicate_technique_fails_existence_check() {
        let store = store_with(&[], &["MobileNet-V2"]);
        let intent =
            parse_intent("add ML-technique MobileNet-V2 to ML-technique type threat-detection")
                .unwrap();
        let outcome = configure_policies(&intent, &store);
        assert!(!outcome.triggered_recommender);
        assert!(!outcome.alerts().is_empty());
    }

    #[test]
    fn fresh_connected_device_triggers() {
        let store = store_with(&[], &[]);
        let intent = parse_intent("add device edge_100 to domain warehouse_5").unwrap();
        let outcome = configure_policies(&intent, &store);
        assert!(outcome.triggered_recommender);
        assert!(outcome.alerts().is_empty());
    }

    #[test]
    fn disconnected_device_alert_message() {
        let store = store_with(&[("edge_100", false)], &[]);
        let intent = parse_intent("add device edge_100 to domain warehouse_5").unwrap();
        let outcome = configure_policies(&intent, &store);
        assert!(!outcome.triggered_recommender);
        assert!(outcome
            .alerts()
            .contains(&"connectivity check failed for edge_100"));
    }

    #[test]
    fn injected_prober_overrides_registry() {
        struct Down;
        impl ConnectivityProber for Down {
            fn is_connected(&self, _: &StoreSnapshot, _: &str) -> bool {
                false
            }
        }
        let store = store_with(&[], &[]);
        let intent = parse_intent("add device edge_7 to domain lab").unwrap();
        let outcome = configure_policies_with(&intent, &store, &Down);
        assert!(!outcome.triggered_recommender);
    }

    proptest! {
        /// Every string either parses or yields a structured error; no panics.
        #[test]
        fn grammar_totality(text in ".{0,80}") {
            let _ = parse_intent(&text);
        }

        #[test]
        fn json_roundtrip_any_identifier(
            a in "[A-Za-z0-9_.-]{1,20}",
            b in "[A-Za-z0-9_.-]{1,20}",
            device in proptest::bool::ANY,
        ) {
            let intent = if device {
                StructuredIntent::AddDevice { device: a, domain: b }
            } else {
                StructuredIntent::AddTechnique { technique: a, technique_type: b }
            };
            let back = from_structured_json(&to_structured_json(&intent)).unwrap();
            prop_assert_eq!(back, intent);
        }

        /// Valid template instances always parse to the right variant.
        #[test]
        fn template_instances_parse(
            id in "[A-Za-z0-9_.-]{1,16}",
            name in "[A-Za-z0-9_.-]{1,16}",
        ) {
            let dev = format!("add device {id} to domain {name}");
            let dev_ok = matches!(parse_intent(&dev), Ok(StructuredIntent::AddDevice { .. }));
            prop_assert!(dev_ok, "failed to parse `{}`", dev);
            let tech = format!("add ML-technique {id} to ML-technique type {name}");
            let tech_ok = matches!(parse_intent(&tech), Ok(StructuredIntent::AddTechnique { .. }));
            prop_assert!(tech_ok, "failed to parse `{}`", tech);
        }
    }
}
