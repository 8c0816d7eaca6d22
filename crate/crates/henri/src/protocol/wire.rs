//! Newline-delimited wire encoding for negotiation messages.
//!
//! One message per line, JSON with a `kind` tag. Maps serialize with
//! sorted keys and struct fields in declared order, so encoding is
//! canonical: `encode(decode(line)) == line` for any line produced by
//! `encode`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AgentId, EpisodeId, IssueId, ProductId};

pub const KNOWN_KINDS: &[&str] = &[
    "SEND_ADVERTISEMENT",
    "SEND_IDENTITY",
    "CONNECT_THREAD",
    "OFFER",
    "COUNTER_OFFER",
    "ACCEPT",
    "DECLINE",
    "REJECT",
    "WITHDRAW",
    "FINALIZE",
];

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("malformed line: {0}")]
    Malformed(String),
    #[error("unknown kind {0:?}")]
    UnknownKind(String),
    #[error("payload mismatch for kind {kind}: {reason}")]
    PayloadMismatch { kind: String, reason: String },
}

/// Kind-specific payload of a message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageBody {
    /// Pre-episode: announce a product to the negotiation system.
    SendAdvertisement {
        product_id: ProductId,
        validity: u32,
    },
    /// Pre-episode: provide the agent's address.
    SendIdentity { address: String },
    /// Session-creation handshake: enumerates the leaf issues so both
    /// sides build identical session maps before round 1.
    ConnectThread {
        issues: Vec<IssueId>,
        participants: Vec<AgentId>,
        max_rounds: u32,
    },
    Offer {
        prices: BTreeMap<IssueId, f64>,
    },
    CounterOffer {
        prices: BTreeMap<IssueId, f64>,
    },
    /// Temporarily seal one issue at its last offered price.
    Accept { issue: IssueId },
    /// Reject a temporary acceptance. With an issue id, only that
    /// session reopens to REJECTED; without one, every temporarily
    /// accepted session is rejected and the episode ends.
    Decline {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        issue: Option<IssueId>,
    },
    /// Reject an offer on one issue and terminate the negotiation.
    Reject { issue: IssueId },
    Withdraw,
    Finalize,
}

impl MessageBody {
    pub fn kind(&self) -> &'static str {
        match self {
            MessageBody::SendAdvertisement { .. } => "SEND_ADVERTISEMENT",
            MessageBody::SendIdentity { .. } => "SEND_IDENTITY",
            MessageBody::ConnectThread { .. } => "CONNECT_THREAD",
            MessageBody::Offer { .. } => "OFFER",
            MessageBody::CounterOffer { .. } => "COUNTER_OFFER",
            MessageBody::Accept { .. } => "ACCEPT",
            MessageBody::Decline { .. } => "DECLINE",
            MessageBody::Reject { .. } => "REJECT",
            MessageBody::Withdraw => "WITHDRAW",
            MessageBody::Finalize => "FINALIZE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegotiationMessage {
    /// Absent for pre-episode kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode: Option<EpisodeId>,
    pub sender: AgentId,
    pub round: u32,
    #[serde(flatten)]
    pub body: MessageBody,
}

impl NegotiationMessage {
    pub fn new(
        episode: impl Into<Option<EpisodeId>>,
        sender: impl Into<AgentId>,
        round: u32,
        body: MessageBody,
    ) -> Self {
        NegotiationMessage {
            episode: episode.into(),
            sender: sender.into(),
            round,
            body,
        }
    }

    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }
}

/// Encodes a message as one newline-terminated line.
pub fn encode(msg: &NegotiationMessage) -> String {
    let mut line = serde_json::to_string(msg).expect("messages serialize");
    line.push('\n');
    line
}

/// Decodes one line (with or without trailing newline).
pub fn decode(line: &str) -> Result<NegotiationMessage, CodecError> {
    let line = line.trim_end_matches(['\n', '\r']);
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| CodecError::Malformed(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| CodecError::Malformed("message is not an object".into()))?;
    let kind = obj
        .get("kind")
        .ok_or_else(|| CodecError::Malformed("missing \"kind\" field".into()))?
        .as_str()
        .ok_or_else(|| CodecError::Malformed("\"kind\" is not a string".into()))?;
    if !KNOWN_KINDS.contains(&kind) {
        return Err(CodecError::UnknownKind(kind.to_owned()));
    }
    let kind = kind.to_owned();
    serde_json::from_value(value).map_err(|e| CodecError::PayloadMismatch {
        kind,
        reason: e.to_string(),
    })
}

/// Decodes raw bytes; non-UTF-8 input is a malformed line.
pub fn decode_bytes(bytes: &[u8]) -> Result<NegotiationMessage, CodecError> {
    let line = std::str::from_utf8(bytes)
        .map_err(|e| CodecError::Malformed(format!("invalid utf-8: {e}")))?;
    decode(line)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn offer(prices: &[(&str, f64)]) -> NegotiationMessage {
        NegotiationMessage::new(
            Some(EpisodeId::from("ep-1")),
            "buyer-a",
            3,
            MessageBody::Offer {
                prices: prices.iter().map(|(k, v)| (IssueId::from(*k), *v)).collect(),
            },
        )
    }

    #[test]
    fn offer_prices_encode_in_sorted_key_order() {
        let msg = offer(&[("e", 5.0), ("a", 1.0), ("c", 3.0), ("b", 2.0), ("d", 4.0)]);
        let line = encode(&msg);
        let a = line.find("\"a\"").unwrap();
        let b = line.find("\"b\"").unwrap();
        let c = line.find("\"c\"").unwrap();
        let d = line.find("\"d\"").unwrap();
        let e = line.find("\"e\"").unwrap();
        assert!(a < b && b < c && c < d && d < e);
    }

    #[test]
    fn missing_kind_is_a_parse_error() {
        let err = decode(r#"{"sender":"a","round":1}"#).unwrap_err();
        assert!(matches!(err, CodecError::Malformed(_)));
    }

    #[test]
    fn unknown_kind_is_its_own_error_class() {
        let err = decode(r#"{"kind":"HAGGLE","sender":"a","round":1}"#).unwrap_err();
        assert_eq!(err, CodecError::UnknownKind("HAGGLE".into()));
    }

    #[test]
    fn payload_mismatch_is_its_own_error_class() {
        // ACCEPT must carry exactly one issue id
        let err = decode(r#"{"kind":"ACCEPT","sender":"a","round":1}"#).unwrap_err();
        assert!(matches!(err, CodecError::PayloadMismatch { .. }));
    }

    #[test]
    fn non_json_and_non_utf8_are_malformed() {
        assert!(matches!(decode("not json"), Err(CodecError::Malformed(_))));
        assert!(matches!(decode_bytes(&[0xff, 0xfe]), Err(CodecError::Malformed(_))));
    }

    fn arb_body() -> impl Strategy<Value = MessageBody> {
        let issue = "[a-z]{1,6}".prop_map(IssueId::from);
        let price = (0u64..1_000_000u64).prop_map(|c| c as f64 / 100.0);
        let prices = prop::collection::btree_map(issue.clone(), price, 1..5);
        prop_oneof![
            ("[a-z]{1,6}".prop_map(ProductId::from), 1u32..10).prop_map(|(product_id, validity)| {
                MessageBody::SendAdvertisement { product_id, validity }
            }),
            "[a-z:/.0-9]{1,12}".prop_map(|address| MessageBody::SendIdentity { address }),
            (prop::collection::vec(issue.clone(), 1..5), 1u32..20).prop_map(|(issues, max_rounds)| {
                MessageBody::ConnectThread {
                    issues,
                    participants: vec!["a".into(), "b".into()],
                    max_rounds,
                }
            }),
            prices.clone().prop_map(|prices| MessageBody::Offer { prices }),
            prices.prop_map(|prices| MessageBody::CounterOffer { prices }),
            issue.clone().prop_map(|issue| MessageBody::Accept { issue }),
            prop::option::of(issue.clone()).prop_map(|issue| MessageBody::Decline { issue }),
            issue.prop_map(|issue| MessageBody::Reject { issue }),
            Just(MessageBody::Withdraw),
            Just(MessageBody::Finalize),
        ]
    }

    fn arb_message() -> impl Strategy<Value = NegotiationMessage> {
        (
            prop::option::of("[a-z0-9-]{1,8}".prop_map(EpisodeId::from)),
            "[a-z0-9-]{1,8}",
            0u32..50,
            arb_body(),
        )
            .prop_map(|(episode, sender, round, body)| {
                NegotiationMessage::new(episode, sender.as_str(), round, body)
            })
    }

    proptest! {
        // decode inverts encode, and re-encoding is byte-exact
        #[test]
        fn canonical_roundtrip(msg in arb_message()) {
            let line = encode(&msg);
            let back = decode(&line).unwrap();
            prop_assert_eq!(&back, &msg);
            prop_assert_eq!(encode(&back), line);
        }

        // arbitrary bytes never panic the decoder
        #[test]
        fn decoder_is_total(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode_bytes(&bytes);
        }

        // arbitrary JSON objects never panic the decoder
        #[test]
        fn decoder_survives_json_fuzz(s in "[ -~]{0,80}") {
            let _ = decode(&s);
        }
    }
}
