//! Tool wire schema.
//!
//! Request: `{"task": "caption"|"detect"|"vqa", "image": <ref>, "prompt": <text or "">}`.
//! Reply: an object with a top-level string field `text`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ToolRequest;
use crate::types::Capability;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRequest {
    pub task: Capability,
    pub image: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireReply {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("reply text is empty")]
    EmptyText,
    #[error("invalid request: {0}")]
    Request(String),
}

pub fn wire_encode(request: &ToolRequest) -> String {
    let msg = WireRequest {
        task: request.task,
        image: request.image_ref.clone(),
        prompt: request.prompt.clone().unwrap_or_default(),
    };
    serde_json::to_string(&msg).expect("wire request serializes")
}

/// Server-side counterpart of [`wire_encode`].
pub fn wire_decode_request(bytes: &[u8]) -> Result<ToolRequest, WireError> {
    let msg: WireRequest = serde_json::from_slice(bytes).map_err(|e| WireError::Malformed(e.to_string()))?;
    let prompt = (!msg.prompt.is_empty()).then_some(msg.prompt);
    ToolRequest::new(msg.image, msg.task, prompt).map_err(|e| WireError::Request(e.to_string()))
}

pub fn wire_encode_reply(text: &str) -> String {
    serde_json::to_string(&WireReply { text: text.to_string() }).expect("wire reply serializes")
}

pub fn wire_decode(reply: &[u8]) -> Result<String, WireError> {
    let value: serde_json::Value =
        serde_json::from_slice(reply).map_err(|e| WireError::Malformed(e.to_string()))?;
    let text = value
        .as_object()
        .ok_or_else(|| WireError::Malformed("reply is not an object".into()))?
        .get("text")
        .ok_or_else(|| WireError::Malformed("reply has no `text` field".into()))?
        .as_str()
        .ok_or_else(|| WireError::Malformed("`text` is not a string".into()))?;
    if text.trim().is_empty() {
        return Err(WireError::EmptyText);
    }
    Ok(text.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vqa_message_has_all_fields() {
        let req = ToolRequest::vqa("img_001", "Is there a person in the image?").unwrap();
        let msg: serde_json::Value = serde_json::from_str(&wire_encode(&req)).unwrap();
        assert_eq!(msg["task"], "vqa");
        assert_eq!(msg["image"], "img_001");
        assert_eq!(msg["prompt"], "Is there a person in the image?");
    }

    #[test]
    fn reply_decoding() {
        assert_eq!(wire_decode(br#"{"text":"a dog"}"#).unwrap(), "a dog");
        assert!(matches!(wire_decode(br#"{"answer":"a dog"}"#), Err(WireError::Malformed(_))));
        assert!(matches!(wire_decode(br#"{"text":5}"#), Err(WireError::Malformed(_))));
        assert!(matches!(wire_decode(b"[1]"), Err(WireError::Malformed(_))));
        assert!(matches!(wire_decode(b"not json"), Err(WireError::Malformed(_))));
        assert_eq!(wire_decode(br#"{"text":"  "}"#), Err(WireError::EmptyText));
    }

    fn arb_request() -> impl Strategy<Value = ToolRequest> {
        let image = "[a-zA-Z0-9_/:.-]{1,24}";
        let prompt = "\\PC{1,60}";
        prop_oneof![
            (image, prompt).prop_map(|(i, p)| ToolRequest::new(i, Capability::Vqa, Some(p)).unwrap()),
            (image, proptest::option::of(prompt))
                .prop_map(|(i, p)| ToolRequest::new(i, Capability::Caption, p).unwrap()),
            image.prop_map(ToolRequest::detect),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn request_round_trip(req in arb_request()) {
            let back = wire_decode_request(wire_encode(&req).as_bytes()).unwrap();
            prop_assert_eq!(back, req);
        }

        #[test]
        fn reply_round_trip(text in "\\PC*[a-z]\\PC*") {
            prop_assert_eq!(wire_decode(wire_encode_reply(&text).as_bytes()).unwrap(), text);
        }
    }
}
