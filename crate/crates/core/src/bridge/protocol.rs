use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Request {
    Hello {
        protocol_version: u32,
    },
    Reset {
        task_id: String,
        #[serde(default)]
        seed: u64,
        /// Optional step budget; environments without one ignore it.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_steps: Option<usize>,
    },
    Step {
        task_id: String,
        action: String,
    },
    Close {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task_id: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireObservation {
    pub text: String,
    pub score: f64,
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub available_actions: Option<Vec<String>>,
}

impl WireObservation {
    pub fn new(text: impl Into<String>, score: f64, done: bool) -> Self {
        Self {
            text: text.into(),
            score,
            done,
            available_actions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Response {
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        protocol_version: Option<u32>,
    },
    Observation(WireObservation),
    Error {
        message: String,
    },
}

impl Response {
    pub fn error(message: impl Into<String>) -> Self {
        Response::Error {
            message: message.into(),
        }
    }
}

/// Serializes a message as one line, newline included.
pub fn encode<T: Serialize>(msg: &T) -> String {
    let mut line = serde_json::to_string(msg).expect("bridge messages serialize");
    line.push('\n');
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_field_names() {
        let step = Request::Step {
            task_id: "t1".into(),
            action: "noop".into(),
        };
        assert_eq!(
            encode(&step),
            "{\"type\":\"step\",\"task_id\":\"t1\",\"action\":\"noop\"}\n"
        );
        let obs = Response::Observation(WireObservation::new("ok", 0.0, false));
        assert_eq!(
            encode(&obs),
            "{\"type\":\"observation\",\"text\":\"ok\",\"score\":0.0,\"done\":false}\n"
        );
        let hello = Request::Hello { protocol_version: 1 };
        assert_eq!(encode(&hello), "{\"type\":\"hello\",\"protocol_version\":1}\n");
        let ack = Response::Ack {
            protocol_version: Some(1),
        };
        assert_eq!(encode(&ack), "{\"type\":\"ack\",\"protocol_version\":1}\n");
    }

    #[test]
    fn missing_score_is_rejected() {
        let r: Result<Response, _> = serde_json::from_str("{\"type\":\"observation\",\"text\":\"x\",\"done\":false}");
        assert!(r.is_err());
    }

    #[test]
    fn available_actions_optional() {
        let r: Response = serde_json::from_str(
            "{\"type\":\"observation\",\"text\":\"x\",\"score\":0.5,\"done\":false,\"available_actions\":[\"click[a]\"]}",
        )
        .unwrap();
        match r {
            Response::Observation(o) => assert_eq!(o.available_actions.unwrap(), vec!["click[a]"]),
            other => panic!("{other:?}"),
        }
    }
}
