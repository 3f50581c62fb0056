use std::fs;
use std::path::Path;

use serde_json::Value;

/// Checks one record against the conversation schema directly on JSON:
/// a nonempty `conversations` array of `{from, value}` turns alternating
/// human/gpt starting with human and ending with gpt, and a string `system`.
pub fn validate_record(record: &Value) -> Result<(), String> {
    let obj = record.as_object().ok_or("record is not an object")?;
    match obj.get("system") {
        Some(Value::String(_)) => {}
        _ => return Err("missing string field \"system\"".into()),
    }
    let turns = obj
        .get("conversations")
        .and_then(Value::as_array)
        .ok_or("missing array field \"conversations\"")?;
    if turns.is_empty() {
        return Err("empty conversations".into());
    }
    for (i, turn) in turns.iter().enumerate() {
        let from = turn
            .get("from")
            .and_then(Value::as_str)
            .ok_or(format!("turn {i}: missing \"from\""))?;
        if !turn.get("value").is_some_and(Value::is_string) {
            return Err(format!("turn {i}: missing string \"value\""));
        }
        let expected = if i % 2 == 0 { "human" } else { "gpt" };
        if from != expected {
            return Err(format!("turn {i}: expected from={expected}, got {from}"));
        }
    }
    if turns.len() % 2 != 0 {
        return Err("last turn is not from gpt".into());
    }
    Ok(())
}

/// Validates every record of a dataset file; returns (index, problem) pairs.
pub fn validate_file(path: &Path) -> Result<Vec<(usize, String)>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let records = value.as_array().ok_or("dataset file is not a JSON array")?;
    Ok(records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| validate_record(r).err().map(|e| (i, e)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn accepts_minimal() {
        let r = json!({"conversations":[{"from":"human","value":"a"},{"from":"gpt","value":"b"}],"system":""});
        assert_eq!(validate_record(&r), Ok(()));
    }

    #[test]
    fn rejects_bad_shapes() {
        for bad in [
            json!({"conversations":[],"system":""}),
            json!({"conversations":[{"from":"human","value":"a"}],"system":""}),
            json!({"conversations":[{"from":"gpt","value":"a"},{"from":"human","value":"b"}],"system":""}),
            json!({"conversations":[{"from":"human","value":"a"},{"from":"gpt","value":"b"}]}),
            json!({"conversations":[{"from":"human"},{"from":"gpt","value":"b"}],"system":""}),
            json!([1]),
        ] {
            assert!(validate_record(&bad).is_err(), "{bad}");
        }
    }
}
