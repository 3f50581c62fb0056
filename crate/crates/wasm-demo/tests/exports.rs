use cgi_wasm_demo::{episode, sweep, task_json};

#[test]
fn task_json_lists_gold_path() {
    let v: serde_json::Value = serde_json::from_str(&task_json(1, 1, 4).unwrap()).unwrap();
    assert_eq!(v["gold_path"].as_array().unwrap().len(), 2);
    assert_eq!(v["oracle_length"], 2);
    assert!(task_json(0, 1, 4).is_err());
}

#[test]
fn critic_rescues_a_useless_actor() {
    let with = episode(3, 2, 1, 0.0, 5, true, 7).unwrap();
    assert!(with.success);
    assert_eq!(with.steps.len(), with.task.oracle_length);
    assert!(with
        .steps
        .iter()
        .all(|s| s.candidates.iter().all(|c| c.grade.is_some())));
    let without = episode(3, 2, 1, 0.0, 5, false, 7).unwrap();
    assert!(!without.success);
    assert!(without.steps.iter().all(|s| !s.revised));
    assert!(episode(3, 2, 1, 1.5, 5, true, 7).is_err());
}

#[test]
fn sweep_covers_fidelity_grid() {
    let points = sweep(2, 2, 6, 3, 1).unwrap();
    assert_eq!(points.len(), 11);
    assert!(points.iter().all(|p| p.with_critic == 1.0));
    assert_eq!(points[10].without_critic, 1.0);
}
