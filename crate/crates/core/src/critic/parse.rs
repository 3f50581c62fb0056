use thiserror::Error;

use super::{Critique, Grade};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("critique has no Overall Grading section or no grade word in it")]
pub struct MissingGrade;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Contribution,
    Feasibility,
    Efficiency,
    Grading,
    Revision,
}

const HEADERS: [(&str, Section); 5] = [
    ("contribution", Section::Contribution),
    ("feasibility", Section::Feasibility),
    ("efficiency", Section::Efficiency),
    ("overall grading", Section::Grading),
    ("suggested revision", Section::Revision),
];

/// Parses critique text into its five sections. Headers are `##` markers
/// followed by a known section name and a colon, matched case-insensitively
/// in any order, inline or at line start. Missing analysis sections become
/// empty strings; a missing grade is an error.
pub fn parse_critique(raw: &str) -> Result<Critique, MissingGrade> {
    let marks = find_headers(raw);
    let mut contribution = String::new();
    let mut feasibility = String::new();
    let mut efficiency = String::new();
    let mut grading: Option<&str> = None;
    let mut revision: Option<&str> = None;

    for (i, &(section, body_start)) in marks.iter().enumerate() {
        let end = marks
            .get(i + 1)
            .map(|&(_, next)| header_start(raw, next))
            .unwrap_or(raw.len());
        let body = raw[body_start..end].trim();
        match section {
            Section::Contribution => contribution = body.to_string(),
            Section::Feasibility => feasibility = body.to_string(),
            Section::Efficiency => efficiency = body.to_string(),
            Section::Grading => {
                grading.get_or_insert(body);
            }
            Section::Revision => {
                revision.get_or_insert(body);
            }
        }
    }

    let grade = grading.and_then(find_grade).ok_or(MissingGrade)?;
    let suggested_revision = revision.map(str::trim).filter(|r| !is_absent(r)).map(str::to_string);
    Ok(Critique {
        contribution,
        feasibility,
        efficiency,
        grade,
        suggested_revision,
        raw: raw.to_string(),
    })
}

fn is_absent(text: &str) -> bool {
    let t = text.trim().trim_end_matches('.').trim();
    t.is_empty() || t.eq_ignore_ascii_case("none") || t.eq_ignore_ascii_case("n/a")
}

/// (section, byte offset of body start) for each header, in text order.
fn find_headers(raw: &str) -> Vec<(Section, usize)> {
    let bytes = raw.as_bytes();
    let lower = raw.to_ascii_lowercase();
    let mut out = Vec::new();
    let mut i = 0;
    while i + 1 < bytes.len() {
        if bytes[i] == b'#' && bytes[i + 1] == b'#' && (i == 0 || bytes[i - 1] != b'#') {
            let mut j = i;
            while j < bytes.len() && bytes[j] == b'#' {
                j += 1;
            }
            while j < bytes.len() && (bytes[j] == b' ' || bytes[j] == b'\t') {
                j += 1;
            }
            let rest = &lower[j..];
            if let Some((name, section)) = HEADERS.iter().find(|(name, _)| rest.starts_with(name)) {
                let after = j + name.len();
                let colon = lower[after..].find(|c: char| c != ' ' && c != '*');
                if let Some(off) = colon {
                    if lower.as_bytes()[after + off] == b':' {
                        out.push((*section, after + off + 1));
                        i = after + off + 1;
                        continue;
                    }
                }
            }
            i = j.max(i + 2);
        } else {
            i += 1;
        }
    }
    out
}

/// Walks back from a body offset to the `#` run that opened its header.
fn header_start(raw: &str, body_start: usize) -> usize {
    let head = &raw[..body_start];
    let hash = head.rfind("##").unwrap_or(body_start);
    head[..hash].trim_end_matches('#').len()
}

/// Earliest grade word in the text. "Very Poor" starts before its "Poor",
/// so position order alone keeps it from being read as Poor.
fn find_grade(body: &str) -> Option<Grade> {
    let norm: String = body
        .chars()
        .map(|c| match c {
            '-' | '_' => ' ',
            c => c.to_ascii_lowercase(),
        })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    let words = [
        ("very poor", Grade::VeryPoor),
        ("verypoor", Grade::VeryPoor),
        ("excellent", Grade::Excellent),
        ("good", Grade::Good),
        ("neutral", Grade::Neutral),
        ("poor", Grade::Poor),
    ];
    let bytes = norm.as_bytes();
    for start in 0..norm.len() {
        if start > 0 && bytes[start - 1].is_ascii_alphabetic() {
            continue;
        }
        if !norm.is_char_boundary(start) {
            continue;
        }
        for (word, grade) in words {
            if norm[start..].starts_with(word) {
                let end = start + word.len();
                if end == norm.len() || !bytes[end].is_ascii_alphabetic() {
                    return Some(grade);
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE_CRITIQUE: &str = "## Contribution: The candidate's action contributes to the task by attempting to perform a search for the specified product. It includes most of the necessary attributes such as material, sleeve length, color, size, and price, which are crucial for finding the desired item.\n\n## Feasibility: The action is feasible as it uses the allowed action type \"search[KEYWORDS]\". However, there are some discrepancies in the keywords used. The candidate action uses \"XXL\" instead of \"xx-large\" and \"price: under 50\" instead of \"price < 50.00\". While these variations might still yield relevant results, they do not exactly match the specified format.\n\n## Efficiency: The action is relatively efficient as it attempts to gather relevant search results in one step. However, the slight variations in keyword formatting could potentially lead to less precise search results, which might require additional steps to refine the search.\n\n## Overall Grading: Good\n\n## Suggested Revision: Modify the search keywords to exactly match the specified format: search[machine wash moisture wicking men's t-shirts & tanks polyester spandex long sleeve red blue size xx-large price < 50.00]. This ensures consistency and potentially more accurate search results.";

    #[test]
    fn sample_critique_parses() {
        let c = parse_critique(SAMPLE_CRITIQUE).unwrap();
        assert_eq!(c.grade, Grade::Good);
        assert!(c
            .suggested_revision
            .as_deref()
            .unwrap()
            .starts_with("Modify the search keywords"));
        assert!(c.contribution.starts_with("The candidate's action contributes"));
        assert!(c.feasibility.contains("\"price: under 50\""));
        assert!(c.efficiency.ends_with("refine the search."));
    }

    #[test]
    fn very_poor_is_not_poor() {
        assert_eq!(
            parse_critique("## Overall Grading: Very Poor").unwrap().grade,
            Grade::VeryPoor
        );
        assert_eq!(parse_critique("## Overall Grading: Poor").unwrap().grade, Grade::Poor);
    }

    #[test]
    fn missing_grade() {
        assert_eq!(parse_critique("## Contribution: fine"), Err(MissingGrade));
        assert_eq!(parse_critique("## Overall Grading: unclear"), Err(MissingGrade));
        assert_eq!(parse_critique("Overall Grading: Good"), Err(MissingGrade));
    }

    #[test]
    fn order_and_case_independent() {
        let c = parse_critique(
            "## suggested revision: n/a\n## OVERALL GRADING: excellent\n## efficiency: ok\n## Contribution: helps",
        )
        .unwrap();
        assert_eq!(c.grade, Grade::Excellent);
        assert_eq!(c.suggested_revision, None);
        assert_eq!(c.efficiency, "ok");
        assert_eq!(c.contribution, "helps");
        assert_eq!(c.feasibility, "");
    }

    #[test]
    fn inline_headers() {
        let c = parse_critique("## Contribution: a. ## Feasibility: b. ## Efficiency: c. ## Overall Grading: Neutral. ## Suggested Revision: get log").unwrap();
        assert_eq!(c.contribution, "a.");
        assert_eq!(c.feasibility, "b.");
        assert_eq!(c.grade, Grade::Neutral);
        assert_eq!(c.suggested_revision.as_deref(), Some("get log"));
    }

    #[test]
    fn grade_word_boundaries() {
        assert_eq!(
            parse_critique("## Overall Grading: **Very-Poor**").unwrap().grade,
            Grade::VeryPoor
        );
        assert_eq!(
            parse_critique("## Overall Grading: Goodness aside, Neutral")
                .unwrap()
                .grade,
            Grade::Neutral
        );
    }

    #[test]
    fn canonical_round_trip() {
        let c = Critique::new("a", "b", "c", Grade::Poor, Some("craft plank using log".into()));
        assert_eq!(parse_critique(&c.raw).unwrap(), c);
        let c = Critique::new("", "", "", Grade::Excellent, None);
        assert_eq!(parse_critique(&c.raw).unwrap(), c);
    }
}
