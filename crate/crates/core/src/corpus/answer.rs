/// Default answer marker; the answer is whatever follows its final occurrence.
pub const DEFAULT_MARKER: &str = "####";

const RATIONAL_TOLERANCE: f64 = 1e-9;

pub fn extract_answer(rationale: &str) -> String {
    extract_answer_with(rationale, DEFAULT_MARKER)
}

pub fn extract_answer_with(rationale: &str, marker: &str) -> String {
    match rationale.rfind(marker) {
        Some(pos) => rationale[pos + marker.len()..].trim().to_string(),
        None => String::new(),
    }
}

/// Trimmed, lowercased, trailing periods removed.
pub fn canonical_answer(text: &str) -> String {
    text.trim().to_lowercase().trim_end_matches('.').trim().to_string()
}

fn parse_rational(text: &str) -> Option<f64> {
    let parse_decimal = |s: &str| -> Option<f64> {
        let s = s.trim();
        if s.is_empty()
            || !s
                .chars()
                .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e'))
        {
            return None;
        }
        s.parse::<f64>().ok().filter(|v| v.is_finite())
    };
    match text.split_once('/') {
        Some((num, den)) => {
            let d = parse_decimal(den)?;
            if d == 0.0 {
                return None;
            }
            Some(parse_decimal(num)? / d)
        }
        None => parse_decimal(text),
    }
}

pub fn answers_match(pred: &str, gold: &str) -> bool {
    let p = canonical_answer(pred);
    let g = canonical_answer(gold);
    if p == g {
        return !p.is_empty();
    }
    match (parse_rational(&p), parse_rational(&g)) {
        (Some(a), Some(b)) => (a - b).abs() <= RATIONAL_TOLERANCE,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction_uses_final_marker() {
        assert_eq!(extract_answer("step1 ... #### 42"), "42");
        assert_eq!(extract_answer("a #### 1 then b #### 7"), "7");
        assert_eq!(extract_answer("no marker here"), "");
        assert_eq!(extract_answer_with("so ANSWER: 12 ", "ANSWER:"), "12");
    }

    #[test]
    fn matching_rules() {
        assert!(answers_match("42", "42"));
        assert!(answers_match("1/2", "0.5"));
        assert!(!answers_match("42", "43"));
        assert!(answers_match(" Yes. ", "yes"));
        assert!(answers_match("-3", "-6/2"));
        assert!(!answers_match("", ""));
    }
}
