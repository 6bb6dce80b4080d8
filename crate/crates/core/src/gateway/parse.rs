//! Strict-but-tolerant parsers for LLM output. Every parser is total: it
//! returns a value or a [`ParseFailure`], never panics, on arbitrary input.
//! Fallback policy on failure belongs to the callers.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseFailure {
    pub expected: &'static str,
    pub snippet: String,
}

impl ParseFailure {
    fn new(expected: &'static str, raw: &str) -> Self {
        let snippet: String = raw.chars().take(80).collect();
        ParseFailure { expected, snippet }
    }
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "expected {} in LLM output {:?}", self.expected, self.snippet)
    }
}

impl std::error::Error for ParseFailure {}

fn tokens(raw: &str) -> impl Iterator<Item = &str> {
    raw.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
}

/// First standalone A/B/C (any case) mapped to 0/1/2.
pub fn parse_choice3(raw: &str) -> Result<usize, ParseFailure> {
    for tok in tokens(raw) {
        if tok.len() == 1 {
            match tok.chars().next().unwrap().to_ascii_uppercase() {
                'A' => return Ok(0),
                'B' => return Ok(1),
                'C' => return Ok(2),
                _ => {}
            }
        }
    }
    Err(ParseFailure::new("one of A/B/C", raw))
}

/// First standalone 1/2 mapped to 0/1.
pub fn parse_choice2(raw: &str) -> Result<usize, ParseFailure> {
    for tok in tokens(raw) {
        match tok {
            "1" => return Ok(0),
            "2" => return Ok(1),
            _ => {}
        }
    }
    Err(ParseFailure::new("1 or 2", raw))
}

/// First standalone Yes/No (any case).
pub fn parse_yesno(raw: &str) -> Result<bool, ParseFailure> {
    for tok in tokens(raw) {
        if tok.eq_ignore_ascii_case("yes") {
            return Ok(true);
        }
        if tok.eq_ignore_ascii_case("no") {
            return Ok(false);
        }
    }
    Err(ParseFailure::new("Yes or No", raw))
}

/// First integer in [0, 9]; a longer digit run (e.g. "10") is out of range.
pub fn parse_rating(raw: &str) -> Result<u32, ParseFailure> {
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            return match raw[start..i].parse::<u32>() {
                Ok(n) if n <= 9 => Ok(n),
                _ => Err(ParseFailure::new("a rating from 0 to 9", raw)),
            };
        }
        i += 1;
    }
    Err(ParseFailure::new("a rating from 0 to 9", raw))
}

/// Splits on lines and commas, strips bullets/numbering, and returns the
/// remaining tokens in order. No catalog validation happens here; invalid
/// tokens are someone else's hallucination filter problem.
pub fn parse_id_list(raw: &str) -> Vec<String> {
    raw.lines()
        .flat_map(|line| line.split(','))
        .filter_map(clean_token)
        .collect()
}

/// Line-wise variant for generated item titles, which may contain commas.
pub fn parse_title_lines(raw: &str) -> Vec<String> {
    raw.lines().filter_map(clean_token).collect()
}

fn clean_token(raw: &str) -> Option<String> {
    let t = raw
        .trim()
        .trim_start_matches(['-', '*', '•'])
        .trim_matches(|c: char| c.is_whitespace() || c == '"' || c == '\'' || c == '`');
    let t = strip_numbering(t);
    let t = t.trim_matches(|c: char| c.is_whitespace() || c == '(' || c == ')');
    if t.is_empty() {
        None
    } else {
        Some(t.to_string())
    }
}

/// Removes a leading `1.` / `2)` / `(3)` style numbering prefix. A bare
/// number is content, not numbering, and is kept.
fn strip_numbering(s: &str) -> &str {
    let body = s.strip_prefix('(').unwrap_or(s);
    let digits = body.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return s;
    }
    let rest = &body[digits..];
    let mut chars = rest.chars();
    match chars.next() {
        Some('.') | Some(')') | Some(':') | Some(']') => {
            let after = chars.as_str();
            if after.trim_start().is_empty() {
                // "3)" alone: the digits are the content.
                &body[..digits]
            } else if after.starts_with(char::is_whitespace) {
                after.trim_start()
            } else {
                s
            }
        }
        _ => s,
    }
}
