//! Prompt templates. Placeholders are `{lowercase_idents}`; literal brace
//! groups such as `{A, B, C}` are left untouched by the renderer.

use super::{GatewayError, PromptKind};

const PROFILE_SUMMARIZE: &str = "\
[Instruction]
Summarize the user's preference based on the historical items this user purchased under {domain}.

[Historical Items]
{item_descriptions}
";

const GENERATE_SUBSTITUTES: &str = "\
[Instruction]
According to the historical items purchased by a user, generate {length} substitutes of these items under {domain}.

[Historical Items]
{item_descriptions}

The output must be one list of item titles in length of {length}, separated by lines.
";

const GENERATE_COMPLEMENTS: &str = "\
[Instruction]
According to the historical items purchased by a user, generate {length} complements of these items under {domain}.

[Historical Items]
{item_descriptions}

The output must be one list of item titles in length of {length}, separated by lines.
";

const TOOL_COMPARE: &str = "\
[Instruction]
Under {domain}, according to the descriptions of items in three groups A, B and C, evaluate which group the target item is most relevant to.

[Group A]
{group_a}

[Group B]
{group_b}

[Group C]
{group_c}

[Target Item]
{target}

The output must be one single character in {A, B, C} denoting the most relevant group.
";

const INTENT_COMPARE: &str = "\
[Instruction]
Given the two groups of items under {domain}, evaluate which group is more relevant to the target item.

[Group 1]
{group_1}

[Group 2]
{group_2}

[Target Item]
{target}

The output must be one single number in {1, 2} denoting the more relevant group.
";

const REGULAR_INTENT: &str = "\
[Instruction]
According to the historical items purchased by a user under {domain}, evaluate if this user exhibits clear substitute/complement patterns or not.

[Historical Items]
{item_descriptions}

The output must be one single word in {Yes, No}.
";

const GENERAL_RERANK: &str = "\
[Instruction]
According to the user profile, rank top-{length} items this user may prefer from the candidate item list, from higher to lower probability.

[User Profile]
{user_profile}

[Candidate Item List in format of (ID, description)]
{candidates}

The output must be a list of candidate item IDs with length of {length}, with items separated by lines.
";

const SIMILARITY_RERANK: &str = "\
[Instruction]
Rank top-{length} items from the candidate item list based on their similarity to the target item list, from higher to lower similarity.

[Target Item List ordered by priority]
{target_items}

[Candidate Item List in format of (ID, description)]
{candidates}

The output must be a list of candidate item IDs with length of {length}, with items separated by lines.
";

const VDCG_RATE: &str = "\
[Instruction]
Rate how well the candidate item matches the target item in terms of relevance, usefulness, and user interest, under {domain}. The rating scale ranges from 0 to 9, where 0 indicates an entirely unrelated item and 9 represents a perfect semantic match between the item descriptions.

[Candidate Item]
{candidate}

[Target Item]
{target}

The output must be one single digit from 0 to 9.
";

pub fn template(kind: PromptKind) -> &'static str {
    match kind {
        PromptKind::ProfileSummarize => PROFILE_SUMMARIZE,
        PromptKind::GenerateSubstitutes => GENERATE_SUBSTITUTES,
        PromptKind::GenerateComplements => GENERATE_COMPLEMENTS,
        PromptKind::ToolCompare => TOOL_COMPARE,
        PromptKind::IntentCompare => INTENT_COMPARE,
        PromptKind::RegularIntent => REGULAR_INTENT,
        PromptKind::GeneralRerank => GENERAL_RERANK,
        PromptKind::SimilarityRerank => SIMILARITY_RERANK,
        PromptKind::VdcgRate => VDCG_RATE,
    }
}

/// Renders a template by substituting every `{placeholder}` from `bindings`.
/// A placeholder left unbound is an error naming it; brace groups that are
/// not lowercase identifiers (e.g. `{A, B, C}`, `{1, 2}`) are literal text.
pub fn render(kind: PromptKind, bindings: &[(&str, &str)]) -> Result<String, GatewayError> {
    let text = template(kind);
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) if is_placeholder(&after[..end]) => {
                let name = &after[..end];
                match bindings.iter().find(|(k, _)| *k == name) {
                    Some((_, value)) => out.push_str(value),
                    None => {
                        return Err(GatewayError::MissingPlaceholder {
                            kind,
                            name: name.to_string(),
                        })
                    }
                }
                rest = &after[end + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn is_placeholder(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Formats candidate items as `(ID, description)` lines for rerank prompts.
pub fn candidate_lines(pairs: &[(String, String)]) -> String {
    pairs
        .iter()
        .map(|(id, desc)| format!("({id}, {desc})"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_contains_all_descriptions() {
        let prompt = render(
            PromptKind::ProfileSummarize,
            &[
                ("domain", "Groceries on Instacart"),
                ("item_descriptions", "Organic Bananas\nWhole Milk"),
            ],
        )
        .unwrap();
        assert!(prompt.contains("[Historical Items]\nOrganic Bananas\nWhole Milk"));
        assert!(prompt.contains("under Groceries on Instacart."));
    }

    #[test]
    fn substitutes_requested_length_is_rendered() {
        let prompt = render(
            PromptKind::GenerateSubstitutes,
            &[
                ("domain", "Electronics on Amazon"),
                ("length", "10"),
                ("item_descriptions", "USB hub"),
            ],
        )
        .unwrap();
        assert!(prompt.contains("generate 10 substitutes"));
        assert!(prompt.contains("in length of 10, separated by lines."));
    }

    #[test]
    fn similarity_rerank_demands_id_list() {
        let prompt = render(
            PromptKind::SimilarityRerank,
            &[
                ("length", "20"),
                ("target_items", "tiramisu"),
                ("candidates", "(3, cheesecake)"),
            ],
        )
        .unwrap();
        assert!(prompt.contains("a list of candidate item IDs with length of 20"));
    }

    #[test]
    fn missing_placeholder_is_named() {
        let err = render(PromptKind::ProfileSummarize, &[("domain", "x")]).unwrap_err();
        match err {
            GatewayError::MissingPlaceholder { name, .. } => {
                assert_eq!(name, "item_descriptions")
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn literal_brace_groups_survive() {
        let prompt = render(
            PromptKind::ToolCompare,
            &[
                ("domain", "d"),
                ("group_a", "a"),
                ("group_b", "b"),
                ("group_c", "c"),
                ("target", "t"),
            ],
        )
        .unwrap();
        assert!(prompt.contains("in {A, B, C}"));
        let prompt = render(
            PromptKind::IntentCompare,
            &[
                ("domain", "d"),
                ("group_1", "x"),
                ("group_2", "y"),
                ("target", "t"),
            ],
        )
        .unwrap();
        assert!(prompt.contains("in {1, 2}"));
    }
}
