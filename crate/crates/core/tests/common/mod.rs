//! Shared fixtures for integration tests: an in-memory synthetic dataset
//! with segment-dependent tool informativeness, and scripted gateway oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use medley::catalog::{BehaviorSequence, Catalog, Dataset, ItemId, UserId, UserTable};
use medley::gateway::{section, Gateway, GatewayConfig, LlmBackend, LlmRequest, MockOracle, PromptKind};

/// Which tool should win for a user in the segment dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Segment {
    /// Next item follows a deterministic item cycle: sequential territory.
    Cycle,
    /// Next item completes a user-group item block: factorization territory.
    Block,
}

pub struct SegmentData {
    pub dataset: Dataset,
    pub segments: Vec<Segment>,
}

/// 200 users over 100 items.
///
/// - Users 0..100 walk an item cycle over items 0..30: train is 11
///   consecutive cycle items, the target is the next one. Only transition
///   order reveals the target.
/// - Users 100..200 each belong to one of two 24-item blocks (items
///   30..54, 54..78); train is 9 random block items plus a shared hub item
///   (99) consumed last, the target is another block item. The hub has no
///   outgoing transitions, so sequential prediction degrades to popularity,
///   while the block structure is exactly what factorization recovers.
pub fn segment_dataset(seed: u64) -> SegmentData {
    let n_items = 100u32;
    let cycle_len = 30u32;
    let hub = 99u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut sequences = Vec::new();
    let mut segments = Vec::new();

    for u in 0..100u32 {
        let phase = rng.gen_range(0..cycle_len);
        let items: Vec<ItemId> = (0..12)
            .map(|j| ItemId((phase + j) % cycle_len))
            .collect();
        sequences.push(BehaviorSequence {
            user: UserId(u),
            items,
            timestamps: (0..12).collect(),
        });
        segments.push(Segment::Cycle);
    }

    for u in 100..200u32 {
        let block_start = 30 + 24 * ((u - 100) / 50);
        let mut block: Vec<u32> = (block_start..block_start + 24).collect();
        for i in (1..block.len()).rev() {
            let j = rng.gen_range(0..=i);
            block.swap(i, j);
        }
        let mut items: Vec<ItemId> = block[..9].iter().map(|&i| ItemId(i)).collect();
        items.push(ItemId(hub));
        // Hub is 10th; one more block item precedes the target so the
        // sequence still ends train on the hub (k = 1, c = 10 -> train 11).
        items.insert(0, ItemId(block[10]));
        items.push(ItemId(block[9])); // target
        sequences.push(BehaviorSequence {
            user: UserId(u),
            items,
            timestamps: (0..12).collect(),
        });
        segments.push(Segment::Block);
    }

    let catalog = Catalog::new(
        (0..n_items).map(|i| format!("k{i:03}")).collect(),
        (0..n_items).map(|i| format!("product {i:03} unit")).collect(),
    );
    let users = UserTable::new((0..200).map(|u| format!("u{u:03}")).collect());
    SegmentData {
        dataset: Dataset {
            catalog,
            users,
            sequences,
            stats: Default::default(),
        },
        segments,
    }
}

/// Scripted "correct choice" oracle: in tool comparison it answers the group
/// whose item list contains the target item's description line; intent goes
/// to substitutes; generation/rerank calls echo deterministically.
pub fn correct_choice_oracle() -> Gateway {
    Gateway::new(
        LlmBackend::Mock(MockOracle::from_fn(correct_choice_script)),
        GatewayConfig::default(),
    )
}

fn correct_choice_script(req: &LlmRequest) -> Option<String> {
    match req.kind {
        PromptKind::ToolCompare => {
            let target = section(&req.prompt, "[Target Item]").lines().next()?.trim().to_string();
            for (label, header) in [("A", "[Group A]"), ("B", "[Group B]"), ("C", "[Group C]")] {
                let hit = section(&req.prompt, header)
                    .lines()
                    .any(|line| line.trim() == target);
                if hit {
                    return Some(label.to_string());
                }
            }
            Some("A".to_string())
        }
        PromptKind::IntentCompare => Some("1".to_string()),
        PromptKind::RegularIntent => Some("Yes".to_string()),
        PromptKind::ProfileSummarize => Some("steady repeat shopper".to_string()),
        PromptKind::GenerateSubstitutes => Some("alt one\nalt two".to_string()),
        PromptKind::GenerateComplements => Some("pair one\npair two".to_string()),
        PromptKind::GeneralRerank | PromptKind::SimilarityRerank => {
            Some(medley::gateway::candidate_ids(&req.prompt).join("\n"))
        }
        PromptKind::VdcgRate => Some("0".to_string()),
    }
}
