use std::collections::BTreeMap;
use std::path::Path;

use posepilot::manifest::{manifest_to_jsonl, parse_manifest};
use posepilot::pose::{parse_thresholds, thresholds_to_toml};
use posepilot::promptsets::{parse_prompt_set, prompt_set_to_toml};
use posepilot::scores::{parse_scores, scores_to_jsonl, ScoreRecord};
use posepilot_core::dataset::{ImageRecord, Manifest, PersonBox};
use posepilot_core::posebaseline::RuleThresholds;
use posepilot_core::prompts::PromptSet;
use posepilot_core::zeroshot::ClassScores;
use posepilot_core::{ClassLabel, Split};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = ClassLabel> {
    prop::sample::select(ClassLabel::ALL.to_vec())
}

/// Any text with at least one visible character, including quotes,
/// backslashes, newlines and non-ASCII.
fn prompt() -> impl Strategy<Value = String> {
    "\\PC{0,12}[a-zA-Z\u{e9}\u{4eba}\"'\\\\]\\PC{0,12}|[ \\t]{0,2}x\n[\"]{0,2}"
}

proptest! {
    #[test]
    fn prompt_sets_survive_toml_verbatim(
        id in "[a-z][a-z0-9_-]{0,10}",
        tier in 0u8..=3,
        revision in 0u64..1000,
        desc in "\\PC{0,20}",
        prompts in prop::collection::vec(prop::collection::vec(prompt(), 1..4), 3),
    ) {
        let map: BTreeMap<ClassLabel, Vec<String>> = ClassLabel::ALL.into_iter().zip(prompts).collect();
        let mut ps = PromptSet::new(&id, tier, &desc, map).unwrap();
        ps.revision = revision;
        let back = parse_prompt_set(&prompt_set_to_toml(&ps), Path::new("p.toml")).unwrap();
        prop_assert_eq!(back, ps);
    }

    #[test]
    fn score_files_keep_full_precision(
        rows in prop::collection::vec(
            (prop::collection::vec(-1.0f64..1.0, 3), 0.01f64..100.0, label(), any::<bool>(), prop::option::of(label())),
            1..8,
        ),
    ) {
        let records: Vec<ScoreRecord> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (sims, temperature, predicted, abstained, true_label))| ScoreRecord {
                scores: ClassScores {
                    image_id: format!("img_{i}"),
                    similarities: ClassLabel::ALL.into_iter().zip(sims.iter().copied()).collect(),
                    temperature,
                    probabilities: ClassLabel::ALL.into_iter().zip(sims.iter().map(|s| s.abs() / 3.0)).collect(),
                    predicted,
                    margin: sims[0] - sims[1],
                    abstained,
                    prompt_set_id: "tier1".into(),
                },
                true_label,
            })
            .collect();
        let back = parse_scores(&scores_to_jsonl(&records), Path::new("s.jsonl")).unwrap();
        prop_assert_eq!(back, records);
    }

    #[test]
    fn manifests_survive_jsonl(
        rows in prop::collection::vec((label(), 1u32..4000, 1u32..4000, any::<bool>(), 0usize..4), 3..20),
    ) {
        let splits = [Split::Unassigned, Split::Train, Split::Val, Split::Test];
        let records: Vec<ImageRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, &(label, w, h, boxed, split))| {
                let mut r = ImageRecord::new(&format!("r{i}"), &format!("images/{label}/{i}.jpg"), label, w, h);
                r.split = splits[split];
                if boxed {
                    r.person_box = Some(PersonBox::new(0.0, 0.0, f64::from(w) / 3.0, f64::from(h) / 7.0));
                }
                r
            })
            .collect();
        let m = Manifest::new(records).unwrap();
        let text = manifest_to_jsonl(&m);
        let back = parse_manifest(&text, Path::new("m.jsonl")).unwrap();
        prop_assert_eq!(back.records(), m.records());
        prop_assert_eq!(manifest_to_jsonl(&back), text);
    }

    #[test]
    fn thresholds_survive_toml(
        sit_knee in 0.0f64..180.0,
        sit_hip in 0.0f64..180.0,
        stand_knee in 0.0f64..180.0,
        vertical in 0.0f64..90.0,
        spread in 0.0f64..3.0,
    ) {
        let th = RuleThresholds { sit_knee, sit_hip, stand_knee, vertical, spread };
        prop_assert_eq!(parse_thresholds(&thresholds_to_toml(&th), Path::new("t.toml")).unwrap(), th);
    }
}
