mod common;

use std::collections::BTreeSet;

use hoprag_core::curriculum::{
    build_mask, build_noise_pool, combine, gold_ratio, mix_epoch, noise_scale, perturb_transcript, reward_long,
    reward_short, write_reward_csv, DatasetSpec, PoolItem, Provenance, RewardWeights,
};
use hoprag_core::transcript::{parse_transcript, ReasoningTranscript, Tag};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pool(prefix: &str, n: usize) -> Vec<PoolItem> {
    (0..n)
        .map(|i| PoolItem {
            id: format!("{prefix}{i}"),
            transcript: String::new(),
            gold: "x".into(),
        })
        .collect()
}

/// Expected (gold, core noise, scaled noise) counts, computed independently.
fn expected_counts(epoch: usize, base: usize, turning: usize, c: f64) -> (usize, usize, usize) {
    if epoch == 0 {
        return (base / 2, base - base / 2, 0);
    }
    let ratio = if epoch >= turning { 1.0 } else { epoch as f64 / turning as f64 };
    let gold = (ratio * base as f64).round() as usize;
    let scaled = (c * (1.0 + epoch as f64).ln() * base as f64).round() as usize;
    (gold, base - gold, scaled)
}

#[test]
fn schedule_values() {
    assert_eq!(gold_ratio(1, 5).unwrap(), 0.2);
    assert_eq!(gold_ratio(5, 5).unwrap(), 1.0);
    assert_eq!(gold_ratio(9, 5).unwrap(), 1.0);
    assert!(gold_ratio(0, 5).is_err());
    assert!(gold_ratio(1, 0).is_err());
    assert!((noise_scale(4, 0.1).unwrap() - 0.1 * 5f64.ln()).abs() < 1e-15);
    assert!(noise_scale(1, 0.0).is_err());
}

#[test]
fn turning_epoch_gives_all_gold_core() {
    let spec = DatasetSpec::new(pool("g", 100), pool("n", 200), 5, 1);
    let m = mix_epoch(&spec).unwrap();
    assert_eq!(m.count(Provenance::Gold), 100);
    assert_eq!(m.count(Provenance::Noise), 0);
    assert_eq!(m.count(Provenance::ScaledNoise), 18); // round(0.1 * ln 6 * 100)
}

#[test]
fn cold_start_mixes_evenly() {
    let m = mix_epoch(&DatasetSpec::new(pool("g", 40), pool("n", 40), 0, 2)).unwrap();
    assert_eq!(m.count(Provenance::Gold), 20);
    assert_eq!(m.count(Provenance::Noise), 20);
    assert_eq!(m.gold_ratio, 0.5);
}

#[test]
fn mixing_errors() {
    assert!(mix_epoch(&DatasetSpec::new(vec![], pool("n", 3), 1, 0)).is_err());
    assert!(mix_epoch(&DatasetSpec::new(pool("g", 3), vec![], 1, 0)).is_err());
    assert!(mix_epoch(&DatasetSpec::new(pool("a", 3), pool("a", 3), 1, 0)).is_err());
    // scaled noise beyond the noise pool
    let mut spec = DatasetSpec::new(pool("g", 50), pool("n", 50), 1, 0);
    spec.noise_c = 5.0;
    assert!(mix_epoch(&spec).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mix_matches_independent_counts(epoch in 0usize..12, n_gold in 10usize..80, extra in 0usize..80, seed in any::<u64>()) {
        let spec = DatasetSpec::new(pool("g", n_gold), pool("n", n_gold + extra), epoch, seed);
        let m = mix_epoch(&spec).unwrap();
        let (g, n, s) = expected_counts(epoch, n_gold, 5, 0.1);
        prop_assert_eq!(m.count(Provenance::Gold), g);
        prop_assert_eq!(m.count(Provenance::Noise), n);
        prop_assert_eq!(m.count(Provenance::ScaledNoise), s);
        let ids: BTreeSet<&str> = m.items.iter().map(|i| i.id.as_str()).collect();
        prop_assert_eq!(ids.len(), m.items.len());
        for item in &m.items {
            prop_assert_eq!(item.id.starts_with('g'), item.provenance == Provenance::Gold);
        }
        prop_assert_eq!(&mix_epoch(&spec).unwrap(), &m);
    }
}

#[test]
fn different_epochs_draw_different_items() {
    let a = mix_epoch(&DatasetSpec::new(pool("g", 100), pool("n", 100), 2, 9)).unwrap();
    let b = mix_epoch(&DatasetSpec::new(pool("g", 100), pool("n", 100), 3, 9)).unwrap();
    assert_ne!(a.items, b.items);
    let json: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
    assert_eq!(json["epoch"], 2);
    assert_eq!(json["items"].as_array().unwrap().len(), a.items.len());
}

#[test]
fn perturbation_keeps_grammar_and_adds_a_distractor() {
    let t = parse_transcript(common::table_shaped_transcript()).unwrap();
    let distractors = vec!["[z] Zed: an unrelated <note>".to_string()];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noisy = perturb_transcript(&t, &distractors, &mut rng).unwrap();
    let rendered = noisy.render().unwrap();
    let back = parse_transcript(&rendered).unwrap();
    assert_eq!(back.count(Tag::Result), 2);
    assert!(back.is_wrapped());
    for (a, b) in t.segments().iter().zip(back.segments()) {
        assert_eq!(a.tag, b.tag);
        if a.tag == Tag::Result {
            assert_eq!(b.text.lines().count(), a.text.lines().count() + 1);
            assert!(b.text.contains("[z] Zed: an unrelated &lt;note>"));
        } else {
            assert_eq!(a.text, b.text);
        }
    }
    assert!(perturb_transcript(&t, &[], &mut rng).is_err());

    let gold = vec![PoolItem { id: "a".into(), transcript: common::table_shaped_transcript().into(), gold: "The Mask Of Fu Manchu".into() }];
    let noise = build_noise_pool(&gold, &distractors, 1).unwrap();
    assert_eq!(noise[0].id, "noise-a");
    assert_eq!(noise, build_noise_pool(&gold, &distractors, 1).unwrap());
}

fn weights() -> RewardWeights {
    RewardWeights::default()
}

#[test]
fn short_reward_examples() {
    let boxed = "<question>q</question>\n<short_answer>The answer is \\boxed{France}</short_answer>";
    let r = reward_short(boxed, "France", &weights()).unwrap();
    assert_eq!((r.fmt, r.len, r.acc), (1.0, 1.0, 1.0));
    assert!((r.total - 1.0).abs() < 1e-12);

    let bare = "<question>q</question>\n<short_answer>France</short_answer>";
    let r = reward_short(bare, "france", &weights()).unwrap();
    assert!((r.total - (0.3 * 0.5 + 0.2 + 0.5)).abs() < 1e-12);

    let broken = "<question>q</question>";
    let r = reward_short(broken, "France", &weights()).unwrap();
    assert_eq!(r.total, 0.0);

    // 20 answer tokens against a target of 16: (64 - 20) / 48
    let long_short = format!("<question>q</question><short_answer>{} \\boxed{{France}}</short_answer>", "w ".repeat(19));
    let r = reward_short(&long_short, "France", &weights()).unwrap();
    assert!((r.len - 44.0 / 48.0).abs() < 1e-12);

    let partial = "<question>q</question><short_answer>\\boxed{Paris France}</short_answer>";
    let r = reward_short(partial, "France", &weights()).unwrap();
    assert!((r.acc - 2.0 / 3.0).abs() < 1e-12);

    assert!(reward_short(boxed, " ", &weights()).is_err());
}

#[test]
fn long_reward_examples() {
    let text = "<question>q</question><long_answer>France won the final. The answer is \\boxed{France}</long_answer>";
    let r = reward_long(text, "France", &weights()).unwrap();
    assert_eq!(r.structure, Some(1.0));
    assert!((r.len - 8.0 / 128.0).abs() < 1e-12);
    assert!((r.total - (0.25 + 0.2 * 8.0 / 128.0 + 0.4 + 0.15)).abs() < 1e-12);

    let short_only = "<question>q</question><short_answer>\\boxed{France}</short_answer>";
    assert_eq!(reward_long(short_only, "France", &weights()).unwrap().structure, Some(0.0));

    let rows = vec![
        ("a".to_string(), reward_short(short_only, "France", &weights()).unwrap()),
        ("b,c".to_string(), r),
    ];
    let mut buf = Vec::new();
    write_reward_csv(&rows, &mut buf).unwrap();
    let csv = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "id,fmt,len,acc,struct,total");
    assert_eq!(lines[1].split(',').nth(4), Some(""));
    assert!(lines[2].starts_with("b;c,"));
}

#[test]
fn weights_must_lie_on_the_simplex() {
    assert!(combine(&[1.0, 1.0], &[0.5, 0.5]).is_ok());
    assert!(combine(&[1.0, 1.0], &[0.6, 0.5]).is_err());
    assert!(combine(&[1.0], &[0.5, 0.5]).is_err());
    assert!(combine(&[1.0, 1.0], &[1.5, -0.5]).is_err());
    let mut w = weights();
    w.short = [0.5, 0.5, 0.5];
    assert!(reward_short("<question>q</question><answer>x</answer>", "x", &w).is_err());
}

#[test]
fn mask_examples() {
    let mut t = ReasoningTranscript::new();
    t.push(Tag::Question, "q").unwrap();
    t.push(Tag::ShortAnswer, "\\boxed{a}").unwrap();
    let m = build_mask(&t).unwrap();
    assert_eq!(m.zeros(), 0);
    assert_eq!(m.len(), t.tokens().len());

    let mut t = ReasoningTranscript::new();
    t.push(Tag::Question, "q").unwrap();
    t.push(Tag::Search, "s").unwrap();
    t.push(Tag::Result, "tok ".repeat(50).trim_end()).unwrap();
    t.push(Tag::ShortAnswer, "\\boxed{a}").unwrap();
    let m = build_mask(&t).unwrap();
    assert_eq!(m.zeros(), 50);
    let tokens = t.tokens();
    for (tok, v) in tokens.iter().zip(&m.values) {
        if tok.is_tag {
            assert_eq!(*v, 1);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mask_zeros_exactly_result_content(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = common::random_transcript(&mut rng);
        let mask = build_mask(&t).unwrap();
        let flags = common::rescan_result_flags(&t.render().unwrap());
        prop_assert_eq!(flags.len(), mask.len());
        for (inside, v) in flags.iter().zip(&mask.values) {
            prop_assert_eq!(*v, u8::from(!*inside));
        }
    }
}
