#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use hoprag_core::embed::HashingEmbedder;
use hoprag_core::pipeline::{Backend, EpisodeScript, PipelineConfig, ScriptedAlternative, ScriptedRound};
use hoprag_core::transcript::{ReasoningTranscript, Tag};
use hoprag_core::vector_index::{build_index, DocumentRecord, IndexParams};
use rand::Rng;

const WORDS: [&str; 24] = [
    "alpha", "river", "stone", "7", "north", "film", "1933", "release", "date", "of", "the", "is", "cup", "host",
    "search", "maybe", "{x}", "b.c.", "q?", "x-ray", "&amp;", "boxed", "ünï", "\\boxed{A}",
];

pub fn words(rng: &mut impl Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push_str(if rng.random_bool(0.1) { "\n" } else { " " });
        }
        out.push_str(WORDS[rng.random_range(0..WORDS.len())]);
    }
    out
}

/// A random transcript that satisfies the grammar by construction.
pub fn random_transcript(rng: &mut impl Rng) -> ReasoningTranscript {
    let mut t = ReasoningTranscript::new();
    if rng.random_bool(0.5) {
        t.push(Tag::Background, words(rng, 1, 12)).unwrap();
    }
    t.push(Tag::Question, words(rng, 1, 10)).unwrap();
    for _ in 0..rng.random_range(0..=2) {
        t.push(Tag::Search, words(rng, 1, 5)).unwrap();
        t.push(Tag::Result, words(rng, 0, 30)).unwrap();
    }
    for _ in 0..rng.random_range(0..=4) {
        t.push(Tag::Think, words(rng, 1, 15)).unwrap();
        for _ in 0..rng.random_range(0..=3) {
            t.push(Tag::Search, words(rng, 1, 5)).unwrap();
            t.push(Tag::Result, words(rng, 0, 60)).unwrap();
        }
    }
    let payload = format!("{} \\boxed{{{}}}", words(rng, 0, 6), words(rng, 1, 2).replace(['{', '}'], ""));
    match rng.random_range(0..4) {
        0 => t.push(Tag::ShortAnswer, payload).unwrap(),
        1 => t.push(Tag::LongAnswer, payload).unwrap(),
        2 => t.push(Tag::Answer, payload).unwrap(),
        _ => {
            let tag = if rng.random_bool(0.5) { Tag::ShortAnswer } else { Tag::LongAnswer };
            t.push_wrapped_answer(tag, payload).unwrap();
        }
    }
    t
}

/// Shaped like the worked example of the tag format: background, question,
/// a think with two searches, a second think, a wrapped short answer.
pub fn table_shaped_transcript() -> &'static str {
    "<background>Describe the movie \"Inception\"? Inception is a science fiction action film from 2010.</background>\n\
<question>Which film came out first, Blind Shaft or The Mask Of Fu Manchu?</question>\n\
<think>The key is the release year of each film, so I will search for both.</think>\n\
<search>Blind Shaft release date</search>\n\
<result>Blind Shaft is a 2003 film about coal miners.</result>\n\
<search>The Mask Of Fu Manchu release date</search>\n\
<result>The Mask of Fu Manchu is a 1932 pre-Code film.</result>\n\
<think>1932 is earlier than 2003.</think>\n\
<answer>\n<short_answer>The final answer is \\boxed{The Mask Of Fu Manchu}</short_answer>\n</answer>"
}

/// Tokens of a rendered transcript with an "inside a result" flag, found by
/// scanning tag text directly rather than through the segment model.
pub fn rescan_result_flags(rendered: &str) -> Vec<bool> {
    let mut flags = Vec::new();
    let mut inside = false;
    let mut rest = rendered;
    while !rest.is_empty() {
        match rest.find('<') {
            Some(0) => {
                let end = rest.find('>').expect("closed tag") + 1;
                match &rest[..end] {
                    "<result>" => inside = true,
                    "</result>" => inside = false,
                    _ => {}
                }
                flags.push(false);
                rest = &rest[end..];
            }
            Some(i) => {
                flags.extend(rest[..i].split_whitespace().map(|_| inside));
                rest = &rest[i..];
            }
            None => {
                flags.extend(rest.split_whitespace().map(|_| inside));
                rest = "";
            }
        }
    }
    flags
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

pub fn small_index_params() -> IndexParams {
    IndexParams {
        dim: 256,
        n_clusters: 4,
        min_doc: 50,
        m: 64,
        kmeans_iterations: 30,
        pq_iterations: 10,
        pq_train_cap: 10_000,
        seed: 5,
    }
}

pub fn backend_from(name: &str, docs: &[DocumentRecord]) -> Backend {
    let embedder = Arc::new(HashingEmbedder::new(256));
    let (index, _) = build_index(docs, embedder.as_ref(), &small_index_params()).unwrap();
    Backend::new(name, index, docs, embedder).unwrap()
}

pub fn world_cup_docs() -> Vec<DocumentRecord> {
    [
        ("wc2018", "2018 FIFA World Cup", "Russia hosted the 2018 FIFA World Cup. France won the final against Croatia in Moscow."),
        ("wc2014", "2014 FIFA World Cup", "Brazil hosted the 2014 FIFA World Cup and Germany won the final."),
        ("wc2022", "2022 FIFA World Cup", "Qatar hosted the 2022 FIFA World Cup and Argentina won the final."),
        ("ru2018", "2018 Russian presidential election", "Vladimir Putin won the 2018 Russian presidential election."),
        ("ru", "Russia", "Russia elects its president every six years."),
        ("fr", "France national football team", "France won its second World Cup title in 2018."),
        ("mx2018", "2018 Mexican general election", "Andres Manuel Lopez Obrador won the 2018 Mexican general election."),
        ("br2018", "2018 Brazilian general election", "Jair Bolsonaro won the 2018 Brazilian presidential election."),
    ]
    .into_iter()
    .map(|(id, title, text)| DocumentRecord::new(id, title, text))
    .collect()
}

fn round(think: &str, query: &str, answer: &str, confidence: f64, alternatives: &[(&str, f64)]) -> ScriptedRound {
    ScriptedRound {
        think: think.into(),
        query: query.into(),
        answer: answer.into(),
        confidence,
        alternatives: alternatives
            .iter()
            .map(|&(a, c)| ScriptedAlternative {
                answer: a.into(),
                confidence: c,
            })
            .collect(),
    }
}

/// Answers that keep circling one country; the bare name reaches the
/// repetition limit in round 6, and in round 7 a more confident
/// alternative takes over.
pub fn world_cup_script() -> EpisodeScript {
    EpisodeScript {
        question: "Who won the World Cup hosted by the country whose president won the 2018 election?".into(),
        background: None,
        gold: "France".into(),
        rounds: vec![
            round("The 2018 election points to Russia.", "2018 presidential election winner", "Russia", 0.55, &[]),
            round("Russia hosted a World Cup.", "World Cup hosted by Russia", "Russia", 0.6, &[]),
            round("The hosted tournament was in 2018.", "2018 World Cup host", "Russia (2018)", 0.62, &[]),
            round("I keep landing on the host country.", "Russia World Cup", "Russia", 0.64, &[("Croatia", 0.3)]),
            round("The host is not the winner I was asked for.", "2018 World Cup host nation", "Russia (Host)", 0.66, &[]),
            round("Still the host country.", "Russia 2018", "Russia", 0.68, &[]),
            round(
                "The question asks who won, not who hosted.",
                "2018 FIFA World Cup final winner",
                "Russia",
                0.7,
                &[("France", 0.97), ("Croatia", 0.4)],
            ),
            round("Unused.", "unused", "France", 0.5, &[]),
        ],
    }
}

pub fn world_cup_config() -> PipelineConfig {
    PipelineConfig {
        routing_enabled: false,
        seed: 42,
        ..PipelineConfig::default()
    }
}
