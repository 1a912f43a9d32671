mod common;

use hoprag_core::dynamic_sampler::{SamplerConfig, SamplerState};
use hoprag_core::embed::{embed, Embedding, HashingEmbedder};
use hoprag_core::retrieval::{batch_search, search, SearchConfig, SearchSession};
use hoprag_core::vector_index::{build_index, exhaustive_search, ClusterIndex, DocumentRecord, IndexParams};
use hoprag_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vectors(n: usize, dim: usize, seed: u64) -> (Vec<String>, Vec<Embedding>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = (0..n).map(|i| format!("d{i:04}")).collect();
    let vectors = (0..n)
        .map(|_| Embedding::normalized((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap())
        .collect();
    (ids, vectors)
}

fn params(dim: usize, m: usize, seed: u64) -> IndexParams {
    IndexParams {
        dim,
        n_clusters: 6,
        min_doc: 10,
        m,
        kmeans_iterations: 8,
        pq_iterations: 4,
        pq_train_cap: 5_000,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn serialized_index_round_trips(n in 1usize..160, seed in any::<u64>()) {
        let (ids, vectors) = random_vectors(n, 16, seed);
        let index = ClusterIndex::build(&ids, &vectors, &params(16, 8, seed)).unwrap();
        let bytes = index.to_bytes();
        let back = ClusterIndex::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        back.check_consistency().unwrap();
        prop_assert_eq!(back.doc_ids(), index.doc_ids());
        for id in ids.iter().take(5) {
            prop_assert_eq!(back.reconstruct(id).unwrap(), index.reconstruct(id).unwrap());
        }
    }

    #[test]
    fn every_document_is_posted_exactly_once(n in 1usize..200, seed in any::<u64>()) {
        let (ids, vectors) = random_vectors(n, 16, seed);
        let index = ClusterIndex::build(&ids, &vectors, &params(16, 4, seed)).unwrap();
        prop_assert_eq!(index.posting_sizes().iter().sum::<usize>(), n);
        let mut all: Vec<u32> = (0..index.n_clusters()).flat_map(|c| index.postings(c).to_vec()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n as u32).collect::<Vec<_>>());
    }
}

#[test]
fn corrupted_bytes_are_rejected() {
    let (ids, vectors) = random_vectors(50, 16, 1);
    let index = ClusterIndex::build(&ids, &vectors, &params(16, 8, 1)).unwrap();
    let bytes = index.to_bytes();
    assert!(matches!(ClusterIndex::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0xff;
    assert!(ClusterIndex::from_bytes(&flipped).is_err());
    assert!(ClusterIndex::from_bytes(b"not an index").is_err());
}

#[test]
fn save_and_load_through_a_file() {
    let (ids, vectors) = random_vectors(80, 16, 2);
    let index = ClusterIndex::build(&ids, &vectors, &params(16, 8, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("idx.bin");
    index.save(&path).unwrap();
    assert_eq!(ClusterIndex::load(&path).unwrap().to_bytes(), index.to_bytes());
    assert!(ClusterIndex::load(dir.path().join("missing.bin")).is_err());
}

#[test]
fn build_is_deterministic_for_a_seed() {
    let (ids, vectors) = random_vectors(120, 16, 3);
    let a = ClusterIndex::build(&ids, &vectors, &params(16, 8, 9)).unwrap();
    let b = ClusterIndex::build(&ids, &vectors, &params(16, 8, 9)).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn invalid_builds_are_errors() {
    let (ids, vectors) = random_vectors(10, 16, 4);
    assert!(ClusterIndex::build(&[], &[], &params(16, 8, 0)).is_err());
    assert!(ClusterIndex::build(&ids, &vectors, &params(16, 5, 0)).is_err());
    assert!(ClusterIndex::build(&ids[..5], &vectors, &params(16, 8, 0)).is_err());
    let dup: Vec<String> = vec!["x".into(); 10];
    assert!(ClusterIndex::build(&dup, &vectors, &params(16, 8, 0)).is_err());
    let docs = vec![DocumentRecord::new("e", "Empty", "")];
    assert!(build_index(&docs, &HashingEmbedder::new(16), &params(16, 8, 0)).is_err());
}

#[test]
fn search_returns_sorted_top_k_and_whole_small_corpus() {
    let (ids, vectors) = random_vectors(300, 16, 5);
    let index = ClusterIndex::build(&ids, &vectors, &params(16, 8, 5)).unwrap();
    let state = SamplerState::for_index(&index, SamplerConfig::default()).unwrap();
    let out = search(&index, vectors[17].as_slice(), &state, 10, 0.1).unwrap();
    assert_eq!(out.results.len(), 10);
    assert!(out.results.windows(2).all(|w| w[0].score >= w[1].score));
    assert_eq!(out.results[0].doc_id, "d0017");

    let (ids, vectors) = random_vectors(6, 16, 6);
    let small = ClusterIndex::build(&ids, &vectors, &params(16, 8, 6)).unwrap();
    let state = SamplerState::for_index(&small, SamplerConfig::default()).unwrap();
    let out = search(&small, vectors[0].as_slice(), &state, 50, 0.1).unwrap();
    let mut got: Vec<_> = out.results.iter().map(|d| d.doc_id.clone()).collect();
    got.sort();
    assert_eq!(got, ids);
    assert!(search(&small, &[0.0; 8], &state, 5, 0.1).is_err());
}

#[test]
fn batch_search_matches_independent_searches() {
    let (ids, vectors) = random_vectors(400, 16, 7);
    let index = ClusterIndex::build(&ids, &vectors, &params(16, 8, 7)).unwrap();
    let config = SearchConfig::default();
    let state = SamplerState::for_index(&index, config.sampler.clone()).unwrap();
    let queries: Vec<Vec<f32>> = vectors.iter().step_by(40).map(|v| v.as_slice().to_vec()).collect();
    let batch = batch_search(&index, &queries, &state, &config).unwrap();
    for (q, got) in queries.iter().zip(&batch) {
        let one = search(&index, q, &state, config.top_k, config.rerank_fraction).unwrap();
        assert_eq!(&one.results, got);
    }
}

#[test]
fn session_anneals_with_each_query() {
    let (ids, vectors) = random_vectors(200, 16, 8);
    let index = ClusterIndex::build(&ids, &vectors, &params(16, 8, 8)).unwrap();
    let mut session = SearchSession::new(&index, &SearchConfig::default()).unwrap();
    let tau0 = session.state().temperature();
    for v in vectors.iter().take(20) {
        session.search(v.as_slice()).unwrap();
    }
    assert_eq!(session.state().t, 20);
    assert!(session.state().temperature() < tau0);
}

#[test]
fn text_search_ranks_exact_document_first() {
    let docs = common::world_cup_docs();
    let backend = common::backend_from("local", &docs);
    let embedder = HashingEmbedder::new(256);
    let vectors: Vec<_> = docs.iter().map(|d| embed(&d.text, &embedder, 256).unwrap()).collect();
    let ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
    for (i, v) in vectors.iter().enumerate() {
        assert_eq!(exhaustive_search(v.as_slice(), &ids, &vectors, 1)[0].doc_id, ids[i]);
        let state = SamplerState::for_index(&backend.index, SamplerConfig::default()).unwrap();
        let out = search(&backend.index, v.as_slice(), &state, 3, 0.1).unwrap();
        assert_eq!(out.results[0].doc_id, ids[i]);
    }
}
