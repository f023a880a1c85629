mod support;

use std::sync::Mutex;

use lectern_core::qa::{answer_question, AdapterError, EchoModel, LanguageModel};
use lectern_core::store::{directory_digest, load_store, save_store};
use lectern_core::{BagOfWordsEmbedder, LectureSegment, QueryContext, RagStore, RetrievalConfig, SegmentationConfig, Stage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Remembers every prompt it is given and answers with a constant.
#[derive(Default)]
struct RecordingModel {
    prompts: Mutex<Vec<String>>,
}

impl LanguageModel for RecordingModel {
    fn complete(&self, prompt: &str) -> Result<String, AdapterError> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        Ok("ok".into())
    }
}

/// Every segment text carries a unique tag so no text can occur inside another.
fn tagged_store(rng: &mut impl Rng, n: usize) -> RagStore {
    let segments: Vec<LectureSegment> = (0..n)
        .map(|i| LectureSegment {
            segment_id: format!("lec-{i:04}"),
            lecture_id: "lec".into(),
            start: i as f64 * 15.0,
            end: i as f64 * 15.0 + 14.0,
            text: format!("<{i:04}> {}", support::random_words(rng, 3, 15)),
        })
        .collect();
    RagStore::build(segments, &BagOfWordsEmbedder::new(64), &SegmentationConfig::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prompt_contains_only_retrieved_text(seed in any::<u64>(), n in 1usize..=120, evidence in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = tagged_store(&mut rng, n);
        let model = RecordingModel::default();
        let question = support::random_words(&mut rng, 1, 6);
        let ctx = QueryContext::new(question, rng.random_range(0.0..n as f64 * 15.0));
        let cfg = RetrievalConfig { evidence, ..RetrievalConfig::default() };
        let answer = answer_question(&store, &BagOfWordsEmbedder::new(64), &model, &ctx, &cfg).unwrap();

        let prompt = model.prompts.lock().unwrap().pop().unwrap();
        for seg in store.segments() {
            let cited = answer.evidence_ids.contains(&seg.segment_id);
            prop_assert_eq!(prompt.contains(&seg.text), cited, "{}", seg.segment_id);
        }
        prop_assert!(answer.timings.retrieval.is_some_and(|s| s >= 0.0));
        prop_assert!(answer.timings.llm.is_some_and(|s| s >= 0.0));
    }
}

#[test]
fn answering_leaves_the_store_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dir = tempfile::tempdir().unwrap();
    save_store(&tagged_store(&mut rng, 80), dir.path()).unwrap();
    let before = directory_digest(dir.path()).unwrap();

    let store = load_store(dir.path()).unwrap();
    let embedder = BagOfWordsEmbedder::new(64);
    for i in 0..50 {
        let ctx = QueryContext::new(support::random_words(&mut rng, 1, 5), i as f64 * 20.0);
        let answer = answer_question(&store, &embedder, &EchoModel, &ctx, &RetrievalConfig::default()).unwrap();
        for stage in [Stage::Retrieval, Stage::Llm] {
            assert!(answer.timings.get(stage).is_some());
        }
    }
    assert_eq!(directory_digest(dir.path()).unwrap(), before);
}
