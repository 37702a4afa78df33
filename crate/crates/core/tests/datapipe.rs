use std::collections::HashMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unitrain::datapipe::{
    clean_corpus, dedup_chars, dedup_paragraphs, doc_fingerprint, filter_short_sentences, md5_u128, mix_datasets,
    segment_sentences, split_paragraphs, DatasetSpec, Document, PipelineConfig, PipelineStats, RawRecord, Tokenizer,
    DEFAULT_REPEATABLE, LEARNED_BASE,
};

mod common;

#[test]
fn fixture_stages_remove_exactly_what_was_planted() {
    let fx = common::pipeline_fixture();
    let (docs, stats) = clean_corpus(&fx.records, &PipelineConfig::default());
    assert_eq!(stats, fx.planted);
    let got: Vec<(String, Vec<Vec<String>>)> = docs.iter().map(|d| (d.id.clone(), d.paragraphs.clone())).collect();
    assert_eq!(got.len(), fx.expected.len());
    for (g, e) in got.iter().zip(&fx.expected) {
        assert_eq!(g, e);
    }
}

#[test]
fn cleaning_clean_output_changes_nothing() {
    let fx = common::pipeline_fixture();
    let cfg = PipelineConfig::default();
    let (docs, _) = clean_corpus(&fx.records, &cfg);
    let again: Vec<RawRecord> = docs
        .iter()
        .map(|d| RawRecord {
            dataset: d.dataset.clone(),
            doc_id: d.id.clone(),
            title: None,
            text: d.paragraphs.iter().map(|p| p.join(" ")).collect::<Vec<_>>().join("\n"),
            annotations: vec![],
        })
        .collect();
    let (docs2, stats2) = clean_corpus(&again, &cfg);
    let n = docs.len();
    assert_eq!(stats2, PipelineStats { docs_in: n, docs_out: n, ..Default::default() });
    assert!(docs.iter().zip(&docs2).all(|(a, b)| a.paragraphs == b.paragraphs));
}

#[test]
fn each_transform_is_idempotent_on_the_fixture() {
    let fx = common::pipeline_fixture();
    for r in &fx.records {
        let once = dedup_chars(&r.text, DEFAULT_REPEATABLE);
        assert_eq!(dedup_chars(&once, DEFAULT_REPEATABLE), once);
        let (p1, _) = dedup_paragraphs(&split_paragraphs(&once));
        assert_eq!(dedup_paragraphs(&p1), (p1.clone(), 0));
        let (f1, _) = filter_short_sentences(&p1, 10);
        assert_eq!(filter_short_sentences(&f1, 10), (f1.clone(), 0));
    }
}

fn random_sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(3..15);
    let w: Vec<String> = (0..n).map(|_| (0..rng.gen_range(1..8)).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()).collect();
    format!("{}.", w.join(" "))
}

#[test]
fn fingerprint_ignores_top3_order_and_detects_one_char_edits() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let mut s: Vec<String> = (0..rng.gen_range(1..8)).map(|_| random_sentence(&mut rng)).collect();
        let fp = doc_fingerprint(&s).unwrap();
        let mut by_len: Vec<usize> = (0..s.len()).collect();
        by_len.sort_by_key(|&i| std::cmp::Reverse(s[i].len()));
        let top: Vec<usize> = by_len.iter().take(3).copied().collect();
        // the top-3 strictly longer than the rest survive any shuffle
        let strict = s.len() <= 3 || s[top[top.len() - 1]].len() > s[by_len[3]].len();
        if strict {
            let mut shuffled = s.clone();
            shuffled.shuffle(&mut rng);
            assert_eq!(doc_fingerprint(&shuffled).unwrap(), fp);
        }
        let i = top[rng.gen_range(0..top.len())];
        let pos = rng.gen_range(0..s[i].len());
        let old = s[i].as_bytes()[pos];
        let new = if old == b'q' { b'x' } else { b'q' };
        let mut bytes = s[i].clone().into_bytes();
        bytes[pos] = new;
        s[i] = String::from_utf8(bytes).unwrap();
        assert_ne!(doc_fingerprint(&s).unwrap(), fp);
    }
    let one = ["Only this sentence."];
    assert_eq!(doc_fingerprint(&one).unwrap(), md5_u128(one[0]));
    assert!(doc_fingerprint::<&str>(&[]).is_err());
}

#[test]
fn quoted_dialogue_splits_by_rule_trace() {
    // `!` then `"` then space: the quote stays with its sentence, the space follows it.
    let text = "She said, \"Stop!\" He left. \"Why?\" asked Tom... v2.0 shipped!Then \"ok.\"";
    assert_eq!(
        segment_sentences(text),
        vec!["She said, \"Stop!\" ", "He left. ", "\"Why?\" ", "asked Tom... ", "v2.0 shipped!Then \"ok.\""]
    );
    let cjk = "他说：“走！”然后离开。「好。」";
    assert_eq!(segment_sentences(cjk), vec!["他说：“走！”", "然后离开。", "「好。」"]);
    for t in [text, cjk] {
        assert_eq!(segment_sentences(t).concat(), t);
    }
}

#[test]
fn most_frequent_words_become_single_tokens() {
    let vocab = [
        "harbor", "lantern", "meadow", "granite", "willow", "copper", "falcon", "thistle", "ember", "cobalt", "saffron",
        "quiver", "zephyr", "bramble", "tundra", "orchid", "pebble", "walnut", "vortex", "juniper",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // distinct weights so the top ten are unambiguous
    let weights: Vec<usize> = (0..vocab.len()).map(|i| 3 * (vocab.len() - i) + 1).collect();
    let mut bag: Vec<&str> = vocab.iter().zip(&weights).flat_map(|(w, &n)| std::iter::repeat(*w).take(n)).collect();
    bag.shuffle(&mut rng);
    let texts: Vec<String> = bag.chunks(7).map(|c| format!("start {}", c.join(" "))).collect();
    // count " word" runs as they occur after the first word of a line
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for t in &texts {
        for w in t.split(' ').skip(1) {
            *freq.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    assert!(ranked[9].1 > ranked[10].1);
    let tok = Tokenizer::train(&texts, LEARNED_BASE as usize + 16);
    for (w, _) in &ranked[..10] {
        let ids = tok.tokenize(&format!(" {w}"));
        assert_eq!(ids.len(), 1, "{w}");
        assert!(ids[0] >= LEARNED_BASE);
    }
    assert!(tok.tokenize("").is_empty());
}

#[test]
fn mixing_repeats_each_dataset_by_its_multiplier() {
    let doc = |ds: &str, i: usize| Document {
        id: format!("{ds}{i}"),
        dataset: ds.into(),
        title: None,
        paragraphs: vec![vec!["x".into()]],
        raw: String::new(),
        annotations: vec![],
    };
    let mut docs: Vec<Document> = (0..10).map(|i| doc("a", i)).collect();
    docs.extend((0..30).map(|i| doc("b", i)));
    docs.extend((0..4).map(|i| doc("c", i)));
    let spec = |n: &str, m| DatasetSpec { name: n.into(), path: "unused".into(), multiplier: m };
    let specs = [spec("a", 20), spec("b", 1), spec("c", 3)];
    let stream = mix_datasets(&specs, &docs, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(stream.len(), 10 * 20 + 30 + 4 * 3);
    for (i, d) in docs.iter().enumerate() {
        let m = specs.iter().find(|s| s.name == d.dataset).unwrap().multiplier as usize;
        assert_eq!(stream.iter().filter(|&&k| k == i).count(), m);
    }
    let again = mix_datasets(&specs, &docs, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(stream, again);
}

fn para_strategy() -> impl Strategy<Value = Vec<Vec<String>>> {
    let sentence = prop::sample::select(vec![
        "a b c.".to_string(),
        "one two three four five six seven eight nine ten.".to_string(),
        "x.".to_string(),
        "eleven words are here in this sentence for the filter ok.".to_string(),
    ]);
    prop::collection::vec(prop::collection::vec(sentence, 0..4), 0..8)
}

proptest! {
    #[test]
    fn dedup_chars_idempotent(s in "[ab !?.\t\n。]{0,40}") {
        let once = dedup_chars(&s, DEFAULT_REPEATABLE);
        prop_assert_eq!(dedup_chars(&once, DEFAULT_REPEATABLE), once);
    }

    #[test]
    fn dedup_paragraphs_idempotent(p in para_strategy()) {
        let (once, _) = dedup_paragraphs(&p);
        prop_assert_eq!(dedup_paragraphs(&once), (once.clone(), 0));
        prop_assert!(once.windows(2).all(|w| w[0] != w[1] || w[0].is_empty()));
    }

    #[test]
    fn short_filter_idempotent(p in para_strategy(), min in 1usize..12) {
        let (once, removed) = filter_short_sentences(&p, min);
        prop_assert_eq!(filter_short_sentences(&once, min), (once.clone(), 0));
        let total: usize = p.iter().map(Vec::len).sum();
        prop_assert_eq!(once.iter().map(Vec::len).sum::<usize>() + removed, total);
    }

    #[test]
    fn tokenizer_round_trips_any_bytes(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let tok = Tokenizer::train(&["the quick brown fox jumps over the lazy dog the end"], LEARNED_BASE as usize + 20);
        prop_assert_eq!(tok.detokenize_bytes(&tok.tokenize_bytes(&bytes)), bytes);
    }

    #[test]
    fn segments_concatenate_to_input(s in "[a-z .!?\"”。！」]{0,40}") {
        prop_assert_eq!(segment_sentences(&s).concat(), s);
    }
}
