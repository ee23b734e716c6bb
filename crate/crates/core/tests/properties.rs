mod common;

use std::collections::HashSet;

use ecforge_core::blend::{self, MixRatio};
use ecforge_core::clients::{Embedder, EmbeddingVector, MockClient, MockConfig};
use ecforge_core::corpus::{
    emit_corpus, parse_corpus, split_corpus, Corpus, CorpusFormat, Document, Pair, PairSet,
    SplitTag,
};
use ecforge_core::eval::{self, MatchCounts};
use ecforge_core::knowledge::{
    cosine, AnnotatedDocument, CommonsenseResult, EmotionLabel, EmotionalKnowledge, Knowledge,
    LabelDistribution,
};
use ecforge_core::template::{self, TemplateConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pair_set(max_index: u32, max_len: usize) -> impl Strategy<Value = PairSet> {
    prop::collection::btree_set((1..=max_index, 1..=max_index), 1..=max_len)
        .prop_map(|s| s.into_iter().map(|(e, c)| Pair::new(e, c)).collect())
}

fn document() -> impl Strategy<Value = Document> {
    prop::collection::vec("[A-Za-z][A-Za-z ,.'!?]{0,30}", 2..6)
        .prop_flat_map(|clauses| {
            let n = clauses.len() as u32;
            (Just(clauses), pair_set(n, 3))
        })
        .prop_map(|(clauses, pairs)| Document::new("x", clauses, pairs.iter().copied()))
}

fn corpus() -> impl Strategy<Value = Corpus> {
    prop::collection::vec(document(), 1..30).prop_map(|docs| {
        let docs = docs
            .into_iter()
            .enumerate()
            .map(|(i, mut d)| {
                d.doc_id = format!("doc-{i}");
                d
            })
            .collect();
        Corpus::new(docs, SplitTag::Unsplit)
    })
}

fn vector(dim: usize) -> impl Strategy<Value = EmbeddingVector> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("nonzero", |v| v.iter().any(|x| *x != 0.0))
        .prop_map(|values| EmbeddingVector { values })
}

proptest! {
    #[test]
    fn corpus_survives_emit_and_parse(c in corpus()) {
        let back = parse_corpus(&emit_corpus(&c), CorpusFormat::CanonicalJsonl).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn split_is_a_seeded_partition(c in corpus(), fraction in 0.05f64..0.95, seed: u64) {
        let (train, test) = split_corpus(&c, fraction, seed).unwrap();
        prop_assert_eq!(test.len(), (c.len() as f64 * fraction).round() as usize);
        prop_assert_eq!(train.len() + test.len(), c.len());
        let ids: HashSet<&str> = train.documents.iter().chain(&test.documents).map(|d| d.doc_id.as_str()).collect();
        prop_assert_eq!(ids.len(), c.len());
        let again = split_corpus(&c, fraction, seed).unwrap();
        prop_assert_eq!((train, test), again);
    }

    #[test]
    fn response_grammar_round_trips(s in pair_set(200, 10)) {
        let text = template::render_response(&s).unwrap();
        prop_assert_eq!(template::parse_pairs(&text).pairs, s);
    }

    #[test]
    fn parser_tolerates_spacing_and_fullwidth(s in pair_set(99, 5), spaced: bool) {
        let text: String = s
            .iter()
            .map(|p| {
                let e = p.emotion.to_string();
                let c = p.cause.to_string();
                if spaced {
                    format!("pair ( {e} ,  {c} ) and")
                } else {
                    let wide = |d: &str| d.chars().map(|ch| char::from_u32(ch as u32 - '0' as u32 + '０' as u32).unwrap()).collect::<String>();
                    format!("（{}，{}）", wide(&e), wide(&c))
                }
            })
            .collect::<Vec<_>>()
            .join(" ");
        prop_assert_eq!(template::parse_pairs(&text).pairs, s);
    }

    #[test]
    fn cosine_is_symmetric_and_self_one((u, v) in (1usize..64).prop_flat_map(|d| (vector(d), vector(d)))) {
        prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert!((cosine(&u, &v).unwrap() - cosine(&v, &u).unwrap()).abs() <= 1e-12);
        prop_assert!(cosine(&u, &v).unwrap().abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn distribution_is_sorted_permutation(scores in prop::array::uniform7(prop::sample::select(vec![-0.5, 0.0, 0.25, 0.25, 0.9]))) {
        let d = LabelDistribution::from_canonical_scores(scores);
        let labels: HashSet<EmotionLabel> = d.entries().iter().map(|e| e.label).collect();
        prop_assert_eq!(labels.len(), 7);
        for w in d.entries().windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].label < w[1].label));
        }
        for e in d.entries() {
            let i = EmotionLabel::ALL.iter().position(|l| *l == e.label).unwrap();
            prop_assert_eq!(e.score, scores[i]);
        }
        let json = serde_json::to_string(&d).unwrap();
        prop_assert_eq!(serde_json::from_str::<LabelDistribution>(&json).unwrap(), d);
    }

    #[test]
    fn matching_agrees_with_double_loop(gold in pair_set(10, 6), pred in pair_set(10, 6)) {
        let got = eval::match_pairs(&gold, &pred).unwrap();
        let g: Vec<(u32, u32)> = gold.iter().map(|p| (p.emotion, p.cause)).collect();
        let p: Vec<(u32, u32)> = pred.iter().map(|p| (p.emotion, p.cause)).collect();
        prop_assert_eq!(got, MatchCounts { correct: common::brute_force_correct(&g, &p), proposed: p.len(), gold: g.len() });
    }

    #[test]
    fn f1_is_the_harmonic_mean(gold in 1usize..50, proposed in 0usize..50, correct_frac in 0.0f64..=1.0) {
        let correct = ((gold.min(proposed)) as f64 * correct_frac).floor() as usize;
        let m = eval::prf1(MatchCounts { correct, proposed, gold }).unwrap();
        let p = if proposed == 0 { 0.0 } else { correct as f64 / proposed as f64 };
        let r = correct as f64 / gold as f64;
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        prop_assert!((m.precision - p).abs() < 1e-15 && (m.recall - r).abs() < 1e-15);
        prop_assert!((m.f1 - f).abs() < 1e-12);
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12 && m.f1 >= m.precision.min(m.recall) - 1e-12);
    }

    #[test]
    fn annotated_lines_round_trip(doc in document(), reaction in "[a-z]{1,10}", scores in prop::array::uniform7(-1.0f64..1.0)) {
        let a = AnnotatedDocument {
            knowledge: EmotionalKnowledge {
                doc_id: doc.doc_id.clone(),
                knowledge: Knowledge::Distribution { distribution: LabelDistribution::from_canonical_scores(scores) },
            },
            commonsense: CommonsenseResult::new(doc.doc_id.clone(), reaction),
            document: doc,
        };
        prop_assert_eq!(AnnotatedDocument::from_json_line(&a.to_json_line()).unwrap(), a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn selection_matches_reference_and_nests(seed: u64, n_ecpe in 1usize..12, n_pool in 1usize..90) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ecpe = common::ecpe_records(&mut rng, n_ecpe);
        let pool = common::causal_pool(&mut rng, n_pool);
        let m = MockClient::new(MockConfig::default());
        let embed = |texts: Vec<String>| -> Vec<Vec<f64>> {
            m.embed(&texts).unwrap().into_iter().map(|v| v.values).collect()
        };
        let e_vecs = embed(ecpe.iter().map(|r| r.instruction.clone()).collect());
        let p_vecs = embed(pool.iter().map(|r| r.instruction.clone()).collect());
        let e_ids: Vec<String> = ecpe.iter().map(|r| r.record_id.clone()).collect();
        let p_ids: Vec<String> = pool.iter().map(|r| r.causal_id.clone()).collect();

        let ratios = [MixRatio::new(1), MixRatio::new(2), MixRatio::new(5), MixRatio::new(10)];
        let sweep = blend::sweep(&ecpe, &pool, &ratios, seed, &m).unwrap();
        let mut previous: HashSet<String> = HashSet::new();
        for entry in &sweep {
            let ids: Vec<String> = entry.selection.records.iter().map(|r| r.causal_id.clone()).collect();
            let want = common::reference_selection(&e_ids, &e_vecs, &p_ids, &p_vecs, entry.selection.ratio.quota(n_ecpe));
            prop_assert_eq!(&ids, &want);
            let set: HashSet<String> = ids.into_iter().collect();
            prop_assert!(previous.is_subset(&set));
            previous = set;

            let expected = entry.selection.ratio.quota(n_ecpe).min(n_pool);
            prop_assert_eq!(entry.dataset.stats.causal, expected);
            prop_assert_eq!(entry.dataset.stats.total, n_ecpe + expected);
            prop_assert_eq!(entry.selection.shortfall.is_some(), entry.selection.ratio.quota(n_ecpe) > n_pool);
        }
    }

    #[test]
    fn blend_is_a_seeded_permutation(seed: u64, n_ecpe in 1usize..30, n_pool in 0usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ecpe = common::ecpe_records(&mut rng, n_ecpe);
        let pool = common::causal_pool(&mut rng, n_pool);
        let d = blend::blend(&ecpe, &pool, seed).unwrap();
        let mut got: Vec<String> = d.records.iter().map(|r| r.record_id.clone()).collect();
        let mut want: Vec<String> = ecpe.iter().map(|r| r.record_id.clone()).chain(pool.iter().map(|r| format!("causal:{}", r.causal_id))).collect();
        got.sort();
        want.sort();
        prop_assert_eq!(got, want);
        prop_assert_eq!(d.to_jsonl(), blend::blend(&ecpe, &pool, seed).unwrap().to_jsonl());
    }
}

#[test]
fn toy_instructions_are_distinct() {
    let raw = std::fs::read_to_string(common::toy_dir().join("train.jsonl")).unwrap();
    let corpus = parse_corpus(&raw, CorpusFormat::CanonicalJsonl).unwrap();
    let cfg = TemplateConfig::default();
    let rendered: HashSet<String> = corpus
        .documents
        .iter()
        .map(|d| template::render_plain_instruction(d, &cfg).unwrap())
        .collect();
    assert_eq!(rendered.len(), corpus.len());
}

#[test]
fn bundled_template_matches_defaults() {
    let cfg = TemplateConfig::load(&common::toy_dir().join("template.toml")).unwrap();
    assert_eq!(cfg, TemplateConfig::default());
}
