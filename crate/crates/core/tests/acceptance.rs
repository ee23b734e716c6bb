//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ecforge_core::blend::{self, MixRatio};
use ecforge_core::clients::{Clients, Embedder, MockClient, MockConfig};
use ecforge_core::corpus::{Corpus, Pair, PairSet, SplitTag};
use ecforge_core::eval::{self, MatchCounts, Metrics};
use ecforge_core::knowledge::{self, EmotionLabel, Knowledge, KnowledgeCache};
use ecforge_core::pipeline::{Overrides, Pipeline, RunConfig};
use ecforge_core::template::{self, InstructionRecord, RecordSource};
use ecforge_core::EmbeddingVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mock(none_fraction: f64) -> MockClient {
    MockClient::new(MockConfig {
        none_fraction,
        dim: 64,
    })
}

fn metric_identity() -> Outcome {
    let m = Metrics::from_precision_recall(0.6504, 0.5831);
    ensure((m.f1 - 0.6149).abs() <= 1e-4, || format!("F1 = {}", m.f1))?;
    let harmonic = 2.0 / (1.0 / 0.6504 + 1.0 / 0.5831);
    ensure((m.f1 - harmonic).abs() <= 1e-12, || {
        format!("F1 {} differs from harmonic mean {harmonic}", m.f1)
    })?;
    Ok(format!("F1 = {:.6}", m.f1))
}

fn random_pairs(rng: &mut ChaCha8Rng) -> PairSet {
    let size = rng.random_range(1..=6);
    let mut set = PairSet::new();
    while set.len() < size {
        set.insert(Pair::new(
            rng.random_range(1..=10),
            rng.random_range(1..=10),
        ));
    }
    set
}

fn matching_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    for trial in 0..1000 {
        let gold = random_pairs(&mut rng);
        let pred = random_pairs(&mut rng);
        let got = eval::match_pairs(&gold, &pred).map_err(|e| e.to_string())?;
        let g: Vec<(u32, u32)> = gold.iter().map(|p| (p.emotion, p.cause)).collect();
        let p: Vec<(u32, u32)> = pred.iter().map(|p| (p.emotion, p.cause)).collect();
        let want = MatchCounts {
            correct: common::brute_force_correct(&g, &p),
            proposed: p.len(),
            gold: g.len(),
        };
        ensure(got == want, || {
            format!("trial {trial}: {got:?} != {want:?}")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("1000 trials in {elapsed:.2?}"))
}

fn vectors(embedder: &dyn Embedder, texts: &[String]) -> Result<Vec<Vec<f64>>, String> {
    Ok(embedder
        .embed(texts)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|v| v.values)
        .collect())
}

fn selection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = mock(0.43);
    let start = Instant::now();
    let mut checks = 0;
    for trial in 0..8 {
        let (n_ecpe, n_pool) = (rng.random_range(1..=25), rng.random_range(1..=200));
        let ecpe = common::ecpe_records(&mut rng, n_ecpe);
        let pool = common::causal_pool(&mut rng, n_pool);
        let e_ids: Vec<String> = ecpe.iter().map(|r| r.record_id.clone()).collect();
        let e_vecs = vectors(
            &m,
            &ecpe
                .iter()
                .map(|r| r.instruction.clone())
                .collect::<Vec<_>>(),
        )?;
        let p_ids: Vec<String> = pool.iter().map(|r| r.causal_id.clone()).collect();
        let p_vecs = vectors(
            &m,
            &pool
                .iter()
                .map(|r| r.instruction.clone())
                .collect::<Vec<_>>(),
        )?;
        for n in blend::STANDARD_RATIOS {
            let ratio = MixRatio::new(n);
            let got: Vec<String> = blend::select_causal(&ecpe, &pool, ratio, &m)
                .map_err(|e| e.to_string())?
                .records
                .into_iter()
                .map(|r| r.causal_id)
                .collect();
            let want = common::reference_selection(
                &e_ids,
                &e_vecs,
                &p_ids,
                &p_vecs,
                ratio.quota(ecpe.len()),
            );
            ensure(got == want, || {
                format!(
                    "trial {trial} ratio {ratio}: {} ecpe, {} pool: selections differ",
                    ecpe.len(),
                    pool.len()
                )
            })?;
            checks += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("{checks} selections in {elapsed:.2?}"))
}

fn dispatch_totality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus = Corpus::new(
        common::synthetic_documents(&mut rng, 200),
        SplitTag::Unsplit,
    );
    let clients = Clients::mock(Arc::new(mock(0.43)));
    let outcome =
        knowledge::annotate_corpus(&corpus, &clients, &mut KnowledgeCache::in_memory(), 4)
            .map_err(|e| e.to_string())?;
    ensure(outcome.failures.is_empty(), || {
        format!("{:?}", outcome.failures)
    })?;
    ensure(outcome.annotated.len() == 200, || {
        format!("{} annotated", outcome.annotated.len())
    })?;

    let mut polarity = 0;
    for (doc, a) in corpus.documents.iter().zip(&outcome.annotated) {
        ensure(a.document.doc_id == doc.doc_id, || "order changed".into())?;
        let expect_polarity = common::in_none_bucket(&doc.text(), 0.43);
        let is_polarity = matches!(a.knowledge.knowledge, Knowledge::Polarity { .. });
        ensure(is_polarity == expect_polarity, || {
            format!("{}: kind {}", doc.doc_id, a.knowledge.knowledge.kind())
        })?;
        polarity += usize::from(is_polarity);
    }
    let oracle = corpus
        .documents
        .iter()
        .filter(|d| common::in_none_bucket(&d.text(), 0.43))
        .count();
    ensure(polarity == oracle, || {
        format!("{polarity} polarity vs {oracle} in bucket")
    })?;
    ensure(outcome.stats.none_count == oracle, || {
        format!("stats none_count {}", outcome.stats.none_count)
    })?;
    Ok(format!(
        "{polarity} polarity / {} distribution",
        200 - polarity
    ))
}

fn random_reaction(rng: &mut ChaCha8Rng) -> String {
    let words = rng.random_range(1..=3);
    let mut out = Vec::new();
    for _ in 0..words {
        let len = rng.random_range(2..=9);
        let w: String = (0..len)
            .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
            .collect();
        out.push(w);
    }
    let r = out.join(" ");
    if r == "none" {
        "nonee".into()
    } else {
        r
    }
}

fn distribution_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = mock(0.43);
    let labels: Vec<String> = EmotionLabel::ALL
        .iter()
        .map(|l| l.as_str().to_string())
        .collect();
    let label_vecs = vectors(&m, &labels)?;
    let mut ties = 0;
    for _ in 0..500 {
        let reaction = random_reaction(&mut rng);
        let dist = knowledge::score_labels(&reaction, &m).map_err(|e| e.to_string())?;
        let entries = dist.entries();

        let seen: HashSet<EmotionLabel> = entries.iter().map(|e| e.label).collect();
        ensure(entries.len() == 7 && seen.len() == 7, || {
            format!("`{reaction}`: not a permutation")
        })?;
        for w in entries.windows(2) {
            ensure(w[0].score >= w[1].score, || {
                format!("`{reaction}`: not sorted")
            })?;
            if w[0].score == w[1].score {
                ties += 1;
                ensure(w[0].label < w[1].label, || {
                    format!("`{reaction}`: tie not in canonical order")
                })?;
            }
        }

        let r = vectors(&m, std::slice::from_ref(&reaction))?.remove(0);
        let mut expected: Vec<(usize, f64)> = label_vecs
            .iter()
            .enumerate()
            .map(|(i, l)| (i, common::reference_cosine(&r, l)))
            .collect();
        expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for (e, (i, s)) in entries.iter().zip(&expected) {
            ensure(
                e.label == EmotionLabel::ALL[*i] && e.score.to_bits() == s.to_bits(),
                || {
                    format!(
                        "`{reaction}`: {:?} {} vs {:?} {s}",
                        e.label,
                        e.score,
                        EmotionLabel::ALL[*i]
                    )
                },
            )?;
        }
    }

    for _ in 0..1000 {
        let dim = rng.random_range(1..=128);
        let mut draw = || EmbeddingVector {
            values: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let (u, v) = (draw(), draw());
        let uu = knowledge::cosine(&u, &u).map_err(|e| e.to_string())?;
        let uv = knowledge::cosine(&u, &v).map_err(|e| e.to_string())?;
        let vu = knowledge::cosine(&v, &u).map_err(|e| e.to_string())?;
        ensure((uu - 1.0).abs() <= 1e-12, || format!("cos(u,u) = {uu}"))?;
        ensure((uv - vu).abs() <= 1e-12, || {
            format!("asymmetric: {uv} vs {vu}")
        })?;
    }
    Ok(format!("500 reactions ({ties} ties), 1000 vector pairs"))
}

fn count_sources(records: &[InstructionRecord]) -> (usize, usize) {
    let causal = records
        .iter()
        .filter(|r| r.source == RecordSource::Causal)
        .count();
    (records.len() - causal, causal)
}

fn ratio_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = mock(0.43);
    let ecpe = common::ecpe_records(&mut rng, 120);
    let pool = common::causal_pool(&mut rng, 700);

    let s5 = blend::select_causal(&ecpe, &pool, MixRatio::new(5), &m).map_err(|e| e.to_string())?;
    let d5 = blend::blend(&ecpe, &s5.records, 11).map_err(|e| e.to_string())?;
    let (e, c) = count_sources(&d5.records);
    ensure(e == 120 && c == 600 && d5.records.len() == 720, || {
        format!("1:5 gave {e} + {c} = {}", d5.records.len())
    })?;
    ensure(s5.shortfall.is_none(), || {
        "unexpected shortfall at 1:5".into()
    })?;

    let s10 =
        blend::select_causal(&ecpe, &pool, MixRatio::new(10), &m).map_err(|e| e.to_string())?;
    let d10 = blend::blend(&ecpe, &s10.records, 11).map_err(|e| e.to_string())?;
    let (_, c10) = count_sources(&d10.records);
    let short = s10.shortfall.ok_or("no shortfall flag at 1:10")?;
    ensure(
        c10 == 700 && short.requested == 1200 && short.missing == 500,
        || format!("1:10 gave {c10} causal, {short:?}"),
    )?;

    let sweep = blend::sweep(
        &ecpe,
        &pool,
        &[MixRatio::new(1), MixRatio::new(2), MixRatio::new(5)],
        11,
        &m,
    )
    .map_err(|e| e.to_string())?;
    let sets: Vec<HashSet<&str>> = sweep
        .iter()
        .map(|s| {
            s.selection
                .records
                .iter()
                .map(|r| r.causal_id.as_str())
                .collect()
        })
        .collect();
    ensure(
        sets[0].is_subset(&sets[1]) && sets[1].is_subset(&sets[2]),
        || "sweep selections do not nest".into(),
    )?;
    ensure(sweep[2].selection == s5, || {
        "sweep 1:5 differs from direct 1:5".into()
    })?;
    Ok(format!(
        "720 = 120 + 600; 1:10 -> 700 + shortfall {}; nesting {} <= {} <= {}",
        short.missing,
        sets[0].len(),
        sets[1].len(),
        sets[2].len()
    ))
}

fn grammar_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..1000 {
        let size = rng.random_range(1..=8);
        let mut set = PairSet::new();
        while set.len() < size {
            set.insert(Pair::new(
                rng.random_range(1..=120),
                rng.random_range(1..=120),
            ));
        }
        let text = template::render_response(&set).map_err(|e| e.to_string())?;
        let parsed = template::parse_pairs(&text);
        ensure(
            parsed.pairs == set && !parsed.no_match && parsed.duplicates == 0,
            || format!("trial {trial}: `{text}` parsed as {:?}", parsed.pairs),
        )?;
    }
    Ok("1000 sets".into())
}

fn toy_config(output: &Path, overrides: Overrides) -> Result<RunConfig, String> {
    let dir = common::toy_dir();
    let raw = std::fs::read_to_string(dir.join("run.toml")).map_err(|e| e.to_string())?;
    let mut config = RunConfig::from_toml(&raw, &dir).map_err(|e| e.to_string())?;
    config.apply(Overrides {
        output_dir: Some(output.to_path_buf()),
        ..overrides
    });
    Ok(config)
}

fn snapshot(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "timings.json") {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("out");
    let mut snapshots = Vec::new();
    let mut f1 = 0.0;
    let mut first = Duration::ZERO;
    for round in 0..2 {
        if out.exists() {
            std::fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
        }
        let start = Instant::now();
        let p =
            Pipeline::new(toy_config(&out, Overrides::default())?).map_err(|e| e.to_string())?;
        p.annotate().map_err(|e| e.to_string())?;
        let b = p.blend().map_err(|e| e.to_string())?;
        ensure(b.stats.ecpe == 20 && b.stats.total == 120, || {
            format!("{:?}", b.stats)
        })?;
        let report = p.evaluate(None).map_err(|e| e.to_string())?;
        if round == 0 {
            first = start.elapsed();
        }
        f1 = report.metrics.f1;
        snapshots.push(snapshot(&out)?);
    }
    ensure(first < Duration::from_secs(5), || format!("took {first:?}"))?;
    ensure(f1 == 1.0, || format!("F1 = {f1}"))?;
    let (a, b) = (&snapshots[0], &snapshots[1]);
    ensure(a.keys().eq(b.keys()), || "artifact sets differ".into())?;
    for (name, bytes) in a {
        ensure(b[name] == *bytes, || format!("{name} differs between runs"))?;
    }
    Ok(format!(
        "{} artifacts identical, F1 = 1.0, {first:.2?}",
        a.len()
    ))
}

fn ablation_arms() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = template::TemplateConfig::load(&common::toy_dir().join("template.toml"))
        .map_err(|e| e.to_string())?;

    let p = Pipeline::new(toy_config(
        &tmp.path().join("no-ek"),
        Overrides {
            no_emotional_knowledge: true,
            ..Overrides::default()
        },
    )?)
    .map_err(|e| e.to_string())?;
    p.annotate().map_err(|e| e.to_string())?;
    let out = p.blend().map_err(|e| e.to_string())?;
    let raw = std::fs::read_to_string(&out.path).map_err(|e| e.to_string())?;
    let train = ecforge_core::corpus::parse_corpus(
        &std::fs::read_to_string(common::toy_dir().join("train.jsonl")).unwrap(),
        Default::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut checked = 0;
    for line in raw.lines() {
        let r: InstructionRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if r.source != RecordSource::Ecpe {
            continue;
        }
        let doc_id = &r.meta["doc_id"];
        let doc = train
            .documents
            .iter()
            .find(|d| &d.doc_id == doc_id)
            .ok_or("unknown doc")?;
        let blocks: Vec<&str> = r.instruction.split("\n\n").collect();
        ensure(
            blocks
                == [
                    cfg.task_description.as_str(),
                    template::document_context(doc).as_str(),
                ],
            || format!("{doc_id}: {} blocks", blocks.len()),
        )?;
        ensure(r.meta["knowledge"] == "none", || {
            format!("{doc_id}: meta {:?}", r.meta)
        })?;
        checked += 1;
    }
    ensure(checked == 20, || format!("{checked} ECPE records"))?;

    let p = Pipeline::new(toy_config(
        &tmp.path().join("ratio-0"),
        Overrides {
            ratio: Some(MixRatio::new(0)),
            ..Overrides::default()
        },
    )?)
    .map_err(|e| e.to_string())?;
    p.annotate().map_err(|e| e.to_string())?;
    let out = p.blend().map_err(|e| e.to_string())?;
    let raw = std::fs::read_to_string(&out.path).map_err(|e| e.to_string())?;
    let records: Vec<InstructionRecord> = raw
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let (e, c) = count_sources(&records);
    ensure(e == 20 && c == 0, || {
        format!("1:0 gave {e} ecpe + {c} causal")
    })?;
    Ok(format!("{checked} two-block templates; 1:0 -> {e} + {c}"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        (
            "metric identity (P 0.6504, R 0.5831 -> F1 0.6149)",
            metric_identity,
        ),
        ("matching oracle equivalence", matching_oracle),
        ("selection oracle equivalence", selection_oracle),
        ("knowledge dispatch totality", dispatch_totality),
        ("label distribution invariants", distribution_invariants),
        ("mix ratio exactness and nesting", ratio_exactness),
        ("response grammar round trip", grammar_round_trip),
        ("end-to-end determinism on the toy corpus", end_to_end),
        ("ablation arms", ablation_arms),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
