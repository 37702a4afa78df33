//! Fixtures and independent oracles shared by the integration targets.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unitrain::backbone::{ModelConfig, StackConfig};
use unitrain::datapipe::{special, DatasetSpec, PipelineStats, RawRecord, Tokenizer};
use unitrain::framework::UnifiedModel;
use unitrain::numerics::gradcheck::check_params;
use unitrain::numerics::{adam_step, AdamHyper, ForwardCtx, Graph, OptimizerState, ParamId, ParamStore, Tensor, Trainable, Var};
use unitrain::run::{synth, RunConfig};
use unitrain::tasks::{
    compute_task_loss, DistanceLabel, DistanceSample, DocLmSample, KnowledgeGraph, MaskedSample, Provenance,
    RelationProbeSample, ReorderSample, Sample, TaskId, TripleRecord, TriplePair, UktpMode, UktpSample,
};
use unitrain::Result;

// ---------------------------------------------------------------------------
// gradient checks

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;

type Build = fn(&mut Graph, &[Var], &mut ChaCha8Rng) -> Result<Var>;

/// Max relative error of `build` on random leaves of the given shapes; the
/// output is contracted with fixed weights so every entry matters.
fn fd(shapes: &[(usize, usize)], seed: u64, build: Build) -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| store.add(format!("x{i}"), "t", Tensor::randn(&[r, c], 1.0, &mut rng), true))
        .collect();
    let op_seed: u64 = rng.gen();
    let report = check_params(&mut store, &ids, FD_STEP, 1, |g, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| s.bind(g, id, true)).collect();
        let mut op_rng = ChaCha8Rng::seed_from_u64(op_seed);
        let out = build(g, &vars, &mut op_rng)?;
        let (r, c) = g.dims(out);
        let w: Vec<f64> = (0..r * c).map(|k| ((k as f64) * 0.37).sin() + 0.1).collect();
        let w = g.constant_raw(r, c, w);
        let prod = g.mul(out, w)?;
        Ok(g.sum_all(prod))
    })
    .expect("op graph builds");
    (report.max_rel_err, format!("{:?}", report.worst))
}

/// Worst finite-difference error of every differentiable op over
/// `rounds` random shape draws, as `(op, error, detail)`.
pub fn op_gradcheck(rounds: u64) -> Vec<(&'static str, f64, String)> {
    let mut worst: Vec<(&'static str, f64, String)> = Vec::new();
    let mut note = |name: &'static str, (e, w): (f64, String)| match worst.iter_mut().find(|x| x.0 == name) {
        Some(x) if e > x.1 => *x = (name, e, w),
        Some(_) => {}
        None => worst.push((name, e, w)),
    };
    for seed in 0..rounds {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
        note("matmul", fd(&[(m, k), (k, n)], seed, |g, v, _| g.matmul(v[0], v[1])));
        note("matmul_bt", fd(&[(m, k), (n, k)], seed, |g, v, _| g.matmul_bt(v[0], v[1])));
        note("add", fd(&[(m, k), (m, k)], seed, |g, v, _| g.add(v[0], v[1])));
        note("sub", fd(&[(m, k), (m, k)], seed, |g, v, _| g.sub(v[0], v[1])));
        note("mul", fd(&[(m, k), (m, k)], seed, |g, v, _| g.mul(v[0], v[1])));
        note("scale", fd(&[(m, k)], seed, |g, v, _| Ok(g.scale(v[0], -1.7))));
        note("add_row", fd(&[(m, k), (1, k)], seed, |g, v, _| g.add_row(v[0], v[1])));
        note("concat_rows", fd(&[(m, k), (n, k)], seed, |g, v, _| g.concat_rows(&[v[0], v[1], v[0]])));
        note("concat_cols", fd(&[(m, k), (m, n)], seed, |g, v, _| g.concat_cols(&[v[1], v[0]])));
        note("slice_rows", fd(&[(m + 2, k)], seed, |g, v, _| g.slice_rows(v[0], 1, 2)));
        note("slice_cols", fd(&[(m, k + 2)], seed, |g, v, _| g.slice_cols(v[0], 1, 2)));
        note(
            "gather_rows",
            fd(&[(m + 1, k)], seed, |g, v, r| {
                let rows = g.dims(v[0]).0;
                let idx: Vec<usize> = (0..5).map(|_| r.gen_range(0..rows)).collect();
                g.gather_rows(v[0], &idx)
            }),
        );
        note(
            "gather_in_row",
            fd(&[(m, k + 1)], seed, |g, v, r| {
                let (rows, cols) = g.dims(v[0]);
                let idx: Vec<usize> = (0..rows * 3).map(|_| r.gen_range(0..cols)).collect();
                g.gather_in_row(v[0], 3, &idx)
            }),
        );
        note(
            "masked_softmax",
            fd(&[(m, k + 2)], seed, |g, v, r| {
                let (rows, cols) = g.dims(v[0]);
                let mask: Vec<bool> = (0..rows * cols).map(|i| i % cols == 0 || r.gen_bool(0.7)).collect();
                g.masked_softmax(v[0], &mask)
            }),
        );
        note("softmax", fd(&[(m, k + 1)], seed, |g, v, _| g.softmax(v[0])));
        note(
            "layer_norm",
            fd(&[(m, k + 2), (1, k + 2), (1, k + 2)], seed, |g, v, _| g.layer_norm(v[0], v[1], v[2], 1e-5)),
        );
        note("gelu", fd(&[(m, k)], seed, |g, v, _| Ok(g.gelu(v[0]))));
        note(
            "cross_entropy",
            fd(&[(m, k + 1)], seed, |g, v, r| {
                let (rows, cols) = g.dims(v[0]);
                let t: Vec<usize> = (0..rows).map(|_| r.gen_range(0..cols)).collect();
                g.cross_entropy(v[0], &t)
            }),
        );
        note("sum_rows", fd(&[(m, k)], seed, |g, v, _| Ok(g.sum_rows(v[0]))));
        note("sum_all", fd(&[(m, k)], seed, |g, v, _| Ok(g.sum_all(v[0]))));
        note(
            "composite",
            fd(&[(m, k), (k, n), (1, n)], seed, |g, v, _| {
                let h = g.matmul(v[0], v[1])?;
                let h = g.add_row(h, v[2])?;
                let h = g.gelu(h);
                let s = g.softmax(h)?;
                g.mul(s, h)
            }),
        );
    }
    worst
}

/// A small config with widths drawn from `rng`.
pub fn random_small_config(vocab: usize, shared: bool, rng: &mut ChaCha8Rng) -> ModelConfig {
    let mut cfg = ModelConfig::tiny(vocab);
    cfg.universal = StackConfig::new(rng.gen_range(1..=2), 4 * rng.gen_range(2..=3), 2);
    cfg.task_head = StackConfig::new(1, 2 * rng.gen_range(2..=3), 2);
    cfg.ffn_mult = rng.gen_range(1..=2);
    cfg.max_seq_len = 16;
    cfg.memory_len = 3;
    cfg.shared_heads = shared;
    cfg
}

fn word(rng: &mut ChaCha8Rng, vocab: usize) -> u32 {
    rng.gen_range(special::COUNT..vocab as u32)
}

/// Two random samples of `task`, built directly from token ids.
pub fn random_batch(task: TaskId, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    let v = cfg.vocab_size;
    (0..2)
        .map(|_| match task {
            TaskId::KnowledgeMlm => {
                let mut input: Vec<u32> = std::iter::once(special::CLS).chain((0..6).map(|_| word(rng, v))).collect();
                let positions = vec![1, 4];
                let targets = positions.iter().map(|&p| input[p]).collect();
                positions.iter().for_each(|&p| input[p] = special::MASK);
                Sample::KnowledgeMlm(MaskedSample { input, positions, targets, spans: vec![] })
            }
            TaskId::DocumentLm => {
                let doc: Vec<u32> = (0..9).map(|_| word(rng, v)).collect();
                Sample::DocumentLm(DocLmSample::new("d", &doc).expect("non-empty"))
            }
            TaskId::SentenceReorder => {
                let segments: Vec<Vec<u32>> = (0..3).map(|_| (0..2).map(|_| word(rng, v)).collect()).collect();
                let mut input = vec![special::CLS];
                for s in &segments {
                    input.extend(s);
                    input.push(special::SEP);
                }
                let label = rng.gen_range(0..unitrain::tasks::reorder_classes(cfg.reorder_max_segments));
                Sample::Reorder(ReorderSample { input, segments, n: 3, perm: vec![2, 0, 1], label })
            }
            TaskId::SentenceDistance => {
                let input = vec![special::CLS, word(rng, v), word(rng, v), special::SEP, word(rng, v), special::SEP];
                let label = DistanceLabel::ALL[rng.gen_range(0..3)];
                let provenance = Provenance { doc_a: 0, sent_a: 0, doc_b: 1, sent_b: 0 };
                Sample::Distance(DistanceSample { input, label, provenance })
            }
            TaskId::Uktp | TaskId::RelationProbe => {
                // [CLS] [HD] h [/HD] r [TL] t [/TL] [SEP] s s s [SEP]
                let mut input = vec![special::CLS, special::HD, word(rng, v), special::HD_END, word(rng, v), special::TL];
                input.extend([word(rng, v), special::TL_END, special::SEP, word(rng, v), word(rng, v), word(rng, v), special::SEP]);
                let relation = rng.gen_range(0..cfg.relation_classes);
                if task == TaskId::Uktp {
                    let (mode, positions) =
                        if rng.gen_bool(0.5) { (UktpMode::MaskRelation, vec![4]) } else { (UktpMode::MaskWords, vec![9, 11]) };
                    let targets = positions.iter().map(|&p| input[p]).collect();
                    positions.iter().for_each(|&p| input[p] = special::MASK);
                    Sample::Uktp(UktpSample {
                        input,
                        positions,
                        targets,
                        mode,
                        markers: [1, 3, 5, 7],
                        relation_region: (4, 5),
                        sentence_region: (9, 12),
                        relation,
                    })
                } else {
                    input.remove(4);
                    Sample::RelationProbe(RelationProbeSample { input, markers: [1, 3, 4, 6], label: relation })
                }
            }
        })
        .collect()
}

/// Worst finite-difference error of each task loss w.r.t. every model
/// parameter. Memory is a constant of the graph, so the recurrent case is
/// checked as one segment attending to a precomputed memory.
pub fn model_gradcheck(shared: bool, seed: u64) -> Vec<(String, f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = random_small_config(24, shared, &mut rng);
    let mut model = UnifiedModel::new(cfg.clone(), seed).expect("valid config");
    // perturb norms and biases away from their 1/0 init
    for id in model.params.ids().collect::<Vec<_>>() {
        if !model.params.get(id).decay {
            for x in model.params.get_mut(id).tensor.data_mut() {
                *x += rng.gen_range(-0.2..0.2);
            }
        }
    }
    let ids: Vec<ParamId> = model.params.ids().collect();
    let check = |loss: &dyn Fn(&UnifiedModel, &mut Graph) -> Result<Var>| {
        let mut store = model.params.clone();
        let report = check_params(&mut store, &ids, FD_STEP, 1, |g, st| {
            let m = UnifiedModel { params: st.clone(), ..model.clone() };
            loss(&m, g)
        })
        .expect("loss builds");
        (report.max_rel_err, format!("{:?}", report.worst))
    };
    let mut out = Vec::new();
    for task in TaskId::ALL {
        let batch = random_batch(task, &cfg, &mut rng);
        let (e, w) = check(&|m, g| {
            compute_task_loss(m, g, &mut ForwardCtx::train(0.0, 0, Trainable::All), task, &batch, cfg.max_seq_len)
        });
        out.push((task.to_string(), e, w));
    }
    let first: Vec<u32> = (0..5).map(|_| word(&mut rng, cfg.vocab_size)).collect();
    let second: Vec<u32> = (0..4).map(|_| word(&mut rng, cfg.vocab_size)).collect();
    let targets: Vec<usize> = (0..4).map(|_| word(&mut rng, cfg.vocab_size) as usize).collect();
    let memory = {
        let mut g = Graph::new();
        model.decode_nlg(&mut g, &mut ForwardCtx::eval(), &first, &model.empty_memory()).expect("decode").memory
    };
    assert!(!memory.universal.is_empty() && !memory.head.is_empty());
    let (e, w) = check(&|m, g| {
        let o = m.decode_nlg(g, &mut ForwardCtx::train(0.0, 0, Trainable::All), &second, &memory)?;
        g.cross_entropy(o.logits, &targets)
    });
    out.push(("document-lm with memory".into(), e, w));
    out
}

// ---------------------------------------------------------------------------
// pipeline fixture

const TAIL: [&str; 9] = ["smooth", "grey", "stones", "beside", "old", "nets", "under", "pale", "light"];
const SHORT: [&str; 8] = ["note", "on", "tide", "and", "wind", "at", "dusk", "here"];

/// `10 + s` words; longer (in chars) for larger `s`.
fn long_sentence(d: usize, s: usize) -> String {
    let mut w: Vec<String> = ["Keeper", &format!("d{d:03}s{s}"), "walked", "along", "the", "quiet", "shore", "and", "then", "counted"]
        .iter()
        .map(|x| x.to_string())
        .collect();
    w.extend(TAIL[..s].iter().map(|x| x.to_string()));
    format!("{}.", w.join(" "))
}

/// `n` words, `n` below the 10-word floor.
fn short_sentence(d: usize, j: usize, n: usize) -> String {
    let mut w = vec!["Brief".to_string(), format!("d{d:03}n{j}")];
    w.extend(SHORT[..n - 2].iter().map(|x| x.to_string()));
    format!("{}.", w.join(" "))
}

/// Ten words, shorter in chars than any `long_sentence`.
fn filler(d: usize, j: usize) -> String {
    format!("Filler d{d:03}f{j} one two three four five six seven eight.")
}

fn render(paragraphs: &[Vec<String>]) -> String {
    paragraphs.iter().map(|p| p.join(" ")).collect::<Vec<_>>().join("\n")
}

pub struct PipelineFixture {
    pub records: Vec<RawRecord>,
    /// Surviving documents in order, with their cleaned paragraphs.
    pub expected: Vec<(String, Vec<Vec<String>>)>,
    /// Counts of what was planted.
    pub planted: PipelineStats,
}

/// 200 documents of unique long sentences with planted character runs,
/// repeated consecutive paragraphs, top-3 duplicates (sentences shuffled),
/// one-character near duplicates, short sentences and empty documents.
/// Kind is `d % 10`: 0/8/9 plain, 1 char runs, 2 repeated paragraph,
/// 3 duplicate of `d - 3`, 4 near duplicate of `d - 4`, 5 short sentences
/// mixed in, 6 all-short paragraph, 7 non-consecutive repeat (kept).
pub fn pipeline_fixture() -> PipelineFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut planted = PipelineStats { docs_in: 200, ..Default::default() };
    let mut clean: Vec<Vec<Vec<String>>> = Vec::new();
    let mut records = Vec::new();
    let mut expected = Vec::new();
    for d in 0..200 {
        let mut s = 0;
        let paragraphs: Vec<Vec<String>> = (0..rng.gen_range(2..=3))
            .map(|_| {
                (0..rng.gen_range(2..=3))
                    .map(|_| {
                        s += 1;
                        long_sentence(d, s - 1)
                    })
                    .collect()
            })
            .collect();
        clean.push(paragraphs.clone());
        let top3_of = |src: &[Vec<String>]| -> Vec<String> {
            let flat: Vec<String> = src.iter().flatten().cloned().collect();
            flat[flat.len() - 3..].to_vec()
        };
        let keep = |e: &mut Vec<(String, Vec<Vec<String>>)>, p: Vec<Vec<String>>| e.push((format!("doc-{d:03}"), p));
        let text = match (d, d % 10) {
            (189, _) => {
                planted.empty_docs += 1;
                String::new()
            }
            (199, _) => {
                planted.empty_docs += 1;
                planted.short_sentences_removed += 3;
                render(&[vec![short_sentence(d, 0, 4), short_sentence(d, 1, 6)], vec![short_sentence(d, 2, 9)]])
            }
            (_, 1) => {
                let k = 1 + d % 4;
                let mut p = paragraphs.clone();
                let s0 = p[0][0].replacen(" walked ", &format!(" walked{} ", " ".repeat(k + 1)), 1);
                p[0][0] = format!("{}...", s0.strip_suffix('.').expect("sentence ends with a period"));
                let first = format!("{} \t\t\t{}", p[0][0], p[0][1..].join(" "));
                // k + 2 spaces, "...", three tabs
                planted.chars_collapsed += (k + 1) + 2 + 2;
                keep(&mut expected, paragraphs.clone());
                std::iter::once(first).chain(p[1..].iter().map(|x| x.join(" "))).collect::<Vec<_>>().join("\n")
            }
            (_, 2) => {
                let r = 1 + (d / 10) % 2;
                let mut p = paragraphs.clone();
                for _ in 0..r {
                    p.insert(0, paragraphs[0].clone());
                }
                planted.paragraphs_removed += r;
                keep(&mut expected, paragraphs.clone());
                render(&p)
            }
            (_, 3) | (_, 4) => {
                let src = &clean[d - d % 10];
                let mut top = top3_of(src);
                top.shuffle(&mut rng);
                let near = d % 10 == 4;
                if near {
                    top[0] = top[0].replacen("Keeper", "keeper", 1);
                }
                let mut f0 = filler(d, 0);
                if !near && (d / 10) % 2 == 1 {
                    f0 = f0.replacen(" one ", "    one ", 1);
                    planted.chars_collapsed += 3;
                }
                let p = vec![vec![f0, top[0].clone()], vec![top[1].clone(), filler(d, 1), top[2].clone()]];
                if near {
                    keep(&mut expected, vec![vec![filler(d, 0), top[0].clone()], vec![top[1].clone(), filler(d, 1), top[2].clone()]]);
                } else {
                    planted.duplicate_docs += 1;
                }
                render(&p)
            }
            (_, 5) => {
                let mut p = paragraphs.clone();
                p[0].insert(1, short_sentence(d, 0, 3));
                p.last_mut().expect("paragraphs").push(short_sentence(d, 1, 9));
                planted.short_sentences_removed += 2;
                keep(&mut expected, paragraphs.clone());
                render(&p)
            }
            (_, 6) => {
                let mut p = paragraphs.clone();
                p.insert(1, vec![short_sentence(d, 0, 5), short_sentence(d, 1, 9)]);
                planted.short_sentences_removed += 2;
                keep(&mut expected, paragraphs.clone());
                render(&p)
            }
            (_, 7) => {
                let mut p = paragraphs.clone();
                p.push(paragraphs[0].clone());
                keep(&mut expected, p.clone());
                render(&p)
            }
            _ => {
                keep(&mut expected, paragraphs.clone());
                render(&paragraphs)
            }
        };
        records.push(RawRecord {
            dataset: "fixture".into(),
            doc_id: format!("doc-{d:03}"),
            title: None,
            text,
            annotations: vec![],
        });
    }
    planted.docs_out = expected.len();
    PipelineFixture { records, expected, planted }
}

// ---------------------------------------------------------------------------
// knowledge fixture

pub const KG_TITLE: &str = "Ada Lark";
const ENTITIES: [&str; 8] = ["Ada Lark", "Ada", "Lark", "Brightwater", "Orvane Works", "Halden Bank", "botany", "Lowford"];
const REL_NAMES: [&str; 4] = ["born in", "worked for", "founded", "studied"];

pub struct KgFixture {
    pub kg: KnowledgeGraph,
    pub sentences: Vec<String>,
}

/// 20 triples (a third headed by the title, a third with it as tail) and
/// 30 sentences naming zero to three entities, including the title's
/// substrings.
pub fn kg_fixture() -> KgFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let records: Vec<TripleRecord> = (0..20)
        .map(|i| {
            let other = |rng: &mut ChaCha8Rng| ENTITIES[rng.gen_range(1..ENTITIES.len())].to_string();
            let (head, tail) = match i % 3 {
                0 => (KG_TITLE.to_string(), other(&mut rng)),
                1 => (other(&mut rng), KG_TITLE.to_string()),
                _ => {
                    let h = other(&mut rng);
                    let t = loop {
                        let t = other(&mut rng);
                        if t != h {
                            break t;
                        }
                    };
                    (h, t)
                }
            };
            TripleRecord { head, relation: REL_NAMES[rng.gen_range(0..REL_NAMES.len())].into(), tail }
        })
        .collect();
    let sentences = (0..30)
        .map(|j| {
            let n = rng.gen_range(0..=3);
            let picked: Vec<&str> = ENTITIES.choose_multiple(&mut rng, n).copied().collect();
            if picked.is_empty() {
                format!("Record {j} of the archive names nobody at all.")
            } else {
                format!("Record {j} of the archive lists {} together.", picked.join(" with "))
            }
        })
        .collect();
    KgFixture { kg: KnowledgeGraph::from_records(&records).expect("valid triples"), sentences }
}

/// Every (triple, sentence) of the cross product whose triple names the
/// title and whose sentence contains both mentions.
pub fn brute_force_pairs(kg: &KnowledgeGraph, sentences: &[String], title: &str) -> BTreeSet<TriplePair> {
    let mut out = BTreeSet::new();
    for (i, t) in kg.triples().iter().enumerate() {
        for (j, s) in sentences.iter().enumerate() {
            if (t.head == title || t.tail == title) && s.contains(&t.head) && s.contains(&t.tail) {
                out.insert(TriplePair { triple: i, sentence: j });
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// models and runs

/// A small LM trained by document-LM on `texts` until it reproduces them.
pub fn overfit_lm(texts: &[&str], steps: usize, seed: u64) -> (UnifiedModel, Tokenizer) {
    let tok = Tokenizer::train(texts, 400);
    let mut cfg = ModelConfig::tiny(tok.vocab_size());
    cfg.universal = StackConfig::new(2, 32, 2);
    cfg.task_head = StackConfig::new(1, 32, 2);
    cfg.max_seq_len = 32;
    cfg.memory_len = 8;
    cfg.init_std = 0.1;
    let mut model = UnifiedModel::new(cfg, seed).expect("valid config");
    let batch: Vec<Sample> =
        texts.iter().map(|t| Sample::DocumentLm(DocLmSample::new("d", &tok.tokenize(t)).expect("non-empty"))).collect();
    let hyper = AdamHyper { lr_peak: 3e-3, weight_decay: 0.0, warmup_steps: 0, total_steps: steps as u64, ..AdamHyper::default() };
    let mut opt = OptimizerState::new(hyper).expect("valid hyper");
    let ids: Vec<ParamId> = model.params.ids().collect();
    for _ in 0..steps {
        model.params.zero_grad();
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::train(0.0, 0, Trainable::All);
        let loss = compute_task_loss(&model, &mut g, &mut ctx, TaskId::DocumentLm, &batch, 32).expect("loss builds");
        model.params.backward(&g, loss).expect("backward");
        let with: Vec<ParamId> = ids.iter().copied().filter(|id| model.params.get(*id).tensor.grad().is_some()).collect();
        adam_step(&mut model.params, &with, &mut opt, hyper.lr_peak).expect("adam step");
    }
    (model, tok)
}

/// Synthetic corpus plus desk run config under `dir`; returns the config.
pub fn synth_run(dir: &Path, seed: u64, n_docs: usize, vocab: usize, steps: u64) -> RunConfig {
    synth::generate(seed, n_docs, "synth").write(dir).expect("write corpus");
    let mut cfg = RunConfig::desk(
        dir.join("out"),
        vec![DatasetSpec { name: "synth".into(), path: dir.join("corpus.jsonl"), multiplier: 1 }],
        Some(dir.join("knowledge.jsonl")),
        vocab,
    );
    cfg.seed = seed;
    cfg.train.steps = steps;
    cfg.optimizer.total_steps = steps.max(cfg.optimizer.warmup_steps);
    cfg.validate().expect("desk config is valid");
    cfg
}

pub fn checksum(model: &UnifiedModel, group: &str) -> [u8; 16] {
    model.params.checksum(&model.group_param_ids(group))
}

/// Max abs parameter difference after `steps` trainer updates at batch 8
/// taken whole versus in micro-batches of 3, 3 and 2.
pub fn accumulation_gap(steps: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut cfg = RunConfig::desk(
        "unused".into(),
        vec![DatasetSpec { name: "x".into(), path: "x.jsonl".into(), multiplier: 1 }],
        None,
        60,
    );
    cfg.model = ModelConfig { max_seq_len: 64, memory_len: 16, ..ModelConfig::tiny(60) };
    cfg.schedule = unitrain::schedule::ProgressiveSchedule::fixed(16, 8, 1e-3, 0.0);
    cfg.optimizer.warmup_steps = 0;
    let archive: Vec<Sample> =
        (0..4).flat_map(|_| TaskId::ALL.iter().flat_map(|&t| random_batch(t, &cfg.model, &mut rng)).collect::<Vec<_>>()).collect();
    let model = UnifiedModel::new(cfg.model.clone(), 4).expect("valid config");
    let run = |device_batch: usize| {
        let mut c = cfg.clone();
        c.train.device_batch = device_batch;
        let all = model.params.ids().collect();
        let mut t = unitrain::run::Trainer::with_model(c, model.clone(), archive.clone(), "md5".into(), all).expect("trainer");
        let micro: Vec<usize> = (0..steps).map(|_| t.train_step().expect("step").micro_batches).collect();
        (t.model, micro)
    };
    let (whole, m1) = run(8);
    let (split, m3) = run(3);
    assert!(m1.iter().all(|&m| m == 1) && m3.iter().all(|&m| m == 3));
    whole
        .params
        .iter()
        .zip(split.params.iter())
        .flat_map(|((_, a), (_, b))| a.tensor.data().iter().zip(b.tensor.data()).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// zero-shot oracles

/// Language model whose next-token distribution is a seeded hash of the
/// whole context: no structure a search could exploit.
pub struct HashLm {
    pub vocab: usize,
    pub seed: u64,
    pub temperature: f64,
}

impl unitrain::zeroshot::CausalLm for HashLm {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn log_probs(&self, context: &[u32]) -> Result<Vec<Vec<f64>>> {
        Ok((1..=context.len())
            .map(|n| {
                let h = context[..n].iter().fold(self.seed, |h, &t| h.wrapping_mul(0x1_0000_0001_b3).wrapping_add(t as u64 + 1));
                let mut r = ChaCha8Rng::seed_from_u64(h);
                let z: Vec<f64> = (0..self.vocab).map(|_| r.gen::<f64>() * self.temperature).collect();
                let m = z.iter().cloned().fold(f64::MIN, f64::max);
                let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                z.iter().map(|x| x - lse).collect()
            })
            .collect())
    }
}

pub fn is_contiguous_span(span: &[u32], source: &[u32]) -> bool {
    !span.is_empty() && source.windows(span.len()).any(|w| w == span)
}

/// Fraction of `n` random prompts whose restrained beam output (width 8) is
/// a contiguous span of its source, on a random tiny model.
pub fn restrained_span_rate(n: usize) -> f64 {
    use unitrain::zeroshot::{beam_search, BeamConfig, SpanTrie};
    let model = UnifiedModel::new(ModelConfig::tiny(40), 17).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut ok = 0;
    for _ in 0..n {
        let prompt: Vec<u32> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(special::COUNT..40)).collect();
        let source: Vec<u32> = (0..rng.gen_range(1..10)).map(|_| rng.gen_range(special::COUNT..20)).collect();
        let trie = SpanTrie::build(&source, 4).expect("max span 4");
        let out = beam_search(&model, &prompt, BeamConfig { width: 8, max_len: 4 }, Some(&trie)).expect("search");
        if is_contiguous_span(&out.tokens, &source) && out.tokens.len() <= 4 {
            ok += 1;
        }
    }
    ok as f64 / n as f64
}

/// Accuracy of a random tiny model on `n` four-choice items with uniformly
/// drawn gold positions.
pub fn random_model_accuracy(n: usize) -> f64 {
    use unitrain::zeroshot::{score_choices, MultiChoiceItem, ScoreScope};
    let words = [
        "amber", "birch", "cedar", "delta", "ember", "fjord", "glade", "heron", "iris", "juniper", "kestrel", "lumen",
    ];
    let tok = Tokenizer::train(&[words.join(" ")], 300);
    let mut cfg = ModelConfig::tiny(tok.vocab_size());
    cfg.max_seq_len = 32;
    let model = UnifiedModel::new(cfg, 23).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut correct = 0;
    for _ in 0..n {
        let candidates: Vec<String> = words.choose_multiple(&mut rng, 4).map(|w| w.to_string()).collect();
        let item = MultiChoiceItem {
            template: "the answer is $BLANK".into(),
            fields: Default::default(),
            candidates,
            gold: rng.gen_range(0..4),
        };
        if score_choices(&model, &tok, &item, ScoreScope::FullText).expect("score").predicted == item.gold {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}

pub const OVERFIT_TEXTS: [&str; 4] = [
    "the heron waits by the cold river at dawn",
    "a kestrel hangs above the dry summer field",
    "old cedar boards creak in the winter wind",
    "quiet moss covers every stone in the glade",
];

/// Accuracy of a model overfit on [`OVERFIT_TEXTS`] at choosing each text
/// against three word-shuffled versions of itself.
pub fn overfit_accuracy(model: &UnifiedModel, tok: &Tokenizer) -> f64 {
    use unitrain::zeroshot::{score_choices, MultiChoiceItem, ScoreScope};
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut correct = 0;
    for text in OVERFIT_TEXTS {
        let mut candidates = vec![text.to_string()];
        while candidates.len() < 4 {
            let mut w: Vec<&str> = text.split(' ').collect();
            w.shuffle(&mut rng);
            let s = w.join(" ");
            if !candidates.contains(&s) {
                candidates.push(s);
            }
        }
        candidates.shuffle(&mut rng);
        let gold = candidates.iter().position(|c| c == text).expect("gold present");
        let item = MultiChoiceItem { template: "$BLANK".into(), fields: Default::default(), candidates, gold };
        if score_choices(model, tok, &item, ScoreScope::FullText).expect("score").predicted == gold {
            correct += 1;
        }
    }
    correct as f64 / OVERFIT_TEXTS.len() as f64
}

/// Narrows a desk run's stacks so a test run takes seconds.
pub fn shrink(cfg: &mut RunConfig) {
    cfg.model.universal = StackConfig::new(1, 16, 2);
    cfg.model.task_head = StackConfig::new(1, 8, 2);
    cfg.model.ffn_mult = 2;
}

/// MD5 of every file under `dir`, keyed by relative path.
pub fn dir_digest(dir: &Path) -> std::collections::BTreeMap<String, String> {
    fn walk(root: &Path, d: &Path, out: &mut std::collections::BTreeMap<String, String>) {
        let mut entries: Vec<_> = std::fs::read_dir(d).expect("readable dir").map(|e| e.expect("entry").path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let bytes = std::fs::read(&p).expect("readable file");
                let rel = p.strip_prefix(root).expect("under root").to_string_lossy().into_owned();
                out.insert(rel, unitrain::run::md5_hex(&bytes));
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Preprocess plus `steps` pretrain steps into `dir`; returns the digest of
/// every artifact the run wrote.
pub fn preprocess_and_pretrain(dir: &Path, seed: u64, steps: u64, small: bool) -> std::collections::BTreeMap<String, String> {
    let mut cfg = synth_run(dir, seed, 60, 600, steps);
    if small {
        shrink(&mut cfg);
    }
    cfg.train.checkpoint_every = (steps / 2).max(1);
    unitrain::run::cmd_preprocess(&cfg).expect("preprocess");
    unitrain::run::cmd_pretrain(&cfg, None).expect("pretrain");
    dir_digest(&cfg.output_dir)
}

/// Permutations of `0..n` in lexicographic order.
pub fn lex_perms(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for x in 0..n {
            if !prefix.contains(&x) {
                prefix.push(x);
                go(prefix, n, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), n, &mut out);
    out
}
