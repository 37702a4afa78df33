use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unitrain::backbone::{ModelConfig, StackConfig};
use unitrain::datapipe::{special, DatasetSpec};
use unitrain::framework::{trainable_parameters, FineTuneMode, UnifiedModel, GROUP_NLG, GROUP_NLU, GROUP_UNIVERSAL};
use unitrain::numerics::{ForwardCtx, Graph, ParamId};
use unitrain::run::{RunConfig, Trainer};
use unitrain::schedule::ProgressiveSchedule;
use unitrain::tasks::{reorder_classes, Sample, TaskId};
use unitrain::zeroshot::{beam_search, BeamConfig};

mod common;
use common::{checksum, random_batch};

#[test]
fn every_task_loss_matches_finite_differences() {
    for shared in [false, true] {
        for seed in 2..3 {
            for (task, err, worst) in common::model_gradcheck(shared, seed) {
                assert!(err < common::FD_TOL, "shared={shared} seed={seed} {task}: {err} at {worst}");
            }
        }
    }
}

#[test]
fn overfits_twenty_tokens_and_greedy_decodes_them() {
    let text = "amber birch cedar delta ember fjord glade heron iris juniper kestrel lumen moss nettle oriole pine quartz reed sage thorn";
    let (model, tok) = common::overfit_lm(&[text], 300, 1);
    let ids = tok.tokenize(text);
    assert_eq!(ids.len(), 20);
    let out = beam_search(&model, &[special::BOS], BeamConfig { width: 1, max_len: 24 }, None).unwrap();
    assert_eq!(out.tokens, ids);
    assert!(out.finished);
    assert_eq!(tok.detokenize(&out.tokens), text);
}

/// Counts derived from the layer layout: four attention projections plus
/// the relative-position projection, output bias, two norms and the FFN.
fn stack_count(layers: usize, d: usize, mult: usize) -> usize {
    let f = d * mult;
    layers * (5 * d * d + d + 2 * 2 * d + d * f + f + f * d + d) + 2 * d + 2 * d
}

fn expected_count(cfg: &ModelConfig) -> usize {
    let (du, dh) = (cfg.universal.hidden, cfg.task_head.hidden);
    let head = |layers| du * dh + dh + stack_count(layers, dh, cfg.ffn_mult) + dh * du + du;
    let heads = if cfg.shared_heads { head(2 * cfg.task_head.layers) } else { 2 * head(cfg.task_head.layers) };
    let cls = |c: usize| dh * c + c;
    cfg.vocab_size * du
        + stack_count(cfg.universal.layers, du, cfg.ffn_mult)
        + heads
        + cls(reorder_classes(cfg.reorder_max_segments))
        + cls(3)
        + cls(cfg.relation_classes)
}

#[test]
fn parameter_counts_match_layout() {
    for shared in [false, true] {
        for cfg in [ModelConfig::tiny(300), ModelConfig::desk(768)] {
            let cfg = ModelConfig { shared_heads: shared, ..cfg };
            let m = UnifiedModel::new(cfg.clone(), 0).unwrap();
            assert_eq!(m.param_count(), expected_count(&cfg), "shared={shared}");
            let groups: usize = [GROUP_UNIVERSAL, GROUP_NLU, GROUP_NLG].iter().map(|g| m.group_param_count(g)).sum();
            assert_eq!(groups, m.param_count());
        }
    }
    let sep = UnifiedModel::new(ModelConfig::desk(768), 0).unwrap().param_count() as f64;
    let shared = UnifiedModel::new(ModelConfig { shared_heads: true, ..ModelConfig::desk(768) }, 0).unwrap().param_count() as f64;
    assert!((sep - shared).abs() / sep < 0.05, "separate {sep} vs shared {shared}");
}

#[test]
fn nlu_encoding_is_bidirectional_and_nlg_is_not() {
    let mut cfg = ModelConfig::tiny(40);
    cfg.init_std = 0.5;
    let m = UnifiedModel::new(cfg, 3).unwrap();
    let a = [11, 12, 13, 14];
    let b = [11, 12, 13, 30];
    let enc = |t: &[u32]| {
        let mut g = Graph::new();
        let h = m.encode_nlu(&mut g, &mut ForwardCtx::eval(), t).unwrap();
        g.value(h).to_vec()
    };
    let dec = |t: &[u32]| {
        let mut g = Graph::new();
        let o = m.decode_nlg(&mut g, &mut ForwardCtx::eval(), t, &m.empty_memory()).unwrap();
        g.value(o.hidden).to_vec()
    };
    let w = m.cfg.task_head.hidden;
    let (ea, eb) = (enc(&a), enc(&b));
    for row in 0..3 {
        assert_ne!(ea[row * w..(row + 1) * w], eb[row * w..(row + 1) * w], "row {row} ignores the last token");
    }
    let (da, db) = (dec(&a), dec(&b));
    assert_eq!(da[..3 * w], db[..3 * w]);
    assert_ne!(da[3 * w..], db[3 * w..]);
}

fn tiny_run(mix: &[(&str, f64)], shared: bool) -> RunConfig {
    let mut cfg = RunConfig::desk(
        "unused".into(),
        vec![DatasetSpec { name: "x".into(), path: "x.jsonl".into(), multiplier: 1 }],
        None,
        60,
    );
    cfg.model = ModelConfig { max_seq_len: 64, memory_len: 16, shared_heads: shared, ..ModelConfig::tiny(60) };
    cfg.schedule = ProgressiveSchedule::fixed(16, 2, 1e-3, 0.0);
    cfg.optimizer.warmup_steps = 0;
    cfg.train.task_mix = mix.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    cfg
}

fn archive(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Vec<Sample> {
    TaskId::ALL.iter().flat_map(|&t| random_batch(t, cfg, rng)).collect()
}

/// Group checksums before and after one trainer step.
fn step_changes(mix: &[(&str, f64)], shared: bool, flags: &[&str]) -> [bool; 3] {
    let cfg = tiny_run(mix, shared);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = UnifiedModel::new(cfg.model.clone(), 9).unwrap();
    let trainable: Vec<ParamId> = trainable_parameters(&model, FineTuneMode::from_flags(flags).unwrap()).unwrap();
    let samples = archive(&mut rng, &cfg.model);
    let groups = [GROUP_UNIVERSAL, GROUP_NLU, GROUP_NLG];
    let before = groups.map(|g| checksum(&model, g));
    let mut t = Trainer::with_model(cfg, model, samples, "md5".into(), trainable).unwrap();
    t.train_step().unwrap();
    let after = groups.map(|g| checksum(&t.model, g));
    [0, 1, 2].map(|i| before[i] != after[i])
}

#[test]
fn heads_update_only_for_their_paradigm() {
    // [universal, nlu-head, nlg-head]
    assert_eq!(step_changes(&[("document-lm", 1.0)], false, &["all"]), [true, false, true]);
    for nlu_task in ["knowledge-mlm", "sentence-reorder", "sentence-distance", "uktp", "relation-probe"] {
        assert_eq!(step_changes(&[(nlu_task, 1.0)], false, &["all"]), [true, true, false], "{nlu_task}");
    }
}

#[test]
fn fine_tune_flags_freeze_other_groups() {
    assert_eq!(step_changes(&[("document-lm", 1.0)], false, &["nlg-head"]), [false, false, true]);
    assert_eq!(step_changes(&[("document-lm", 1.0)], false, &["update-universal"]), [true, false, false]);
    assert_eq!(step_changes(&[("sentence-distance", 1.0)], false, &["nlu-head"]), [false, true, false]);
    assert_eq!(step_changes(&[("sentence-distance", 1.0)], false, &["nlg-head"]), [false, false, false]);
}

#[test]
fn shared_heads_couple_paradigms() {
    let cfg = ModelConfig { shared_heads: true, ..ModelConfig::tiny(60) };
    let m = UnifiedModel::new(cfg, 0).unwrap();
    assert_eq!(m.nlu.param_ids(), m.nlg.param_ids());
    assert_eq!(m.nlu.stack.cfg, StackConfig { layers: 2 * m.cfg.task_head.layers, ..m.cfg.task_head });
    assert!(m.group_param_ids(GROUP_NLG).is_empty());
    // a generation step now moves the stack the understanding tasks read
    assert_eq!(step_changes(&[("document-lm", 1.0)], true, &["all"]), [true, true, false]);
}

#[test]
fn classification_heads_read_first_position() {
    let m = UnifiedModel::new(ModelConfig::tiny(40), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tokens: Vec<u32> = (0..6).map(|_| rng.gen_range(10..40)).collect();
    let mut g = Graph::new();
    let mut ctx = ForwardCtx::eval();
    let h = m.encode_nlu(&mut g, &mut ctx, &tokens).unwrap();
    let logits = m.cls_logits(&mut g, &mut ctx, h, m.distance_cls).unwrap();
    let first = g.slice_rows(h, 0, 1).unwrap();
    let w = g.constant(&m.params.get(m.distance_cls.w).tensor);
    let b = g.constant(&m.params.get(m.distance_cls.b).tensor);
    let y = g.matmul(first, w).unwrap();
    let manual = g.add_row(y, b).unwrap();
    assert_eq!(g.value(logits), g.value(manual));
}
