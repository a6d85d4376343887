mod common;

use agdst::error::{CheckpointError, Error};
use agdst::linearize::{Role, Segment, TaggedSequence};
use agdst::neural::{
    load_checkpoint, save_checkpoint, AdamConfig, DecodeSession, EmbeddingMode, KvSession, Mode, ModelCheckpoint,
    ModelConfig, OptimizerState, Schedule, Transformer,
};
use common::checks::{causality, gradient_check, random_sequence, scramble, tiny_config, zero_model_nll_error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn finite_difference_gradient_check() {
    for mode in [EmbeddingMode::TokenPositionRoleSegment, EmbeddingMode::TokenPosition] {
        let (worst, count) = gradient_check(mode, 11);
        assert!(count <= 5_000);
        assert!(worst < 1e-4, "{mode:?}: max relative error {worst:e}");
    }
}

#[test]
fn role_and_segment_tables_unused_without_them() {
    let cfg = tiny_config(EmbeddingMode::TokenPosition);
    let mut model = Transformer::<f64>::init(&cfg).unwrap();
    scramble(model.params_mut(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let seq = random_sequence(&mut rng, 8, cfg.vocab_size, true);
    let (_, grads) = model.loss_and_grad(&seq, None).unwrap();
    assert!(grads.by_name("embed.role").unwrap().data.iter().all(|&g| g == 0.0));
    assert!(grads.by_name("embed.segment").unwrap().data.iter().all(|&g| g == 0.0));
}

#[test]
fn outputs_never_depend_on_later_tokens() {
    assert_eq!(causality(100, 5), Ok(100));
}

#[test]
fn all_zero_parameters_give_uniform_prediction() {
    let err = zero_model_nll_error();
    assert!(err < 1e-6, "{err}");
}

// Independent dense forward pass written directly from the architecture
// description, addressing tensors by name.
fn reference_logits(model: &Transformer<f64>, seq: &TaggedSequence) -> Vec<Vec<f64>> {
    let cfg = model.config();
    let p = |name: &str| &model.params().by_name(name).unwrap().data;
    let (d, f, nh) = (cfg.hidden, cfg.ffn_dim(), cfg.heads);
    let dh = d / nh;
    let n = seq.len();
    let row = |t: &[f64], r: usize| t[r * d..(r + 1) * d].to_vec();
    let affine = |x: &[f64], w: &[f64], b: &[f64], out: usize| -> Vec<f64> {
        (0..out).map(|j| b[j] + x.iter().enumerate().map(|(i, xi)| xi * w[i * out + j]).sum::<f64>()).collect()
    };
    let norm = |x: &[f64], g: &[f64], b: &[f64]| -> Vec<f64> {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        x.iter().enumerate().map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * g[j] + b[j]).collect()
    };
    let gelu = |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());

    let mut xs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = row(p("embed.token"), seq.token_ids()[i] as usize);
            let pos = row(p("embed.position"), i);
            e.iter_mut().zip(pos).for_each(|(a, b)| *a += b);
            if cfg.embedding_mode == EmbeddingMode::TokenPositionRoleSegment {
                let r = row(p("embed.role"), seq.roles()[i].index());
                let s = row(p("embed.segment"), seq.segments()[i].index());
                e.iter_mut().zip(r.iter().zip(s)).for_each(|(a, (r, s))| *a += r + s);
            }
            e
        })
        .collect();
    for l in 0..cfg.layers {
        let name = |s: &str| format!("layer{l}.{s}");
        let a: Vec<Vec<f64>> = xs.iter().map(|x| norm(x, p(&name("ln1.gain")), p(&name("ln1.bias")))).collect();
        let proj = |w: &str, b: &str| -> Vec<Vec<f64>> { a.iter().map(|x| affine(x, p(&name(w)), p(&name(b)), d)).collect() };
        let q = proj("attn.query.weight", "attn.query.bias");
        let k = proj("attn.key.weight", "attn.key.bias");
        let v = proj("attn.value.weight", "attn.value.bias");
        for i in 0..n {
            let mut ctx = vec![0.0; d];
            for h in 0..nh {
                let r = h * dh..(h + 1) * dh;
                let scores: Vec<f64> = (0..=i)
                    .map(|j| q[i][r.clone()].iter().zip(&k[j][r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let z: f64 = scores.iter().map(|s| s.exp()).sum();
                for j in 0..=i {
                    let w = scores[j].exp() / z;
                    for c in r.clone() {
                        ctx[c] += w * v[j][c];
                    }
                }
            }
            let o = affine(&ctx, p(&name("attn.output.weight")), p(&name("attn.output.bias")), d);
            xs[i].iter_mut().zip(o).for_each(|(x, o)| *x += o);
        }
        for x in xs.iter_mut() {
            let c = norm(x, p(&name("ln2.gain")), p(&name("ln2.bias")));
            let hidden: Vec<f64> = affine(&c, p(&name("ffn.up.weight")), p(&name("ffn.up.bias")), f).into_iter().map(gelu).collect();
            let o = affine(&hidden, p(&name("ffn.down.weight")), p(&name("ffn.down.bias")), d);
            x.iter_mut().zip(o).for_each(|(x, o)| *x += o);
        }
    }
    let emb = p("embed.token");
    xs.iter()
        .map(|x| {
            let z = norm(x, p("final_ln.gain"), p("final_ln.bias"));
            (0..cfg.vocab_size).map(|t| (0..d).map(|j| z[j] * emb[t * d + j]).sum()).collect()
        })
        .collect()
}

#[test]
fn forward_matches_straight_line_reference() {
    for mode in [EmbeddingMode::TokenPositionRoleSegment, EmbeddingMode::TokenPosition] {
        let cfg = tiny_config(mode);
        let mut model = Transformer::<f64>::init(&cfg).unwrap();
        scramble(model.params_mut(), 23);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let len = rng.gen_range(1..=cfg.max_positions);
            let seq = random_sequence(&mut rng, len, cfg.vocab_size, false);
            let got = model.forward(&seq, Mode::Eval, None, false).unwrap().logits;
            let want = reference_logits(&model, &seq);
            for (i, row) in want.iter().enumerate() {
                for (j, w) in row.iter().enumerate() {
                    assert!((got[i * cfg.vocab_size + j] - w).abs() < 1e-10, "{mode:?} row {i} col {j}");
                }
            }
        }
    }
}

#[test]
fn attention_rows_are_causal_distributions() {
    let cfg = tiny_config(EmbeddingMode::TokenPositionRoleSegment);
    let model = Transformer::<f64>::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seq = random_sequence(&mut rng, 7, cfg.vocab_size, false);
    let maps = model.forward(&seq, Mode::Eval, None, true).unwrap().attention.unwrap();
    assert_eq!(maps.len(), cfg.layers);
    for layer in &maps {
        assert_eq!(layer.len(), cfg.heads);
        for head in layer {
            for i in 0..7 {
                let r = &head[i * 7..(i + 1) * 7];
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(r[i + 1..].iter().all(|&p| p == 0.0));
            }
        }
    }
}

#[test]
fn cached_decoding_matches_full_forward() {
    let cfg = tiny_config(EmbeddingMode::TokenPositionRoleSegment);
    let mut model = Transformer::<f64>::init(&cfg).unwrap();
    scramble(model.params_mut(), 31);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let v = cfg.vocab_size;
    for _ in 0..20 {
        let len = rng.gen_range(1..=cfg.max_positions);
        let seq = random_sequence(&mut rng, len, v, false);
        let full = model.forward(&seq, Mode::Eval, None, false).unwrap().logits;
        let mut session = KvSession::new(&model);
        for i in 0..len {
            let step = session
                .feed_native(seq.token_ids()[i], seq.roles()[i], seq.segments()[i], true)
                .unwrap()
                .unwrap();
            for j in 0..v {
                assert!((step[j] - full[i * v + j]).abs() < 1e-10);
            }
        }
        assert_eq!(session.capacity(), cfg.max_positions);
        assert!(session.feed(0, Role::State, Segment::State, false).is_err() || len < cfg.max_positions);
    }
}

#[test]
fn dropout_only_in_train_mode() {
    let cfg = ModelConfig {
        dropout: 0.3,
        ..tiny_config(EmbeddingMode::TokenPositionRoleSegment)
    };
    let model = Transformer::<f64>::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seq = random_sequence(&mut rng, 6, cfg.vocab_size, true);
    let a = model.forward(&seq, Mode::Eval, Some(&mut rng), false).unwrap().logits;
    let b = model.forward(&seq, Mode::Eval, None, false).unwrap().logits;
    assert_eq!(a, b);
    let mut r1 = ChaCha8Rng::seed_from_u64(5);
    let mut r2 = ChaCha8Rng::seed_from_u64(5);
    let t1 = model.forward(&seq, Mode::Train, Some(&mut r1), false).unwrap().logits;
    let t2 = model.forward(&seq, Mode::Train, Some(&mut r2), false).unwrap().logits;
    assert_eq!(t1, t2);
    assert_ne!(t1, a);
}

#[test]
fn rejects_bad_sequences_and_configs() {
    let cfg = tiny_config(EmbeddingMode::TokenPositionRoleSegment);
    let model = Transformer::<f32>::init(&cfg).unwrap();
    let mut too_long = TaggedSequence::new();
    for _ in 0..=cfg.max_positions {
        too_long.push(1, Role::User, Segment::Context, false);
    }
    assert!(matches!(model.forward(&too_long, Mode::Eval, None, false), Err(Error::Structural(_))));
    let mut oov = TaggedSequence::new();
    oov.push(cfg.vocab_size as u32, Role::User, Segment::Context, false);
    assert!(model.forward(&oov, Mode::Eval, None, false).is_err());
    let mut untargeted = TaggedSequence::new();
    untargeted.push(1, Role::User, Segment::Context, false);
    untargeted.push(2, Role::User, Segment::Context, false);
    assert!(matches!(model.loss_and_grad(&untargeted, None), Err(Error::Contract(_))));

    for bad in [
        ModelConfig { heads: 3, ..cfg.clone() },
        ModelConfig { layers: 0, ..cfg.clone() },
        ModelConfig { vocab_size: 0, ..cfg.clone() },
        ModelConfig { dropout: 1.0, ..cfg.clone() },
        ModelConfig { role_count: 2, ..cfg.clone() },
    ] {
        assert!(matches!(Transformer::<f32>::init(&bad), Err(Error::Config(_))), "{bad:?}");
    }
}

#[test]
fn initialization_is_seeded() {
    let cfg = tiny_config(EmbeddingMode::TokenPositionRoleSegment);
    let a = Transformer::<f32>::init(&cfg).unwrap();
    let b = Transformer::<f32>::init(&cfg).unwrap();
    let c = Transformer::<f32>::init(&ModelConfig { seed: 8, ..cfg }).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn adam_fits_a_fixed_sequence() {
    let cfg = tiny_config(EmbeddingMode::TokenPositionRoleSegment);
    let mut model = Transformer::<f32>::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let seq = random_sequence(&mut rng, 10, cfg.vocab_size, true);
    let sched = Schedule {
        base_lr: 1e-2,
        warmup_steps: 5,
        decay_rate: 0.0,
        steps_per_epoch: 1,
    };
    let mut opt = OptimizerState::new(model.params(), sched, AdamConfig::default());
    let start = model.loss(&seq).unwrap();
    for _ in 0..200 {
        let (_, g) = model.loss_and_grad(&seq, None).unwrap();
        opt.step(model.params_mut(), &g).unwrap();
    }
    let end = model.loss(&seq).unwrap();
    assert!(end < 0.05 && end < start, "{start} -> {end}");
}

fn sample_checkpoint(with_optimizer: bool) -> ModelCheckpoint {
    let cfg = tiny_config(EmbeddingMode::TokenPosition);
    let model = Transformer::<f32>::init(&cfg).unwrap();
    let optimizer = with_optimizer.then(|| {
        let mut opt = OptimizerState::new(model.params(), Schedule::default(), AdamConfig::default());
        let mut g = model.params().zeros_like();
        g.fill(0.25);
        let mut p = model.params().clone();
        opt.step(&mut p, &g).unwrap();
        opt
    });
    ModelCheckpoint {
        config: cfg,
        params: model.into_parameters(),
        optimizer,
        vocab_hash: "abc123".into(),
    }
}

#[test]
fn checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for with_opt in [false, true] {
        let ckpt = sample_checkpoint(with_opt);
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        assert!(!dir.path().join("model.tmp").exists());
        let back = load_checkpoint(&path, "abc123").unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), ckpt.to_bytes());
    }
}

#[test]
fn checkpoint_verification_fails_loudly() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = sample_checkpoint(true);
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    assert!(matches!(
        load_checkpoint(&path, "other"),
        Err(Error::Checkpoint(CheckpointError::VocabularyMismatch { .. }))
    ));

    let bytes = ckpt.to_bytes();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(ModelCheckpoint::from_bytes(&bad_magic), Err(CheckpointError::BadMagic)));
    let mut bad_version = bytes.clone();
    bad_version[8] = 9;
    assert!(matches!(
        ModelCheckpoint::from_bytes(&bad_version),
        Err(CheckpointError::VersionMismatch { expected: 1, found: 9 })
    ));
    for cut in [0, 7, 12, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(ModelCheckpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(ModelCheckpoint::from_bytes(&trailing), Err(CheckpointError::Malformed(_))));
    assert!(matches!(
        load_checkpoint(&dir.path().join("missing.ckpt"), "abc123"),
        Err(Error::Io { .. })
    ));
}
