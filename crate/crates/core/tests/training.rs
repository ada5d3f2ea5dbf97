use ps3_core::automaton::Fsa;
use ps3_core::decode::beam_search;
use ps3_core::eval::perplexity;
use ps3_core::oracle::brute_force_best;
use ps3_core::ps3::{
    complete_partial, ps3_offline, ps3_online, train_supervised, Dataset, Mode, PartialItem, PartialSpec, Ps3Config,
    SupervisedConfig, TrainingExample,
};
use ps3_core::{ContextVector, DecodeConfig, DecodeMode, DisjunctiveSet, Error, ModelConfig, ModelParams, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_vocab() -> Vocabulary {
    Vocabulary::new(&["a", "red", "blue", "dog", "cat", "bird"]).unwrap()
}

fn config(v: &Vocabulary) -> ModelConfig {
    ModelConfig {
        embed_dim: 6,
        hidden_dim: 8,
        context_dim: 3,
        vocab_size: v.size(),
    }
}

fn complete_data(v: &Vocabulary, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|i| {
            let color = rng.gen_range(0..2);
            let animal = rng.gen_range(0..2);
            let mut ctx = vec![0.0; 3];
            ctx[0] = color as f64;
            ctx[1] = animal as f64;
            ctx[2] = rng.gen_range(-0.1..0.1);
            let words = ["a", ["red", "blue"][color], ["dog", "cat"][animal]];
            TrainingExample::complete(format!("c{i}"), ContextVector(ctx), &v.encode(&words).unwrap(), v).unwrap()
        })
        .collect();
    Dataset {
        vocab: v.clone(),
        examples,
    }
}

fn assert_same_params(a: &ModelParams, b: &ModelParams) {
    for (x, y) in a.tensors.slices().iter().zip(b.tensors.slices().iter()) {
        assert_eq!(x.len(), y.len());
        for (p, q) in x.iter().zip(y.iter()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }
}

#[test]
fn universal_partial_completes_like_beam_search() {
    let v = small_vocab();
    let model = ModelParams::init(config(&v), false, 4).unwrap();
    let ctx = ContextVector(vec![0.3, -0.2, 0.9]);
    let decode = DecodeConfig::default();
    let items = [PartialItem {
        id: "p",
        context: &ctx,
        fsa: Fsa::universal(v.content_size()),
    }];
    let out = complete_partial(&model, &items, &decode);
    let bs = beam_search(&model, &ctx, &decode).unwrap();
    assert_eq!(out[0].1.as_ref().unwrap(), &bs.tokens);
}

#[test]
fn uniform_model_completes_with_shortest_mention() {
    let v = small_vocab();
    let model = ModelParams::zeros(config(&v), false).unwrap();
    let ctx = ContextVector(vec![1.0, 0.0, 0.0]);
    let bird = DisjunctiveSet::from_words(&v, &["bird"]).unwrap();
    let items = [PartialItem {
        id: "p",
        context: &ctx,
        fsa: Fsa::mentions(&v, &bird).unwrap(),
    }];
    // Every score ties here, so the beam must hold the whole tied pool of a
    // step (|Σ| + b entries) for the finished hypothesis to survive.
    let decode = DecodeConfig::new(16, 6, DecodeMode::EosTerminated);
    let out = complete_partial(&model, &items, &decode);
    let expected = vec![v.content_id("bird").unwrap(), v.eos_id()];
    assert_eq!(out[0].1.as_ref().unwrap(), &expected);
    let oracle = brute_force_best(&model, &ctx, 6, DecodeMode::EosTerminated, Some(&items[0].fsa)).unwrap();
    assert_eq!(oracle.tokens, expected);
}

#[test]
fn uniform_model_perplexity_is_vocabulary_size() {
    let v = small_vocab();
    let model = ModelParams::zeros(config(&v), true).unwrap();
    let data = complete_data(&v, 10, 1);
    let batch: Vec<_> = data
        .examples
        .iter()
        .map(|e| match &e.payload {
            ps3_core::ps3::Payload::Complete(s) => (&e.context, s.as_slice()),
            _ => unreachable!(),
        })
        .collect();
    let ppl = perplexity(&model, &batch).unwrap();
    assert!((ppl - v.size() as f64).abs() < 1e-9);
}

#[test]
fn unsatisfiable_partial_is_rejected() {
    let v = small_vocab();
    let groups: Vec<_> = ["red", "dog", "bird"]
        .iter()
        .map(|w| DisjunctiveSet::from_words(&v, &[*w]).unwrap())
        .collect();
    let spec = PartialSpec::Labels {
        groups,
        m: 3,
        sample: 3,
    };
    let res = TrainingExample::partial("p", ContextVector(vec![0.0; 3]), spec, &v, 2);
    assert_eq!(res.unwrap_err(), Error::Unsatisfiable(2));
}

fn all_complete_config(steps: usize, batch: usize) -> Ps3Config {
    Ps3Config {
        total_steps: steps,
        minibatch_size: batch,
        lr: 0.05,
        embed_lr_multiplier: 1.0,
        cold_start: true,
        seed: 17,
        ..Ps3Config::default()
    }
}

#[test]
fn all_complete_ps3_is_supervised_training() {
    let v = small_vocab();
    let data = complete_data(&v, 40, 2);
    let init = ModelParams::init(config(&v), true, 9).unwrap();

    let mut ps3_model = init.clone();
    let logs = ps3_online(&mut ps3_model, &data, &all_complete_config(30, 8)).unwrap();
    assert!(logs.iter().all(|l| l.step1_failures == 0));

    let mut sup_model = init.clone();
    let sup = SupervisedConfig {
        steps: 30,
        minibatch_size: 8,
        lr: 0.05,
        seed: 17,
    };
    let sup_logs = train_supervised(&mut sup_model, &data, &sup, 0, |_, _| Ok(())).unwrap();
    assert_same_params(&ps3_model, &sup_model);
    for (a, b) in logs.iter().zip(&sup_logs) {
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }
}

#[test]
fn online_and_offline_agree_on_full_batches() {
    let v = small_vocab();
    let data = complete_data(&v, 12, 3);
    let init = ModelParams::init(config(&v), false, 1).unwrap();

    let mut online = init.clone();
    ps3_online(&mut online, &data, &all_complete_config(5, 12)).unwrap();

    let mut offline = init.clone();
    let cfg = Ps3Config {
        mode: Mode::Offline,
        outer_iters: 5,
        ..all_complete_config(5, 12)
    };
    let report = ps3_offline(&mut offline, &data, &cfg).unwrap();
    assert_eq!(report.iterations.len(), 5);
    assert!(!report.aborted);
    assert_same_params(&online, &offline);
}

fn mixed_data(v: &Vocabulary) -> Dataset {
    let mut data = complete_data(v, 30, 4);
    let bird = DisjunctiveSet::from_words(v, &["bird"]).unwrap();
    let red = DisjunctiveSet::from_words(v, &["red"]).unwrap();
    for i in 0..10 {
        let spec = PartialSpec::Labels {
            groups: vec![bird.clone(), red.clone()],
            m: 2,
            sample: 2,
        };
        data.examples
            .push(TrainingExample::partial(format!("p{i}"), ContextVector(vec![0.0, 0.5, 1.0]), spec, v, 16).unwrap());
    }
    data
}

#[test]
fn online_training_is_reproducible() {
    let v = small_vocab();
    let data = mixed_data(&v);
    let cfg = Ps3Config {
        total_steps: 20,
        minibatch_size: 10,
        lr: 0.1,
        pretrain: SupervisedConfig {
            steps: 10,
            minibatch_size: 10,
            lr: 0.1,
            seed: 2,
        },
        seed: 5,
        ..Ps3Config::default()
    };
    let init = ModelParams::init(config(&v), true, 3).unwrap();
    let mut a = init.clone();
    let mut b = init.clone();
    let la = ps3_online(&mut a, &data, &cfg).unwrap();
    let lb = ps3_online(&mut b, &data, &cfg).unwrap();
    assert_eq!(la, lb);
    assert_same_params(&a, &b);
    assert_eq!(la.len(), 30);
    assert!(la.iter().all(|l| l.loss.is_finite()));
}

#[test]
fn partial_examples_teach_the_constrained_word() {
    let v = small_vocab();
    let data = mixed_data(&v);
    let cfg = Ps3Config {
        total_steps: 300,
        minibatch_size: 10,
        lr: 0.5,
        embed_lr_multiplier: 1.0,
        decode: DecodeConfig::new(3, 5, DecodeMode::EosTerminated),
        pretrain: SupervisedConfig {
            steps: 200,
            minibatch_size: 10,
            lr: 0.5,
            seed: 2,
        },
        seed: 5,
        ..Ps3Config::default()
    };
    let mut model = ModelParams::init(config(&v), false, 3).unwrap();
    ps3_online(&mut model, &data, &cfg).unwrap();
    let h = beam_search(&model, &ContextVector(vec![0.0, 0.5, 1.0]), &cfg.decode).unwrap();
    let words = v.decode(h.content());
    assert!(words.contains(&"bird".to_string()), "{words:?}");
    assert!(words.contains(&"red".to_string()), "{words:?}");
}
