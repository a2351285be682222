use super::*;
use crate::synthdata::generate_corpus;

fn tiny_data(subjects: usize) -> Dataset {
    let scale = Scale::DeskSmall;
    let items = generate_corpus(&scale.corpus(subjects, 2, 5)).unwrap();
    Dataset::new(&items, &scale.model(), scale.mel(), 64).unwrap()
}

fn cfg(ablation: &str) -> TrainConfig {
    TrainConfig {
        scale: Scale::DeskSmall,
        ablation: ablation.parse().unwrap(),
        steps: 3,
        ..TrainConfig::default()
    }
}

/// One step from a fresh seed-0 model; returns the updated model.
fn one_step(c: &TrainConfig, data: &Dataset, pair: Pair) -> (Translator<f32>, StepLosses) {
    let mut m = Translator::<f32>::new(c.scale.model(), 0).unwrap();
    let mut opt = Optimizers::new(&m, c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let l = train_step(&mut m, &mut opt, data, &[pair], c, 1, &mut rng).unwrap();
    (m, l)
}

fn pair(data: &Dataset, same: bool) -> Pair {
    let i = 0;
    let j = (0..data.items.len())
        .find(|&j| data.items[j].subject != data.items[i].subject && (data.items[j].class_id == data.items[i].class_id) == same)
        .unwrap();
    Pair {
        items: [i, j],
        crops: [0, 1],
        same_utterance: same,
    }
}

#[test]
fn no_gan_leaves_discriminator_untouched() {
    let data = tiny_data(2);
    let fresh = Translator::<f32>::new(Scale::DeskSmall.model(), 0).unwrap();
    let (m, l) = one_step(&cfg("no_gan"), &data, pair(&data, true));
    assert_eq!(m.d, fresh.d);
    assert_eq!((l.adv, l.disc), (0.0, 0.0));
    assert_ne!(m.f, fresh.f);
    let (m, l) = one_step(&cfg("full"), &data, pair(&data, true));
    assert_ne!(m.d, fresh.d);
    assert!(l.adv > 0.0 && l.disc > 0.0 && l.kl >= 0.0);
}

#[test]
fn different_utterance_pairs_ignore_kl() {
    let data = tiny_data(2);
    let p = pair(&data, false);
    let (a, la) = one_step(&cfg("full"), &data, p);
    let (b, _) = one_step(&cfg("no_pairwise"), &data, p);
    assert_eq!(la.kl, 0.0);
    assert_eq!(a, b);
    let big_beta = TrainConfig { beta: 50.0, ..cfg("full") };
    assert_eq!(one_step(&big_beta, &data, p).0, a);
}

#[test]
fn attention_learns_from_reconstruction_only() {
    let data = tiny_data(2);
    let p = pair(&data, true);
    let (a, _) = one_step(&cfg("full"), &data, p);
    let quiet = TrainConfig {
        beta: 0.0,
        lambda: 0.0,
        ..cfg("full")
    };
    let (b, _) = one_step(&quiet, &data, p);
    assert_eq!(a.a, b.a);
    assert_ne!(a.f, b.f);
    // D's learning rate never reaches the translator
    let slow_d = TrainConfig { lr_d: 1e-9, ..cfg("full") };
    let (c, _) = one_step(&slow_d, &data, p);
    assert_eq!(c.f, a.f);
    assert_eq!(c.a, a.a);
    assert_ne!(c.d, a.d);
}

#[test]
fn no_gan_no_pairwise_is_plain_mse() {
    let data = tiny_data(2);
    let c = cfg("no_gan+no_pairwise");
    let p = pair(&data, true);
    let (stepped, l) = one_step(&c, &data, p);

    // the same update by hand: MSE gradients, then Adam on F and A
    let mut m = Translator::<f32>::new(c.scale.model(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tape = Tape::new();
    let h = m.bind(&mut tape, true, true, false);
    let mut recs = Vec::new();
    for k in 0..2 {
        let item = &data.items[p.items[k]];
        let eps = sample_eps(&[14, 4, 4], &mut rng);
        let out = m.forward(&mut tape, &h, &item.sequence, true, Some(&eps)).unwrap();
        let t = tape.constant(item.crops[p.crops[k]].clone());
        recs.push(loss_rec(&mut tape, out.spec, t).unwrap());
    }
    let s = tape.add(recs[0], recs[1]).unwrap();
    let rec = tape.scale(s, 0.5).unwrap();
    assert_eq!(tape.value(rec).data()[0] as f64, l.rec);
    tape.backward(rec).unwrap();
    let (gf, ga) = (m.f.grads(&tape, &h.f), m.a.grads(&tape, &h.a));
    let mut opt = Optimizers::new(&m, &c).unwrap();
    opt.f.step(m.f.tensors_mut(), &gf).unwrap();
    opt.a.step(m.a.tensors_mut(), &ga).unwrap();
    assert_eq!(m, stepped);
}

#[test]
fn no_attention_freezes_attention_weights() {
    let data = tiny_data(2);
    let fresh = Translator::<f32>::new(Scale::DeskSmall.model(), 0).unwrap();
    let (m, _) = one_step(&cfg("no_attention"), &data, pair(&data, true));
    assert_eq!(m.a, fresh.a);
}

#[test]
fn training_is_deterministic_and_logged() {
    let data = tiny_data(2);
    let c = TrainConfig {
        checkpoint_every: 2,
        steps: 4,
        ..cfg("full")
    };
    let pool: Vec<usize> = (0..data.items.len()).collect();
    let mut saved = Vec::new();
    let a = train(&c, &data, &pool, |s, _| {
        saved.push(s);
        Ok(())
    })
    .unwrap();
    let b = train(&c, &data, &pool, |_, _| Ok(())).unwrap();
    assert_eq!(saved, vec![2, 4]);
    assert_eq!(a.checkpoint(&c).to_bytes().unwrap(), b.checkpoint(&c).to_bytes().unwrap());
    assert_eq!(a.log.records.len(), 4);
    let csv = a.log.to_csv();
    assert!(csv.starts_with(TRAIN_LOG_HEADER));
    assert_eq!(csv.lines().count(), 5);
    for r in &a.log.records {
        let l = r.losses;
        assert!([l.rec, l.kl, l.adv, l.disc].iter().all(|v| v.is_finite()));
    }
    let other = train(&TrainConfig { seed: 1, ..c.clone() }, &data, &pool, |_, _| Ok(())).unwrap();
    assert_ne!(other.model, a.model);
}

#[test]
fn checkpoint_records_training_setup() {
    let data = tiny_data(2);
    let c = TrainConfig { steps: 1, ..cfg("no_attention") };
    let pool: Vec<usize> = (0..data.items.len()).collect();
    let ck = train(&c, &data, &pool, |_, _| Ok(())).unwrap().checkpoint(&c);
    assert_eq!(ck.meta("ablation").as_deref(), Some("no_attention"));
    let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    assert_eq!(train_config_of(&back).unwrap(), c);
}

#[test]
fn config_text_round_trip_and_errors() {
    let c = TrainConfig {
        beta: 0.3,
        ablation: "no_gan+no_pairwise".parse().unwrap(),
        adv: AdvVariant::Minimax,
        scale: Scale::Paper,
        ..TrainConfig::default()
    };
    assert_eq!(TrainConfig::parse(&c.to_kv()).unwrap(), c);
    assert_eq!(TrainConfig::parse("# defaults\n").unwrap(), TrainConfig::default());
    let d = TrainConfig::default();
    assert_eq!((d.lr_f, d.lr_a, d.lr_d), (1e-3, 1e-3, 1e-4));
    assert!(TrainConfig::parse("lr_f=0").is_err());
    assert!(TrainConfig::parse("lr_d=-1").is_err());
    assert!(TrainConfig::parse("p_same=1.5").is_err());
    assert!(TrainConfig::parse("colour=blue").is_err());
    assert!(TrainConfig::parse("ablate=no_colour").is_err());
}

#[test]
fn grids() {
    let g = parse_grid("0.2:0.8:0.1").unwrap();
    assert_eq!(g, vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]);
    assert_eq!(parse_grid("0.1,0.5").unwrap(), vec![0.1, 0.5]);
    assert!(parse_grid("0.5,0.1").is_err());
    assert!(parse_grid("0.2:0.8").is_err());
    assert!(parse_grid("0.2:0.8:0").is_err());
}

#[test]
fn parallel_runner_keeps_order() {
    let jobs: Vec<usize> = (0..17).collect();
    for t in [1, 3, 8] {
        assert_eq!(run_parallel(&jobs, t, |j| j * 2), jobs.iter().map(|j| j * 2).collect::<Vec<_>>());
    }
}

#[test]
fn folds_never_see_held_out_items() {
    let data = tiny_data(3);
    let c = TrainConfig { steps: 2, ..cfg("full") };
    for s in data.subjects() {
        let r = run_fold(&c, &data, s).unwrap();
        assert!(r.report.items.iter().all(|i| i.subject == s));
        assert!(r.train_report.items.iter().all(|i| i.subject != s));
    }
    let reports = leave_one_out_eval(&c, &data, &[0, 1], &[]).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0].items.len(), data.items.len());
    assert!(leave_one_out_eval(&c, &tiny_data(1), &[0], &[]).is_err());
}

proptest::proptest! {
    #[test]
    fn range_grids_are_increasing_and_inclusive(a in 0u32..50, n in 0u32..30, st in 1u32..20) {
        let (start, step) = (a as f64 / 10.0, st as f64 / 100.0);
        let stop = start + n as f64 * step;
        let g = parse_grid(&format!("{start}:{stop}:{step}")).unwrap();
        proptest::prop_assert_eq!(g.len(), n as usize + 1);
        proptest::prop_assert!(g.windows(2).all(|w| w[1] > w[0]));
        proptest::prop_assert!((g[n as usize] - stop).abs() < 1e-6);
    }
}
