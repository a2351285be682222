use sq2s_core::synthdata::generate_corpus;
use sq2s_core::trainer::{evaluate, train, Dataset, Scale, TrainConfig};

#[test]
fn overfit_on_four_samples_halves_reconstruction_loss() {
    let scale = Scale::DeskSmall;
    let items = generate_corpus(&scale.corpus(2, 2, 1)).unwrap();
    let data = Dataset::new(&items, &scale.model(), scale.mel(), 0).unwrap();
    let pool: Vec<usize> = (0..4).collect();
    let cfg = TrainConfig {
        scale,
        steps: 600,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &data, &pool, |_, _| Ok(())).unwrap();
    let (first, last) = out.log.rec_ends(20);
    assert!(last <= 0.5 * first, "L_rec {first} -> {last}");
    let fresh = train(&TrainConfig { steps: 0, ..cfg.clone() }, &data, &pool, |_, _| Ok(())).unwrap();
    let before = evaluate(&fresh.model, &data, &pool, true, "full", 0).unwrap().corr2d().0;
    let after = evaluate(&out.model, &data, &pool, true, "full", 0).unwrap().corr2d().0;
    assert!(after > before, "train corr2d {before} -> {after}");
}
