use eenr_core::corpus::{generate_synthetic, time_split, SplitSpec, SyntheticConfig};
use eenr_core::encoders::{Channels, ClickHistory, CATEGORY_EMBEDDING};
use eenr_core::experiment::{embed_event_types, ExperimentConfig};
use eenr_core::predictor::{sample_instances, train_rec, RecModel, TrainHistory, TrainInstance};
use eenr_core::Error;
use eenr_tensor::Tape;

struct Setup {
    model: RecModel,
    train: Vec<eenr_core::corpus::ImpressionLog>,
    val: Vec<eenr_core::corpus::ImpressionLog>,
    history: ClickHistory,
    config: ExperimentConfig,
}

fn setup(synth: SyntheticConfig, seed: u64) -> Setup {
    let config = ExperimentConfig::desk();
    let c = generate_synthetic(&synth, seed).unwrap();
    let news = c.news_with_gold_events();
    let split = time_split(&c.impressions, SplitSpec::default()).unwrap();
    let emb = embed_event_types(&c.schema, &news, &split.train, &config.graph, seed).unwrap();
    let model = RecModel::init(
        config.encoder.clone(),
        Channels::ALL,
        config.trainer.predictor.clone(),
        &news,
        &emb.embedding,
        &split.train,
        seed,
    )
    .unwrap();
    Setup {
        model,
        history: ClickHistory::from_logs(&c.impressions),
        train: split.train,
        val: split.val,
        config,
    }
}

fn train(s: &mut Setup, seed: u64) -> TrainHistory {
    train_rec(&mut s.model, &s.train, &s.val, &s.history, &s.config.trainer.trainer, seed).unwrap()
}

fn small() -> SyntheticConfig {
    SyntheticConfig {
        n_users: 20,
        n_news: 40,
        n_impressions: 300,
        ..SyntheticConfig::default()
    }
}

#[test]
fn initial_loss_is_near_ln5() {
    let s = setup(SyntheticConfig::default(), 3);
    let sampled = sample_instances(&s.train, 4, 3).unwrap();
    let cold = s.model.encoders.encode_all(&s.model.store).unwrap().mean_semantic();
    let refs: Vec<&TrainInstance> = sampled.instances.iter().collect();
    let mut total = 0.0;
    for chunk in refs.chunks(128) {
        let tape = Tape::new();
        total += s.model.batch_loss(&tape, chunk, &s.history, &cold).unwrap().item().unwrap() * chunk.len() as f64;
    }
    let mean = total / refs.len() as f64;
    assert!((mean - 5f64.ln()).abs() < 0.1, "{mean}");
}

#[test]
fn training_is_deterministic_and_moves_every_table() {
    let mut a = setup(small(), 5);
    a.config.trainer.trainer.epochs = 2;
    let before = a.model.store.get(CATEGORY_EMBEDDING).unwrap().clone();
    let mut b = setup(small(), 5);
    b.config.trainer.trainer.epochs = 2;
    // keep the last epoch so that parameters surely moved
    a.val.clear();
    b.val.clear();
    let ha = train(&mut a, 9);
    let hb = train(&mut b, 9);
    assert_eq!(ha, hb);
    assert_eq!(ha.epoch_losses.len(), 2);
    for name in a.model.store.names() {
        assert_eq!(a.model.store.get(name).unwrap(), b.model.store.get(name).unwrap(), "{name}");
    }
    let after = a.model.store.get(CATEGORY_EMBEDDING).unwrap();
    let diff: f64 = after.data().iter().zip(before.data()).map(|(x, y)| (x - y).powi(2)).sum();
    assert!(diff.sqrt() > 0.0);
}

#[test]
fn empty_training_set_is_an_error() {
    let mut s = setup(small(), 5);
    let err = train_rec(&mut s.model, &[], &s.val, &s.history, &s.config.trainer.trainer, 1).unwrap_err();
    assert!(matches!(err, Error::Empty(_)), "{err}");
}

#[test]
fn planted_signal_is_learned() {
    let mut s = setup(SyntheticConfig::default(), 1);
    let h = train(&mut s, 1);
    let start = h.val_auc[0];
    let end = h.val_auc[h.best_epoch];
    assert!(end > 0.75 && end - start >= 0.15, "{:?}", h.val_auc);
}

#[test]
fn no_signal_stays_at_chance() {
    let synth = SyntheticConfig {
        sharpness: 0.0,
        ..SyntheticConfig::default()
    };
    let mut s = setup(synth, 1);
    let h = train(&mut s, 1);
    let end = h.val_auc[h.best_epoch];
    assert!((0.45..=0.55).contains(&end), "{:?}", h.val_auc);
}
