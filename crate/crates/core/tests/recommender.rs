use std::collections::BTreeMap;

use eenr_core::corpus::{ArgumentSpan, EventRecord, ImpressionLog, NewsItem};
use eenr_core::encoders::*;
use eenr_core::graph::ETypeEmbedding;
use eenr_core::predictor::*;
use eenr_tensor::gradcheck::check;
use eenr_tensor::{ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn event(t: &str, args: &[(&str, &str)]) -> EventRecord {
    EventRecord {
        event_type: t.into(),
        arguments: args
            .iter()
            .map(|(r, a)| ArgumentSpan {
                role: (*r).into(),
                argument: (*a).into(),
                start: 0,
            })
            .collect(),
        class: "C".into(),
    }
}

fn news(id: &str, title: &[&str], cat: &str, events: Vec<EventRecord>) -> NewsItem {
    NewsItem {
        news_id: id.into(),
        title: title.iter().map(|s| s.to_string()).collect(),
        category: cat.into(),
        body: String::new(),
        events,
    }
}

fn corpus() -> Vec<NewsItem> {
    vec![
        news("n0", &["alpha", "beta"], "tech news", vec![event("C/A", &[("buyer", "acme")])]),
        news(
            "n1",
            &["gamma", "beta"],
            "sports",
            vec![event("C/A", &[("buyer", "zeta")]), event("C/B", &[("place", "oslo")])],
        ),
        news("n2", &["delta", "alpha"], "tech news", Vec::new()),
    ]
}

fn imp(user: &str, ts: i64, cands: &[&str], clicked: &[&str]) -> ImpressionLog {
    ImpressionLog {
        user_id: user.into(),
        timestamp: ts,
        candidates: cands.iter().map(|s| s.to_string()).collect(),
        clicked: clicked.iter().map(|s| s.to_string()).collect(),
    }
}

fn logs() -> Vec<ImpressionLog> {
    vec![
        imp("u1", 10, &["n0", "n2"], &["n0"]),
        imp("u1", 20, &["n1", "n2"], &["n1"]),
        imp("u2", 15, &["n0", "n2"], &["n0"]),
        imp("u1", 30, &["n0", "n1", "n2"], &["n2"]),
    ]
}

fn etypes() -> ETypeEmbedding {
    let mut vectors = BTreeMap::new();
    vectors.insert("C/A".to_owned(), vec![0.3, -0.2, 0.5]);
    vectors.insert("C/B".to_owned(), vec![-0.4, 0.1, 0.2]);
    ETypeEmbedding { vectors }
}

fn micro_config() -> EncoderConfig {
    EncoderConfig {
        word_dim: 3,
        d_sem: 2,
        category_dim: 3,
        history_len: 15,
        max_seq_len: 64,
    }
}

fn micro_model(channels: Channels) -> RecModel {
    let train = &logs()[..3];
    RecModel::init(
        micro_config(),
        channels,
        PredictorConfig { hidden: 3 },
        &corpus(),
        &etypes(),
        train,
        7,
    )
    .unwrap()
}

fn encode(model: &RecModel, rows: &[usize]) -> (Tensor, Tensor, Tensor, Tensor) {
    let tape = Tape::new();
    let mut b = Binder::new(&model.store, &tape, false);
    let nb = model.encoders.encode_news(&mut b, rows).unwrap();
    let v = |x: eenr_tensor::Var| (*x.value()).clone();
    (v(nb.nsem), v(nb.net), v(nb.nctg), v(nb.full))
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn news_vector_is_the_concatenation_of_its_channels() {
    let m = micro_model(Channels::ALL);
    let (nsem, net, nctg, full) = encode(&m, &[0, 1, 2]);
    assert_eq!(full.cols(), 2 + 3 + 3);
    assert_eq!(m.encoders.output_dim(), full.cols());
    for i in 0..3 {
        assert_eq!(&full.row(i)[..2], nsem.row(i));
        assert_eq!(&full.row(i)[2..5], net.row(i));
        assert_eq!(&full.row(i)[5..], nctg.row(i));
    }
    let e = etypes();
    let (a, b) = (e.get("C/A").unwrap(), e.get("C/B").unwrap());
    assert!(close(net.row(0), a, 1e-15));
    let mean: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect();
    assert!(close(net.row(1), &mean, 1e-15));
    assert_eq!(net.row(2), &[0.0; 3]);
    // n0 and n2 share a category
    assert_eq!(nctg.row(0), nctg.row(2));
}

#[test]
fn disabled_channels_are_zero_with_the_same_width() {
    let m = micro_model(Channels::TITLE);
    let (_, net, nctg, full) = encode(&m, &[0, 1]);
    assert_eq!(full.cols(), m.encoders.output_dim());
    assert!(net.data().iter().chain(nctg.data()).all(|&x| x == 0.0));
    let full_model = micro_model(Channels::ALL);
    assert_eq!(full_model.encoders.output_dim(), m.encoders.output_dim());
}

#[test]
fn unknown_category_maps_to_the_zero_row() {
    let m = micro_model(Channels::ALL);
    let mut other = corpus();
    other.push(news("n9", &["alpha"], "weather", Vec::new()));
    let enc = Encoders::from_meta(m.encoders.meta().clone(), &other).unwrap();
    let tape = Tape::new();
    let mut b = Binder::new(&m.store, &tape, false);
    let nb = enc.encode_news(&mut b, &[3]).unwrap();
    assert_eq!(nb.nctg.value().data(), &[0.0; 3]);
}

fn semantic_parts(m: &RecModel, seqs: &[Vec<usize>]) -> (Tensor, Tensor, Tensor) {
    let tape = Tape::new();
    let mut b = Binder::new(&m.store, &tape, false);
    let out = m.encoders.news_semantic(&mut b, seqs).unwrap();
    // the same recurrences with the mix pinned to each end
    let mut hi = m.store.clone();
    hi.set(ALPHA, Tensor::full(&[1, 1], 800.0)).unwrap();
    let mut lo = m.store.clone();
    lo.set(ALPHA, Tensor::full(&[1, 1], -800.0)).unwrap();
    let run = |s: &ParamStore| {
        let tape = Tape::new();
        let mut b = Binder::new(s, &tape, false);
        (*m.encoders.news_semantic(&mut b, seqs).unwrap().value()).clone()
    };
    ((*out.value()).clone(), run(&hi), run(&lo))
}

#[test]
fn alpha_limits_select_one_direction() {
    let m = micro_model(Channels::ALL);
    let seqs = vec![m.encoders.tokens(0).to_vec(), m.encoders.tokens(1).to_vec()];
    let (mid, fwd, bwd) = semantic_parts(&m, &seqs);
    assert_ne!(fwd, bwd);
    // sigmoid(0) = 1/2 at initialization
    for i in 0..mid.numel() {
        assert!((mid.data()[i] - 0.5 * (fwd.data()[i] + bwd.data()[i])).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn semantic_vector_is_a_convex_mix(alpha in -6.0f64..6.0, seq in proptest::collection::vec(2usize..10, 1..6)) {
        let mut m = micro_model(Channels::ALL);
        let seq: Vec<usize> = seq.into_iter().filter(|&t| t < m.encoders.meta().vocab.len()).collect();
        prop_assume!(!seq.is_empty());
        m.store.set(ALPHA, Tensor::full(&[1, 1], alpha)).unwrap();
        let (mid, fwd, bwd) = semantic_parts(&m, &[seq]);
        for i in 0..mid.numel() {
            let (lo, hi) = (fwd.data()[i].min(bwd.data()[i]), fwd.data()[i].max(bwd.data()[i]));
            prop_assert!(mid.data()[i] >= lo - 1e-15 && mid.data()[i] <= hi + 1e-15);
        }
    }
}

#[test]
fn semantic_gradient_wrt_word_embeddings() {
    let mut m = micro_model(Channels::ALL);
    let seqs = vec![m.encoders.tokens(0).to_vec(), m.encoders.tokens(1).to_vec()];
    let head = Tensor::matrix(2, 1, vec![0.7, -1.3]).unwrap();
    let f = |m: &RecModel| {
        let tape = Tape::new();
        let mut b = Binder::new(&m.store, &tape, true);
        let e = m.encoders.news_semantic(&mut b, &seqs).unwrap();
        let y = e.matmul(tape.constant(head.clone())).unwrap().tanh().unwrap().sum().unwrap();
        y.item().unwrap()
    };
    let tape = Tape::new();
    let mut b = Binder::new(&m.store, &tape, true);
    let e = m.encoders.news_semantic(&mut b, &seqs).unwrap();
    let y = e.matmul(tape.constant(head.clone())).unwrap().tanh().unwrap().sum().unwrap();
    tape.backward(y).unwrap();
    let mut store = m.store.clone();
    store.collect_grads(&tape).unwrap();
    let analytic = store.grad(WORD_EMBEDDING).unwrap().clone();
    let base = m.store.get(WORD_EMBEDDING).unwrap().clone();
    let report = check(&base, &analytic, 1e-5, |p| {
        m.store.set(WORD_EMBEDDING, p.clone()).unwrap();
        f(&m)
    });
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn category_rows_follow_their_names() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vocab = WordVocab::from(vec!["a".to_owned(), "b".to_owned()]);
    let words = Tensor::uniform(&[4, 5], 1.0, &mut rng);
    let names: Vec<String> = ["a", "b", "a b", "a", "zzz"].iter().map(|s| s.to_string()).collect();
    let t = init_category_embeddings(&names, &vocab, &words, 3, 1).unwrap();
    assert_eq!(t.rows(), 6);
    assert_eq!(t.row(0), &[0.0; 3]);
    assert_eq!(t.row(1), t.row(4));
    let mean: Vec<f64> = t.row(1).iter().zip(t.row(2)).map(|(x, y)| (x + y) / 2.0).collect();
    assert!(close(t.row(3), &mean, 1e-12));
    assert!(t.row(5).iter().any(|&x| x != 0.0));
    // mean of one word is a fixed linear image of that word
    let mut words2 = words.clone();
    for x in words2.row_mut(vocab.id("a").unwrap()) {
        *x *= 2.0;
    }
    let t2 = init_category_embeddings(&names, &vocab, &words2, 3, 1).unwrap();
    let doubled: Vec<f64> = t.row(1).iter().map(|x| 2.0 * x).collect();
    assert!(close(t2.row(1), &doubled, 1e-12));
}

fn attention(m: &RecModel, hist: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let tape = Tape::new();
    let mut b = Binder::new(&m.store, &tape, false);
    let (w, e) = m.encoders.user_attention(&mut b, tape.constant(hist.clone())).unwrap();
    (w.value().data().to_vec(), e.value().data().to_vec())
}

#[test]
fn attention_edge_cases() {
    let m = micro_model(Channels::ALL);
    let one = Tensor::matrix(1, 2, vec![0.4, -0.9]).unwrap();
    let (w, e) = attention(&m, &one);
    assert_eq!(w, vec![1.0]);
    assert!(close(&e, one.data(), 1e-15));
    let twin = Tensor::matrix(2, 2, vec![0.4, -0.9, 0.4, -0.9]).unwrap();
    assert_eq!(attention(&m, &twin).0, vec![0.5, 0.5]);
    let tape = Tape::new();
    let mut b = Binder::new(&m.store, &tape, false);
    let empty = tape.constant(Tensor::zeros(&[1, 2]));
    let scores = m.encoders.attention_scores(&mut b, empty).unwrap();
    assert!(m.encoders.attend(scores, empty, &[]).is_err());
}

#[test]
fn attention_is_a_convex_combination() {
    let mut m = micro_model(Channels::ALL);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        for name in [ATT_W, ATT_B, ATT_Q] {
            let shape = m.store.get(name).unwrap().shape().to_vec();
            m.store.set(name, Tensor::uniform(&shape, 2.0, &mut rng)).unwrap();
        }
        let len = rng.random_range(1..=15);
        let hist = Tensor::uniform(&[len, 2], 3.0, &mut rng);
        let (w, e) = attention(&m, &hist);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x >= 0.0));
        for j in 0..2 {
            let col: Vec<f64> = (0..len).map(|i| hist.get2(i, j)).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(e[j] >= lo - 1e-12 && e[j] <= hi + 1e-12);
        }
    }
}

#[test]
fn attention_weights_ignore_a_common_score_shift() {
    let m = micro_model(Channels::ALL);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hist = Tensor::uniform(&[4, 2], 1.0, &mut rng);
    let tape = Tape::new();
    let mut b = Binder::new(&m.store, &tape, false);
    let h = tape.constant(hist);
    let s = m.encoders.attention_scores(&mut b, h).unwrap();
    let rows = [0, 1, 2, 3];
    let (w1, _) = m.encoders.attend(s, h, &rows).unwrap();
    let (w2, _) = m.encoders.attend(s.add_scalar(123.0).unwrap(), h, &rows).unwrap();
    assert!(close(w1.value().data(), w2.value().data(), 1e-12));
}

#[test]
fn user_tables_start_from_training_history() {
    let m = micro_model(Channels::ALL);
    // u2 clicked only n0, whose single type is C/A
    let row = m.encoders.user_row("u2");
    let etd = m.store.get(USER_ETD).unwrap();
    assert!(close(etd.row(row), etypes().get("C/A").unwrap(), 1e-15));
    // u1 clicked n0 (C/A) and n1 (C/A, C/B)
    let e = etypes();
    let (a, b) = (e.get("C/A").unwrap(), e.get("C/B").unwrap());
    let mean: Vec<f64> = (0..3).map(|j| (2.0 * a[j] + b[j]) / 3.0).collect();
    assert!(close(etd.row(m.encoders.user_row("u1")), &mean, 1e-15));
    assert_eq!(m.encoders.user_row("nobody"), 0);
    assert_eq!(etd.row(0), &[0.0; 3]);
    let cd = m.store.get(USER_CD).unwrap();
    let cats = m.store.get(CATEGORY_EMBEDDING).unwrap();
    let tech = 1 + m.encoders.meta().categories.iter().position(|c| c == "tech news").unwrap();
    assert!(close(cd.row(row), cats.row(tech), 1e-15));
}

#[test]
fn user_vector_layout() {
    let m = micro_model(Channels::ALL);
    let tape = Tape::new();
    let mut b = Binder::new(&m.store, &tape, false);
    let nb = m.encoders.encode_news(&mut b, &[0, 1, 2]).unwrap();
    let cold = tape.constant(Tensor::matrix(1, 2, vec![9.0, 9.0]).unwrap());
    let q = vec![
        UserQuery {
            row: m.encoders.user_row("u1"),
            history: vec![0],
        },
        UserQuery { row: 0, history: vec![] },
    ];
    let u = m.encoders.encode_users(&mut b, nb.nsem, &q, cold).unwrap();
    let u = u.value();
    assert_eq!(u.cols(), m.encoders.output_dim());
    assert_eq!(&u.row(0)[..2], nb.nsem.value().row(0));
    assert_eq!(&u.row(0)[2..5], m.store.get(USER_ETD).unwrap().row(q[0].row));
    assert_eq!(u.row(1), &[9.0, 9.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
}

fn manual_head(store: &ParamStore, x: &[f64]) -> f64 {
    let w1 = store.get(HEAD_W1).unwrap();
    let b1 = store.get(HEAD_B1).unwrap();
    let w2 = store.get(HEAD_W2).unwrap();
    let b2 = store.get(HEAD_B2).unwrap();
    let mut out = b2.data()[0];
    for j in 0..w1.cols() {
        let z: f64 = (0..x.len()).map(|i| x[i] * w1.get2(i, j)).sum::<f64>() + b1.data()[j];
        out += z.tanh() * w2.data()[j];
    }
    out
}

#[test]
fn hadamard_scoring() {
    let m = micro_model(Channels::ALL);
    let d = m.encoders.output_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = score(&m.store, &x, &vec![1.0; d]).unwrap();
    assert!((s - manual_head(&m.store, &x)).abs() < 1e-14);
    assert_eq!(score(&m.store, &x, &y).unwrap(), score(&m.store, &y, &x).unwrap());
    assert!(score(&m.store, &x, &y[1..]).is_err());
}

#[test]
fn score_gradient_wrt_both_vectors() {
    let m = micro_model(Channels::ALL);
    let d = m.encoders.output_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::uniform(&[1, d], 1.0, &mut rng);
    let y = Tensor::uniform(&[1, d], 1.0, &mut rng);
    let tape = Tape::new();
    let xv = tape.param(x.clone());
    let yv = tape.param(y.clone());
    let mut b = Binder::new(&m.store, &tape, false);
    let s = score_var(&mut b, xv, yv).unwrap().sum().unwrap();
    tape.backward(s).unwrap();
    let rx = check(&x, &xv.grad().unwrap(), 1e-5, |p| score(&m.store, p.data(), y.data()).unwrap());
    let ry = check(&y, &yv.grad().unwrap(), 1e-5, |p| score(&m.store, x.data(), p.data()).unwrap());
    assert!(rx.passes(1e-4) && ry.passes(1e-4), "{rx:?} {ry:?}");
}

fn micro_instance() -> TrainInstance {
    TrainInstance {
        user_id: "u1".into(),
        positive: "n2".into(),
        negatives: vec!["n0".into()],
        timestamp: 30,
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut m = micro_model(Channels::ALL);
    let history = ClickHistory::from_logs(&logs());
    assert_eq!(history.recent("u1", 30, 15).len(), 2);
    let cold = m.encoders.encode_all(&m.store).unwrap().mean_semantic();
    let inst = micro_instance();
    let tape = Tape::new();
    let loss = m.batch_loss(&tape, &[&inst], &history, &cold).unwrap();
    tape.backward(loss).unwrap();
    let mut grads = m.store.clone();
    grads.collect_grads(&tape).unwrap();
    let names: Vec<String> = m.store.names().map(str::to_owned).collect();
    for name in names {
        let analytic = grads.grad(&name).unwrap().clone();
        assert!(analytic.data().iter().any(|&g| g != 0.0), "{name} gets no gradient");
        let base = m.store.get(&name).unwrap().clone();
        let report = check(&base, &analytic, 1e-5, |p| {
            m.store.set(&name, p.clone()).unwrap();
            let tape = Tape::new();
            m.batch_loss(&tape, &[&inst], &history, &cold).unwrap().item().unwrap()
        });
        m.store.set(&name, base).unwrap();
        assert!(report.passes(1e-4), "{name}: {report:?}");
    }
}

#[test]
fn ranking_is_a_distribution() {
    let cands: Vec<String> = vec!["b".into()];
    let r = rank_scores(&cands, &[3.0]);
    assert_eq!(r[0].prob, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let n = rng.random_range(1..9);
        let cands: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let r = rank_scores(&cands, &scores);
        assert!((r.iter().map(|x| x.prob).sum::<f64>() - 1.0).abs() < 1e-12);
        // permuting candidates together with their scores changes nothing
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        let pc: Vec<String> = perm.iter().map(|&i| cands[i].clone()).collect();
        let ps: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let rp = rank_scores(&pc, &ps);
        for (a, b) in rp.iter().zip(&r) {
            assert_eq!(a.news_id, b.news_id);
            assert!((a.prob - b.prob).abs() < 1e-15);
        }
        // a strictly increasing transform keeps the order
        let t: Vec<f64> = scores.iter().map(|s| 2.0 * s.powi(3) + s).collect();
        let order = |v: Vec<RankedItem>| v.into_iter().map(|x| x.news_id).collect::<Vec<_>>();
        assert_eq!(order(rank_scores(&cands, &t)), order(r));
    }
    let tie = rank_scores(&["z".into(), "a".into()], &[1.0, 1.0]);
    assert_eq!(tie[0].news_id, "a");
}

#[test]
fn rank_uses_model_scores() {
    let m = micro_model(Channels::ALL);
    let history = ClickHistory::from_logs(&logs());
    let last = logs()[3].clone();
    let r = m.rank(&last, &history).unwrap();
    assert_eq!(r.len(), 3);
    let raw = m.score_impressions(&[last.clone()], &history).unwrap();
    assert_eq!(r, rank_scores(&last.candidates, &raw[0]));
    let empty = imp("u1", 1, &[], &[]);
    assert!(m.rank(&empty, &history).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let m = micro_model(Channels::ALL);
    let dir = tempfile::tempdir().unwrap();
    let (p, meta) = (dir.path().join("rec.bin"), dir.path().join("rec.json"));
    m.save(&p, &meta).unwrap();
    let back = RecModel::load(&p, &meta, &corpus()).unwrap();
    let history = ClickHistory::from_logs(&logs());
    assert_eq!(
        back.score_impressions(&logs(), &history).unwrap(),
        m.score_impressions(&logs(), &history).unwrap()
    );
}
