//! Analytic gradients against central differences evaluated in double-double.
//! The tiny models used here have gradients near 1e-6, so an f64 difference
//! quotient would carry roundoff comparable to the tolerance itself.

use biasscreen_core::net::{attach_classifier_head, ClassifierNetwork, LmNetwork, Mode, ModelConfig, TokenBatch};
use biasscreen_core::numkit::{finite_diff_check, DoubleDouble, FdOptions, FdReport, Parameter, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Dd = DoubleDouble;

const MODE: Mode = Mode::Train { seed: 17 };
const ROWS: [&[usize]; 2] = [&[2, 7, 13, 4, 19], &[2, 11, 5]];
const NEXT: [&[usize]; 2] = [&[7, 13, 4, 19, 3], &[11, 5, 3]];
const LABELS: [usize; 2] = [3, 1];

fn tiny_config(keep: f64) -> ModelConfig {
    ModelConfig { embed_dim: 8, hidden_dim: 12, dropout_keep: keep, ..ModelConfig::new(20) }
}

fn mean_nll(terms: impl Iterator<Item = Dd>, n: usize) -> Dd {
    let total: Dd = terms.map(|p| -p.ln()).sum();
    total / Dd::from(n as f64)
}

fn lm_loss(net: &LmNetwork<Dd>) -> Dd {
    let out = net.forward_lm_batch(&TokenBatch::from_rows(&ROWS).unwrap(), None, MODE).unwrap();
    let picks = NEXT
        .iter()
        .enumerate()
        .flat_map(|(b, row)| row.iter().enumerate().map(move |(t, &y)| (b, t, y)))
        .map(|(b, t, y)| out.distribution(b, t)[y]);
    mean_nll(picks, 8)
}

fn cls_loss(net: &ClassifierNetwork<Dd>) -> Dd {
    let out = net.forward_batch(&TokenBatch::from_rows(&ROWS).unwrap(), MODE).unwrap();
    mean_nll(LABELS.iter().enumerate().map(|(r, &y)| out.probs.get(r, y)), 2)
}

fn check_lm<T: Real>(keep: f64) -> FdReport {
    let mut net = LmNetwork::<T>::new(tiny_config(keep), 5).unwrap();
    let out = net.forward_lm_batch(&TokenBatch::from_rows(&ROWS).unwrap(), None, MODE).unwrap();
    net.backward_lm(&out, &TokenBatch::from_rows(&NEXT).unwrap()).unwrap();
    finite_diff_check(&mut net.cast::<Dd>(), lm_loss, &FdOptions::default()).unwrap()
}

fn randomize<T: Real>(p: &mut Parameter<T>, rng: &mut ChaCha8Rng) {
    p.value.map_inplace(|_| T::from_f64c(rng.gen_range(-0.5..0.5)));
}

fn classifier<T: Real>(keep: f64) -> ClassifierNetwork<T> {
    let lm = LmNetwork::<T>::new(tiny_config(keep), 9).unwrap();
    let mut net = attach_classifier_head(lm, 5).unwrap();
    // a zero head would leave every backbone gradient at exactly zero
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    randomize(&mut net.class_linear, &mut rng);
    randomize(&mut net.class_bias, &mut rng);
    net
}

fn check_cls<T: Real>(keep: f64) -> FdReport {
    let mut net = classifier::<T>(keep);
    let out = net.forward_batch(&TokenBatch::from_rows(&ROWS).unwrap(), MODE).unwrap();
    net.backward_classifier(&out, &LABELS).unwrap();
    finite_diff_check(&mut net.cast::<Dd>(), cls_loss, &FdOptions::default()).unwrap()
}

fn assert_within(what: &str, rep: &FdReport, tol: f64) {
    for (name, err) in &rep.per_param {
        println!("{what:<28} {name:<16} {err:.3e}");
        assert!(*err < tol, "{what}: {name} rel error {err:e} >= {tol:e}");
    }
    println!("{what:<28} end-to-end       {:.3e} over {} coords", rep.max_rel_error, rep.checked);
    assert!(rep.max_rel_error < tol, "{what}: worst {:?}", rep.worst);
}

#[test]
fn lm_gradients_f64() {
    assert_within("lm f64 no dropout", &check_lm::<f64>(1.0), 1e-6);
    assert_within("lm f64 dropout", &check_lm::<f64>(0.5), 1e-6);
}

#[test]
fn lm_gradients_f32() {
    assert_within("lm f32 no dropout", &check_lm::<f32>(1.0), 1e-3);
    assert_within("lm f32 dropout", &check_lm::<f32>(0.5), 1e-3);
}

#[test]
fn classifier_gradients_f64() {
    let rep = check_cls::<f64>(0.5);
    assert!(rep.per_param.iter().all(|(n, _)| !n.starts_with("lm_head")));
    assert_within("classifier f64 dropout", &rep, 1e-6);
    assert_within("classifier f64 no dropout", &check_cls::<f64>(1.0), 1e-6);
}

#[test]
fn classifier_gradients_f32() {
    assert_within("classifier f32 dropout", &check_cls::<f32>(0.5), 1e-3);
}

#[test]
fn frozen_lm_head_gets_no_gradient() {
    let mut net = classifier::<f64>(1.0);
    let out = net.forward_batch(&TokenBatch::from_rows(&ROWS).unwrap(), MODE).unwrap();
    net.backward_classifier(&out, &LABELS).unwrap();
    assert!(net.backbone.lm_head.grad.data().iter().all(|&g| g == 0.0));
    assert!(net.backbone.lm_bias.grad.data().iter().all(|&g| g == 0.0));
}
