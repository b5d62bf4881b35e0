//! Metrics against literal per-instance and per-pair definitions.

use biasscreen_core::metrics::{auc_ovr, cohen_kappa, confusion, prf, Averaging};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i}")).collect()
}

fn count(n: usize, f: impl Fn(usize) -> bool) -> f64 {
    (0..n).filter(|&i| f(i)).count() as f64
}

fn div0(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// (macro p, r, f1, weighted p, r, f1)
fn brute_prf(g: &[usize], p: &[usize], k: usize) -> [f64; 6] {
    let n = g.len();
    let mut out = [0.0; 6];
    for c in 0..k {
        let tp = count(n, |i| g[i] == c && p[i] == c);
        let prec = div0(tp, count(n, |i| p[i] == c));
        let rec = div0(tp, count(n, |i| g[i] == c));
        let f1 = div0(2.0 * prec * rec, prec + rec);
        let w = count(n, |i| g[i] == c) / n as f64;
        for (j, v) in [prec, rec, f1].into_iter().enumerate() {
            out[j] += v / k as f64;
            out[3 + j] += w * v;
        }
    }
    out
}

fn brute_kappa(g: &[usize], p: &[usize], k: usize) -> f64 {
    let n = g.len() as f64;
    let p_o = count(g.len(), |i| g[i] == p[i]) / n;
    let p_e: f64 = (0..k).map(|c| count(g.len(), |i| g[i] == c) / n * count(g.len(), |i| p[i] == c) / n).sum();
    if p_e == 1.0 {
        0.0
    } else {
        (p_o - p_e) / (1.0 - p_e)
    }
}

fn brute_auc(s: &[Vec<f64>], g: &[usize], k: usize) -> f64 {
    let present: Vec<usize> = (0..k).filter(|c| g.contains(c)).collect();
    let mut sum = 0.0;
    for &c in &present {
        let (mut hits, mut pairs) = (0.0, 0.0);
        for i in 0..g.len() {
            for j in 0..g.len() {
                if g[i] == c && g[j] != c {
                    pairs += 1.0;
                    hits += if s[i][c] > s[j][c] { 1.0 } else if s[i][c] == s[j][c] { 0.5 } else { 0.0 };
                }
            }
        }
        sum += hits / pairs;
    }
    sum / present.len() as f64
}

struct Case {
    k: usize,
    golds: Vec<usize>,
    preds: Vec<usize>,
    scores: Vec<Vec<f64>>,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let k = rng.gen_range(2..=5);
    let n = rng.gen_range(2..=50);
    let mut golds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    if golds.iter().all(|&g| g == golds[0]) {
        golds[0] = (golds[0] + 1) % k;
    }
    let preds = (0..n).map(|i| if rng.gen_bool(0.5) { golds[i] } else { rng.gen_range(0..k) }).collect();
    // coarse grid so that ties are common
    let scores = (0..n).map(|_| (0..k).map(|_| rng.gen_range(0..8) as f64 / 8.0).collect()).collect();
    Case { k, golds, preds, scores }
}

#[test]
fn thousand_random_cases_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case_no in 0..1000 {
        let c = random_case(&mut rng);
        let cm = confusion(&c.golds, &c.preds, &names(c.k)).unwrap();
        let m = prf(&cm, Averaging::Macro).unwrap();
        let w = prf(&cm, Averaging::Weighted).unwrap();
        let got = [m.precision, m.recall, m.f1, w.precision, w.recall, w.f1];
        let want = brute_prf(&c.golds, &c.preds, c.k);
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-9, "case {case_no}: prf {got:?} vs {want:?}");
        }
        let kap = cohen_kappa(&cm).unwrap().value;
        assert!((kap - brute_kappa(&c.golds, &c.preds, c.k)).abs() < 1e-9, "case {case_no}: kappa");
        let auc = auc_ovr(&c.scores, &c.golds).unwrap();
        assert!((auc - brute_auc(&c.scores, &c.golds, c.k)).abs() < 1e-9, "case {case_no}: auc");
    }
}

fn case_strategy() -> impl Strategy<Value = (Case, u64)> {
    any::<u64>().prop_map(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random_case(&mut rng), seed)
    })
}

impl std::fmt::Debug for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "k={} golds={:?} preds={:?}", self.k, self.golds, self.preds)
    }
}

proptest! {
    #[test]
    fn joint_permutation_leaves_metrics_unchanged((c, seed) in case_strategy()) {
        let mut order: Vec<usize> = (0..c.golds.len()).collect();
        order.reverse();
        order.rotate_left((seed % c.golds.len() as u64) as usize);
        let g2: Vec<usize> = order.iter().map(|&i| c.golds[i]).collect();
        let p2: Vec<usize> = order.iter().map(|&i| c.preds[i]).collect();
        let s2: Vec<Vec<f64>> = order.iter().map(|&i| c.scores[i].clone()).collect();
        let cm1 = confusion(&c.golds, &c.preds, &names(c.k)).unwrap();
        let cm2 = confusion(&g2, &p2, &names(c.k)).unwrap();
        prop_assert_eq!(&cm1, &cm2);
        prop_assert!((auc_ovr(&c.scores, &c.golds).unwrap() - auc_ovr(&s2, &g2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_transform((c, _) in case_strategy()) {
        let warped: Vec<Vec<f64>> = c.scores.iter().map(|r| r.iter().map(|v| (3.0 * v).exp() - 7.0).collect()).collect();
        prop_assert!((auc_ovr(&c.scores, &c.golds).unwrap() - auc_ovr(&warped, &c.golds).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn weighted_recall_equals_accuracy((c, _) in case_strategy()) {
        let cm = confusion(&c.golds, &c.preds, &names(c.k)).unwrap();
        let acc = biasscreen_core::metrics::accuracy(&cm).unwrap();
        prop_assert!((prf(&cm, Averaging::Weighted).unwrap().recall - acc).abs() < 1e-12);
    }

    #[test]
    fn bounded_values((c, _) in case_strategy()) {
        let r = biasscreen_core::metrics::full_report(&c.golds, &c.preds, &c.scores, &names(c.k)).unwrap();
        for v in [r.accuracy, r.auc, r.weighted.precision, r.weighted.f1, r.macro_avg.precision, r.macro_avg.recall, r.macro_avg.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((-1.0..=1.0).contains(&r.cks));
    }
}
