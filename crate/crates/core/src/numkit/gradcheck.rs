use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NumError, Parameter, Real};

/// Anything that exposes an ordered list of parameters.
pub trait ParamSet<T: Real> {
    fn params(&self) -> Vec<&Parameter<T>>;
    fn params_mut(&mut self) -> Vec<&mut Parameter<T>>;
}

impl<T: Real> ParamSet<T> for Vec<Parameter<T>> {
    fn params(&self) -> Vec<&Parameter<T>> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.iter_mut().collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates are sampled once the total reaches this count.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self { step: 1e-4, max_coords: 5000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// (parameter, flat index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    /// Worst relative error per checked parameter, in parameter order.
    pub per_param: Vec<(String, f64)>,
}

/// Compares the gradients stored in `model` against central differences of
/// `loss_fn`, returning the worst `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// Differences are taken in `T`. Gradients computed at a lower precision are
/// checked by casting the model (gradients included) up to a wider `T`,
/// normally [`DoubleDouble`](super::DoubleDouble).
pub fn finite_diff_check<T, M, F>(model: &mut M, mut loss_fn: F, opts: &FdOptions) -> Result<FdReport, NumError>
where
    T: Real,
    M: ParamSet<T>,
    F: FnMut(&M) -> T,
{
    let first = loss_fn(model);
    let second = loss_fn(model);
    if first != second {
        return Err(NumError::NonDeterministic { first: first.to_f64c(), second: second.to_f64c() });
    }

    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let coords: Vec<usize> = if total < opts.max_coords {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut picked = sample(&mut rng, total, opts.max_coords).into_vec();
        picked.sort_unstable();
        picked
    };

    let h = T::from_f64c(opts.step);
    let two_h = h + h;
    let mut report = FdReport { max_rel_error: 0.0, checked: 0, worst: None, per_param: Vec::new() };
    for flat in coords {
        let (pi, idx) = locate(&sizes, flat);
        let orig = model.params()[pi].value.data()[idx];
        let analytic = model.params()[pi].grad.data()[idx].to_f64c();

        model.params_mut()[pi].value.data_mut()[idx] = orig + h;
        let plus = loss_fn(model);
        model.params_mut()[pi].value.data_mut()[idx] = orig - h;
        let minus = loss_fn(model);
        model.params_mut()[pi].value.data_mut()[idx] = orig;

        let numeric = ((plus - minus) / two_h).to_f64c();
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        report.checked += 1;
        let name = &model.params()[pi].name;
        match report.per_param.last_mut() {
            Some((n, e)) if n == name => *e = e.max(rel),
            _ => report.per_param.push((name.clone(), rel)),
        }
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            let name = model.params()[pi].name.clone();
            report.worst = Some((name, idx, analytic, numeric));
        }
    }
    Ok(report)
}

fn locate(sizes: &[usize], mut flat: usize) -> (usize, usize) {
    for (i, &s) in sizes.iter().enumerate() {
        if flat < s {
            return (i, flat);
        }
        flat -= s;
    }
    unreachable!("flat index beyond parameter total")
}
