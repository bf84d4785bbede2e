//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

/// Relative error `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// near-zero gradients from amplifying rounding noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Parameter name, flat index, analytic, numeric.
    pub worst: Option<(String, usize, f64, f64)>,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub floor: f64,
    /// Check at most this many coordinates, sampled uniformly; `None` checks all.
    pub samples: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            floor: 1e-6,
            samples: None,
            seed: 0,
        }
    }
}

/// Compares backward-pass gradients of `loss_fn` against central
/// differences. `loss_fn` must build a fresh, deterministic graph.
pub fn check_gradients<F>(store: &mut ParamStore<f64>, loss_fn: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>) -> Result<(Graph<f64>, Var)>,
{
    let (graph, loss) = loss_fn(store)?;
    let grads = graph.backward(loss, store)?;
    drop(graph);

    let coords: Vec<(ParamId, usize)> = store
        .iter()
        .flat_map(|(id, _, t)| (0..t.numel()).map(move |i| (id, i)))
        .collect();
    let chosen: Vec<usize> = match opts.samples {
        Some(n) if n < coords.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut picks = sample(&mut rng, coords.len(), n).into_vec();
            picks.sort_unstable();
            picks
        }
        _ => (0..coords.len()).collect(),
    };

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let (g, l) = loss_fn(store)?;
        Ok(g.value(l).item())
    };
    let mut report = GradCheckReport::default();
    for c in chosen {
        let (id, i) = coords[c];
        let orig = store.tensor(id).data()[i];
        store.tensor_mut(id).data_mut()[i] = orig + opts.step;
        let plus = eval(store)?;
        store.tensor_mut(id).data_mut()[i] = orig - opts.step;
        let minus = eval(store)?;
        store.tensor_mut(id).data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * opts.step);
        let analytic = grads.get(id).data()[i];
        let err = relative_error(analytic, numeric, opts.floor);
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(err);
            if err >= report.max_relative_error {
                report.worst = Some((store.canonical_name(id).to_string(), i, analytic, numeric));
            }
        }
    }
    Ok(report)
}
