use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{offset, GenerativeModel};
use crate::table::Table;

const CHUNK_ROWS: usize = 4096;

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = f64::INFINITY;
    }
    out
}

fn draw(cum: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let u = rng.random::<f64>() * total;
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

struct Sampler<'a> {
    model: &'a GenerativeModel,
    order: Vec<usize>,
    /// `[column][parent state]` cumulative state probabilities.
    state_cdf: Vec<Vec<Vec<f64>>>,
    /// `[column][state]` cumulative value counts and their total.
    value_cdf: Vec<Vec<(Vec<f64>, f64)>>,
    offsets: Vec<(usize, usize)>,
}

impl<'a> Sampler<'a> {
    fn new(model: &'a GenerativeModel) -> Sampler<'a> {
        let state_cdf = (0..model.columns.len())
            .map(|c| model.cpt(c).iter().map(|row| cumulative(row.iter().copied())).collect())
            .collect();
        let value_cdf = model
            .columns
            .iter()
            .map(|col| {
                col.states
                    .iter()
                    .map(|s| {
                        let total: u64 = s.values.iter().map(|(_, n)| n).sum();
                        (cumulative(s.values.iter().map(|(_, n)| *n as f64)), total as f64)
                    })
                    .collect()
            })
            .collect();
        Sampler {
            model,
            order: model.topological_order(),
            state_cdf,
            value_cdf,
            offsets: model.offset_pairs(),
        }
    }

    fn row(&self, rng: &mut ChaCha8Rng, states: &mut [usize]) -> Vec<String> {
        let m = self.model;
        let mut row = vec![String::new(); m.columns.len()];
        for &c in &self.order {
            let ps = m.parents[c].map_or(0, |p| states[p]);
            let s = draw(&self.state_cdf[c][ps], 1.0, rng);
            states[c] = s;
            let values = &m.columns[c].states[s].values;
            let v = if values.len() == 1 {
                0
            } else {
                let (cdf, total) = &self.value_cdf[c][s];
                draw(cdf, *total, rng)
            };
            row[c] = values[v].0.clone();
        }
        offset::from_model_space(&mut row, &self.offsets);
        row
    }
}

/// Draws `n` rows by ancestral sampling. Rows are produced in chunks, each
/// from its own ChaCha stream, so output depends only on `(model, n, seed)`.
pub fn sample(model: &GenerativeModel, n: usize, seed: u64) -> Table {
    let sampler = Sampler::new(model);
    let chunks: Vec<usize> = (0..n.div_ceil(CHUNK_ROWS)).collect();
    let rows: Vec<Vec<String>> = chunks
        .par_iter()
        .flat_map_iter(|&chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let len = CHUNK_ROWS.min(n - chunk * CHUNK_ROWS);
            let mut states = vec![0; model.columns.len()];
            (0..len).map(|_| sampler.row(&mut rng, &mut states)).collect::<Vec<_>>()
        })
        .collect();
    Table::new(model.header(), rows).expect("sampled rows match the header")
}
