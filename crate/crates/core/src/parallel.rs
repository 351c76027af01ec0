//! Sharded bound evaluation: independent per-row partial sums, then a single O(M³) finish.

use std::ops::Range;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bound::{assemble, check_inputs, layer_contexts, BoundValue, LayerPartial, ROW_CHUNK};
use crate::error::{Error, Result};
use crate::exec::{chunks, map_range, tree_reduce, with_workers};
use crate::model::RecurrentModel;

/// Partial sums of every layer over the time instants `start..end` (0-based, within H_x..N).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialSums {
    pub start: usize,
    pub end: usize,
    pub layers: Vec<LayerPartial>,
}

impl PartialSums {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// The time instants whose rows enter the bound.
pub fn row_range(model: &RecurrentModel) -> Range<usize> {
    model.config.h_x..model.n_train
}

/// Partial sums over one shard of time instants. Reads only the model and the series.
pub fn shard_evaluate(
    model: &RecurrentModel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    shard: Range<usize>,
) -> Result<PartialSums> {
    check_inputs(model, y, x)?;
    let all = row_range(model);
    if shard.start > shard.end || shard.start < all.start || shard.end > all.end {
        return Err(Error::Partition(format!(
            "shard {}..{} is outside {}..{}",
            shard.start, shard.end, all.start, all.end
        )));
    }
    let with_reg = model.variant.ip().is_some();
    let rows = shard.start - all.start..shard.end - all.start;
    let layers = layer_contexts(model, y, x)?
        .iter()
        .enumerate()
        .map(|(l, ctx)| {
            let parts: Vec<_> = chunks(rows.len(), ROW_CHUNK)
                .into_iter()
                .map(|c| {
                    ctx.forward(rows.start + c.start..rows.start + c.end, false)
                        .0
                })
                .collect();
            tree_reduce(parts, |mut a, b| {
                a.add(&b);
                a
            })
            .unwrap_or_else(|| LayerPartial::zeros(model.layers[l].num_features(), with_reg))
        })
        .collect();
    Ok(PartialSums {
        start: shard.start,
        end: shard.end,
        layers,
    })
}

/// Checks that the shards tile H_x..N exactly (empty shards allowed).
pub fn check_partition(model: &RecurrentModel, partials: &[PartialSums]) -> Result<()> {
    let all = row_range(model);
    let mut spans: Vec<(usize, usize)> = partials
        .iter()
        .filter(|p| p.end > p.start)
        .map(|p| (p.start, p.end))
        .collect();
    spans.sort_unstable();
    let mut next = all.start;
    for (s, e) in spans {
        if s < next {
            return Err(Error::Partition(format!(
                "instants {s}..{} are covered twice",
                next.min(e)
            )));
        }
        if s > next {
            return Err(Error::Partition(format!(
                "instants {next}..{s} are missing"
            )));
        }
        next = e;
    }
    if next != all.end {
        return Err(Error::Partition(format!(
            "instants {next}..{} are missing",
            all.end
        )));
    }
    let nl = model.num_layers();
    if let Some(p) = partials.iter().find(|p| p.layers.len() != nl) {
        return Err(Error::dim("shard layer count", nl, p.layers.len()));
    }
    Ok(())
}

/// Sums shard partials pairwise (in start order) and assembles the bound.
pub fn reduce_and_finish(partials: &[PartialSums], model: &RecurrentModel) -> Result<BoundValue> {
    model.validate()?;
    check_partition(model, partials)?;
    let mut ordered: Vec<&PartialSums> = partials.iter().collect();
    ordered.sort_by_key(|p| (p.start, p.end));
    let layers = (0..model.num_layers())
        .map(|l| {
            let parts: Vec<LayerPartial> = ordered.iter().map(|p| p.layers[l].clone()).collect();
            tree_reduce(parts, |mut a, b| {
                a.add(&b);
                a
            })
            .expect("partition is non-empty")
        })
        .collect::<Vec<_>>();
    assemble(model, &layers)
}

/// `count` contiguous shards covering the model's instants.
pub fn even_shards(model: &RecurrentModel, count: usize) -> Vec<Range<usize>> {
    let all = row_range(model);
    let n = all.len();
    let count = count.max(1);
    (0..count)
        .map(|k| all.start + k * n / count..all.start + (k + 1) * n / count)
        .collect()
}

/// Sharded evaluation on a pool of `workers` threads.
pub fn sharded_bound(
    model: &RecurrentModel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    shards: usize,
    workers: usize,
) -> Result<BoundValue> {
    let ranges = even_shards(model, shards);
    let partials = with_workers(workers, || {
        map_range(ranges.len(), |k| {
            shard_evaluate(model, y, x, ranges[k].clone())
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    reduce_and_finish(&partials, model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub workers: usize,
    pub n_hat: usize,
    pub shard_ms: f64,
    pub finish_ms: f64,
}

/// Median wall times of the shard phase (on `workers` threads) and the finish phase.
pub fn time_phases(
    model: &RecurrentModel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    workers: usize,
    shards: usize,
    repeats: usize,
) -> Result<PhaseTiming> {
    let ranges = even_shards(model, shards);
    let mut shard_ms = Vec::new();
    let mut finish_ms = Vec::new();
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        let partials = with_workers(workers, || {
            map_range(ranges.len(), |k| {
                shard_evaluate(model, y, x, ranges[k].clone())
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        shard_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        let t1 = Instant::now();
        let v = reduce_and_finish(&partials, model)?;
        finish_ms.push(t1.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(v);
    }
    Ok(PhaseTiming {
        workers,
        n_hat: row_range(model).len(),
        shard_ms: median(&mut shard_ms),
        finish_ms: median(&mut finish_ms),
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
