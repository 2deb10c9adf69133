use mug_diffcore::{AdamConfig, AdamState, Tape, Tensor, Var};
use mug_tsdata::{Segment, TimeSeries};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::retrieval_loss;
use super::rank::hard_rank;
use crate::encoders::Mode;
use crate::model::{BoundModel, MugModel};
use crate::{MugError, Result};

/// Queries and targets of one retrieval batch, as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalBatch {
    /// Indices into the segment pool, in batch order.
    pub indices: Vec<usize>,
    pub seed: u64,
    /// `B × d` average-pooled fine embeddings.
    pub queries: Tensor,
    /// `B × d` multi-granularity vectors of the same segments.
    pub targets: Tensor,
}

impl RetrievalBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Hard rank of every query's own target among the batch targets.
    pub fn hard_ranks(&self) -> Vec<usize> {
        hard_ranks(&self.queries, &self.targets)
    }

    pub fn mean_hard_rank(&self) -> f64 {
        let r = self.hard_ranks();
        r.iter().sum::<usize>() as f64 / r.len() as f64
    }
}

fn hard_ranks(queries: &Tensor, targets: &Tensor) -> Vec<usize> {
    let b = queries.rows();
    (0..b)
        .map(|i| {
            let others: Vec<&[f64]> = (0..b).filter(|&j| j != i).map(|j| targets.row(j)).collect();
            hard_rank(queries.row(i), targets.row(i), &others)
        })
        .collect()
}

/// Samples `batch_size` segments without replacement and evaluates their
/// queries and targets in evaluation mode.
pub fn build_retrieval_batch(
    model: &MugModel,
    segments: &[Segment],
    batch_size: usize,
    seed: u64,
) -> Result<RetrievalBatch> {
    if batch_size < 2 {
        return Err(MugError::contract(format!("batch size must be >= 2, got {batch_size}")));
    }
    if segments.len() < batch_size {
        return Err(MugError::contract(format!(
            "{} segments cannot fill a batch of {batch_size}",
            segments.len()
        )));
    }
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(batch_size);
    let (queries, targets) = eval_pairs(model, segments, &order)?;
    Ok(RetrievalBatch {
        indices: order,
        seed,
        queries,
        targets,
    })
}

fn eval_pairs(model: &MugModel, segments: &[Segment], indices: &[usize]) -> Result<(Tensor, Tensor)> {
    let pairs = indices
        .par_iter()
        .map(|&i| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, false);
            let f = model.forward_segment(&mut tape, &bound, &segments[i], &mut Mode::Eval)?;
            Ok((
                tape.value(f.query)?.data().to_vec(),
                tape.value(f.multi)?.data().to_vec(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (q, t): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok((Tensor::from_rows(&q)?, Tensor::from_rows(&t)?))
}

/// Mean hard rank over every full evaluation-mode batch of a segment pool,
/// batches drawn by a seeded shuffle.
pub fn evaluate_mean_rank(model: &MugModel, segments: &[Segment], batch_size: usize, seed: u64) -> Result<f64> {
    if batch_size < 2 || segments.len() < batch_size {
        return Err(MugError::contract(format!(
            "{} segments cannot fill a batch of {batch_size}",
            segments.len()
        )));
    }
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (mut total, mut count) = (0usize, 0usize);
    for chunk in order.chunks_exact(batch_size) {
        let (q, t) = eval_pairs(model, segments, chunk)?;
        let r = hard_ranks(&q, &t);
        total += r.iter().sum::<usize>();
        count += r.len();
    }
    Ok(total as f64 / count as f64)
}

/// Every segment of every series, in series order.
pub fn dataset_segments(model: &MugModel, series: &[TimeSeries]) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for ts in series {
        out.extend(model.segments(ts)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean hard rank of the training batches (training-mode forward).
    pub mean_hard_rank: f64,
    pub batches: usize,
}

/// Loss, monitoring rank and summed parameter gradients of one batch.
#[derive(Debug)]
pub struct BatchGradients {
    pub loss: f64,
    pub mean_hard_rank: f64,
    pub grads: Vec<Tensor>,
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic stream seed for a (seed, epoch, batch, item) tuple.
pub fn derive_seed(seed: u64, epoch: u64, batch: u64, item: u64) -> u64 {
    mix(mix(mix(mix(seed) ^ epoch) ^ batch) ^ item)
}

struct ItemPass {
    tape: Tape,
    params: Vec<Var>,
    query: Var,
    target: Var,
}

/// Forward, loss and backward for one batch of segments. `dropout_seeds`
/// gives each item's dropout stream; `None` runs in evaluation mode.
pub fn batch_gradients(
    model: &MugModel,
    batch: &[&Segment],
    dropout_seeds: Option<&[u64]>,
    config: &crate::config::TrainConfig,
) -> Result<BatchGradients> {
    if batch.len() < 2 {
        return Err(MugError::contract(format!(
            "retrieval batch needs >= 2 items, got {}",
            batch.len()
        )));
    }
    let passes = batch
        .par_iter()
        .enumerate()
        .map(|(k, seg)| {
            let mut tape = Tape::new();
            let bound: BoundModel = model.bind(&mut tape, true);
            let f = match dropout_seeds {
                Some(seeds) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seeds[k]);
                    model.forward_segment(&mut tape, &bound, seg, &mut Mode::Train(&mut rng))?
                }
                None => model.forward_segment(&mut tape, &bound, seg, &mut Mode::Eval)?,
            };
            Ok(ItemPass {
                tape,
                params: bound.all(),
                query: f.query,
                target: f.multi,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut q_rows = Vec::with_capacity(passes.len());
    let mut t_rows = Vec::with_capacity(passes.len());
    for p in &passes {
        q_rows.push(p.tape.value(p.query)?.data().to_vec());
        t_rows.push(p.tape.value(p.target)?.data().to_vec());
    }
    let queries = Tensor::from_rows(&q_rows)?;
    let targets = Tensor::from_rows(&t_rows)?;
    let mean_hard_rank = {
        let r = hard_ranks(&queries, &targets);
        r.iter().sum::<usize>() as f64 / r.len() as f64
    };

    let mut loss_tape = Tape::new();
    let qv = loss_tape.param(queries);
    let tv = loss_tape.param(targets);
    let loss_var = retrieval_loss(&mut loss_tape, qv, tv, config)?;
    let loss = loss_tape.value(loss_var)?.item().expect("scalar loss");
    if !loss.is_finite() {
        return Err(MugError::Numeric(format!("retrieval loss is {loss}")));
    }
    let mut lg = loss_tape.backward(loss_var)?;
    let gq = lg.take(qv).expect("query gradient");
    let gt = lg.take(tv).expect("target gradient");

    let per_item = passes
        .into_par_iter()
        .enumerate()
        .map(|(k, mut p)| {
            let seeds = [
                (p.query, Tensor::vector(gq.row(k).to_vec())),
                (p.target, Tensor::vector(gt.row(k).to_vec())),
            ];
            let mut g = p.tape.backward_from(&seeds)?;
            p.params
                .iter()
                .map(|&v| {
                    g.take(v)
                        .ok_or_else(|| MugError::Numeric("missing parameter gradient".into()))
                })
                .collect::<Result<Vec<Tensor>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut items = per_item.into_iter();
    let mut grads = items.next().expect("non-empty batch");
    for item in items {
        for (acc, g) in grads.iter_mut().zip(item) {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(MugError::Numeric("non-finite parameter gradient".into()));
    }
    Ok(BatchGradients {
        loss,
        mean_hard_rank,
        grads,
    })
}

/// Model plus optimizer state for unsupervised retrieval training.
#[derive(Debug)]
pub struct Trainer {
    model: MugModel,
    adam: AdamState,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: MugModel) -> Result<Self> {
        model.config().train.validate()?;
        let lr = model.config().train.learning_rate;
        let adam = AdamState::new(
            AdamConfig::with_learning_rate(lr),
            model.parameters().into_iter().map(|(_, t)| t),
        );
        Ok(Self { model, adam, epoch: 0 })
    }

    pub fn model(&self) -> &MugModel {
        &self.model
    }

    pub fn into_model(self) -> MugModel {
        self.model
    }

    pub fn step(&self) -> u64 {
        self.adam.step_count()
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One pass over seeded, shuffled full batches of `segments`.
    pub fn train_epoch(&mut self, segments: &[Segment]) -> Result<EpochReport> {
        let cfg = self.model.config().train.clone();
        let b = cfg.batch_size;
        if segments.len() < b {
            return Err(MugError::contract(format!(
                "{} segments cannot fill a batch of {b}",
                segments.len()
            )));
        }
        let epoch = self.epoch as u64;
        let mut order: Vec<usize> = (0..segments.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            epoch,
            u64::MAX,
            0,
        )));
        let (mut loss_sum, mut rank_sum, mut batches) = (0.0, 0.0, 0usize);
        for (bi, chunk) in order.chunks_exact(b).enumerate() {
            let items: Vec<&Segment> = chunk.iter().map(|&i| &segments[i]).collect();
            let seeds: Vec<u64> = (0..b)
                .map(|k| derive_seed(cfg.seed, epoch, bi as u64, k as u64))
                .collect();
            let out = batch_gradients(&self.model, &items, Some(&seeds), &cfg)?;
            let grads: Vec<Option<&Tensor>> = out.grads.iter().map(Some).collect();
            self.adam.step(&mut self.model.parameters_mut(), &grads)?;
            loss_sum += out.loss;
            rank_sum += out.mean_hard_rank;
            batches += 1;
        }
        if self.model.parameters().iter().any(|(_, t)| !t.is_finite()) {
            return Err(MugError::Numeric(format!("non-finite parameters after epoch {epoch}")));
        }
        self.epoch += 1;
        Ok(EpochReport {
            epoch: self.epoch,
            mean_loss: loss_sum / batches as f64,
            mean_hard_rank: rank_sum / batches as f64,
            batches,
        })
    }

    /// Runs the configured number of epochs, calling `on_epoch` after each.
    pub fn fit(&mut self, segments: &[Segment], mut on_epoch: impl FnMut(&EpochReport)) -> Result<Vec<EpochReport>> {
        let epochs = self.model.config().train.epochs;
        let mut reports = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let r = self.train_epoch(segments)?;
            on_epoch(&r);
            reports.push(r);
        }
        Ok(reports)
    }
}
