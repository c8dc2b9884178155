//! Synchronous training loop with omniscient Byzantine clients.

use rayon::prelude::*;

use crate::aggregators::{aggregate, AggregatorSpec};
use crate::attacks::{dispatch, AttackKind, AttackSpec, HonestContext, RoundKnowledge};
use crate::client::{ClientState, Role};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::{derive_seed, tag};
use crate::vecmath::{cosine_similarity, index_stats, mean_of, ParamVector};

use super::config::{lr_schedule, DatasetSource, ExperimentConfig, PartitionKind};
use super::metrics::MetricsRow;

/// Clip factors this close to 1 count as "not clipped"; the ROP relocation
/// puts submissions exactly on the clipping sphere, up to rounding.
pub const CLIP_TOLERANCE: f64 = 1e-9;

/// Train and held-out splits for one configuration.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset {
        DatasetSource::Blobs => {
            let train = data::generate_blobs(
                cfg.blobs_classes,
                cfg.blobs_per_class,
                cfg.blobs_features,
                cfg.blobs_noise,
                derive_seed(cfg.seed, tag::TRAIN_DATA),
            )?;
            let test = data::generate_blobs(
                cfg.blobs_classes,
                cfg.blobs_test_per_class.max(1),
                cfg.blobs_features,
                cfg.blobs_noise,
                derive_seed(cfg.seed, tag::TEST_DATA),
            )?;
            Ok((train, test))
        }
        DatasetSource::Idx => {
            let path = |p: &Option<std::path::PathBuf>| p.clone().expect("validated idx paths");
            let train = data::load_idx(&path(&cfg.idx_train_images), &path(&cfg.idx_train_labels))?;
            let test = data::load_idx(&path(&cfg.idx_test_images), &path(&cfg.idx_test_labels))?;
            let classes = train.num_classes().max(test.num_classes());
            Ok((train.with_num_classes(classes)?, test.with_num_classes(classes)?))
        }
    }
}

pub struct Experiment {
    cfg: ExperimentConfig,
    model: ModelSpec,
    attack: AttackSpec,
    aggregator: AggregatorSpec,
    train: Dataset,
    flipped: Option<Dataset>,
    test: Dataset,
    /// Benign clients hold ids `0..k-k_m`, Byzantine clients the rest.
    benign: Vec<ClientState>,
    byzantine: Vec<ClientState>,
    params: ParamVector,
    prev_aggregate: ParamVector,
    prev_delta: Option<ParamVector>,
    pool: Option<rayon::ThreadPool>,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Vec<MetricsRow>,
    pub final_params: ParamVector,
}

impl RunOutcome {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.metrics.iter().rev().find_map(|r| r.test_accuracy)
    }
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = load_datasets(&cfg)?;
        Self::with_data(cfg, train, test)
    }

    /// Builds an experiment over caller-supplied data (the dataset keys of
    /// `cfg` are ignored).
    pub fn with_data(cfg: ExperimentConfig, train: Dataset, test: Dataset) -> Result<Self> {
        cfg.validate()?;
        if train.feature_dim() != test.feature_dim() {
            return Err(Error::Config("train and test feature widths differ".into()));
        }
        let num_classes = train.num_classes().max(test.num_classes());
        let model = ModelSpec {
            kind: cfg.model,
            feature_dim: train.feature_dim(),
            num_classes,
            hidden: cfg.mlp_hidden,
            init_seed: derive_seed(cfg.seed, tag::MODEL_INIT),
        };
        model.validate()?;
        let partition_seed = derive_seed(cfg.seed, tag::PARTITION);
        let partition = match cfg.partition {
            PartitionKind::Iid => data::partition_iid(&train, cfg.k, partition_seed)?,
            PartitionKind::Dirichlet => data::partition_dirichlet(&train, cfg.k, cfg.dirichlet_alpha, partition_seed)?,
        };
        let d = model.param_count();
        let honest = cfg.k - cfg.k_m;
        let (mut benign, mut byzantine) = (Vec::new(), Vec::new());
        for (id, shard) in partition.into_shards().into_iter().enumerate() {
            if id < honest {
                benign.push(ClientState::new(id, Role::Benign, d, shard, cfg.seed));
            } else {
                byzantine.push(ClientState::new(id, Role::Byzantine, d, shard, cfg.seed));
            }
        }
        let flipped = (cfg.attack == AttackKind::Labelflip).then(|| data::flip_labels(&train));
        let pool = if cfg.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.workers)
                    .build()
                    .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            attack: cfg.attack_spec(),
            aggregator: cfg.aggregator_spec(),
            params: model.init_params(),
            prev_aggregate: ParamVector::zeros(d),
            prev_delta: None,
            model,
            train,
            flipped,
            test,
            benign,
            byzantine,
            pool,
            cfg,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn prev_aggregate(&self) -> &ParamVector {
        &self.prev_aggregate
    }

    pub fn train_data(&self) -> &Dataset {
        &self.train
    }

    pub fn test_data(&self) -> &Dataset {
        &self.test
    }

    pub fn benign_clients(&self) -> &[ClientState] {
        &self.benign
    }

    fn benign_steps(&mut self) -> Result<Vec<ParamVector>> {
        let (params, beta, batch, model, train) =
            (&self.params, self.cfg.beta, self.cfg.batch_size, &self.model, &self.train);
        let step = |c: &mut ClientState| c.local_step(params, beta, batch, model, train);
        match &self.pool {
            Some(pool) => pool.install(|| self.benign.par_iter_mut().map(step).collect()),
            None => self.benign.iter_mut().map(step).collect(),
        }
    }

    /// Runs round `t` (1-based) and returns its telemetry.
    pub fn run_round(&mut self, t: usize) -> Result<MetricsRow> {
        self.round_inner(t).map_err(|e| e.in_round(t))
    }

    fn round_inner(&mut self, t: usize) -> Result<MetricsRow> {
        let eta = lr_schedule(&self.cfg, t);
        let benign = self.benign_steps()?;
        let (benign_mean, benign_std) = index_stats(&benign)?;
        let knowledge = RoundKnowledge {
            t,
            benign_mean,
            benign_std,
            prev_aggregate: Some(self.prev_aggregate.clone()),
            eta,
            k: self.cfg.k,
            k_m: self.cfg.k_m,
        };
        let byzantine = if self.byzantine.is_empty() {
            Vec::new()
        } else {
            let ctx = HonestContext {
                global: &self.params,
                beta: self.cfg.beta,
                batch_size: self.cfg.batch_size,
                model: &self.model,
                data: &self.train,
                flipped: self.flipped.as_ref(),
            };
            dispatch(&self.attack, &knowledge, &mut self.byzantine, &ctx)?
        };

        let honest = benign.len();
        let mut submissions = benign;
        submissions.extend(byzantine.iter().cloned());
        let outcome = aggregate(&self.aggregator, &submissions, &self.prev_aggregate, t, self.cfg.k_m)?;
        if !outcome.aggregate.is_finite() && self.params.is_finite() {
            log::warn!("round {t}: aggregate is non-finite, the model has diverged");
        }
        self.params.axpy(-eta, &outcome.aggregate);

        let clipped = |fs: &[f64]| {
            if fs.is_empty() {
                0.0
            } else {
                fs.iter().filter(|&&f| f < 1.0 - CLIP_TOLERANCE).count() as f64 / fs.len() as f64
            }
        };
        let train_loss = self.benign.iter().map(|c| c.last_loss()).sum::<f64>() / honest as f64;
        let cos_ref_benign = cosine_similarity(&self.prev_aggregate, &knowledge.benign_mean)?;
        let (cos_ref_byz, cos_delta_prev) = if byzantine.is_empty() {
            (0.0, 0.0)
        } else {
            let byz_mean = mean_of(&byzantine)?;
            let delta = byz_mean.sub(&knowledge.benign_mean);
            let cos_delta = match &self.prev_delta {
                Some(prev) => cosine_similarity(&delta, prev)?,
                None => 0.0,
            };
            self.prev_delta = Some(delta);
            (cosine_similarity(&self.prev_aggregate, &byz_mean)?, cos_delta)
        };

        let (test_accuracy, test_loss) = if t.is_multiple_of(self.cfg.eval_every) || t == self.cfg.rounds {
            let eval = self.model.evaluate(&self.params, &self.test)?;
            (Some(eval.accuracy), Some(eval.mean_loss))
        } else {
            (None, None)
        };

        self.prev_aggregate = outcome.aggregate;
        Ok(MetricsRow {
            round: t,
            eta,
            test_accuracy,
            test_loss,
            train_loss,
            clip_fraction_benign: clipped(&outcome.clip_factors[..honest]),
            clip_fraction_byz: clipped(&outcome.clip_factors[honest..]),
            cos_ref_benign,
            cos_ref_byz,
            cos_delta_prev,
        })
    }

    pub fn run(mut self) -> Result<RunOutcome> {
        let metrics = (1..=self.cfg.rounds)
            .map(|t| self.run_round(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(RunOutcome {
            metrics,
            final_params: self.params,
        })
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    Experiment::new(cfg.clone())?.run()
}
