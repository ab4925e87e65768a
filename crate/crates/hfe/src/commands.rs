//! The five command implementations, independent of argument parsing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hfe_core::checkpoint::Checkpoint;
use hfe_core::data::{generate_synthetic, SynthSpec};
use hfe_core::eval::{embedding_diagnostics, metric_report, predictions, project_2d};
use hfe_core::mining::{mine_batch, pk_sample};
use hfe_core::model::{forward_batch, Forward};
use hfe_core::train::{initial_state, train, SAMPLING_STREAM};
use hfe_core::{Batch, HfeRng, LossReport, Sample};

use crate::config::{batches_per_epoch, LogFormat, RunConfig};
use crate::dataset::{load_csv, save_csv, Dataset};
use crate::report::{EvalReport, LogLine, LogWriter};
use crate::store::{load_checkpoint, save_checkpoint};
use crate::CliError;

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

pub fn log_file_name(format: LogFormat) -> &'static str {
    match format {
        LogFormat::Csv => "train_log.csv",
        LogFormat::Json => "train_log.jsonl",
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn data_error(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Generates a synthetic dataset and writes it as CSV. Returns the row count.
pub fn cmd_gen_synth(spec: &SynthSpec, out: &Path) -> Result<usize, CliError> {
    let data = generate_synthetic(spec).map_err(|e| CliError::Usage(e.to_string()))?;
    save_csv(out, &data.samples)?;
    Ok(data.samples.len())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: u64,
    pub last: Option<LossReport>,
    pub out_dir: PathBuf,
}

fn training_data(run: &RunConfig) -> Result<Dataset, CliError> {
    match &run.dataset {
        Some(path) => Ok(load_csv(path)?),
        None => {
            let spec = &run.synth;
            let data = generate_synthetic(spec).map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(Dataset {
                samples: data.samples,
                feature_dim: spec.feature_dim,
                num_attrs: spec.num_attrs,
            })
        }
    }
}

/// Trains for `epochs × ceil(N / (P·K))` steps and writes the effective
/// config, the step log and the final checkpoint into `out_dir`.
///
/// `feature_dim` and `num_attrs` are taken from the data, and the schedule
/// horizon `total_iters` is set to the number of steps (at least 1).
pub fn cmd_train(run: &RunConfig) -> Result<TrainOutcome, CliError> {
    run.validate()?;
    let data = training_data(run)?;
    let mut effective = run.clone();
    effective.hfe.feature_dim = data.feature_dim;
    effective.hfe.num_attrs = data.num_attrs;
    let steps = run.epochs * batches_per_epoch(data.samples.len(), effective.hfe.batch_size());
    effective.hfe.total_iters = steps.max(1);
    let cfg = &effective.hfe;

    let dir = &run.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    std::fs::write(&config_path, effective.to_toml()).map_err(|e| CliError::io(&config_path, e))?;

    let log_path = dir.join(log_file_name(run.log_format));
    let mut log = LogWriter::new(create(&log_path)?, run.log_format).map_err(|e| CliError::io(&log_path, e))?;
    let mut state = initial_state(cfg);
    let mut last = None;
    let mut write_err = None;
    let result = train(&mut state, &data.samples, cfg, &run.flags, steps, |step, report| {
        last = Some(*report);
        if step % run.log_every == 0 || step + 1 == steps {
            if let Err(e) = log.write(&LogLine::new(step, report)) {
                write_err.get_or_insert(e);
            }
        }
    });
    let flushed = log.finish();
    result?;
    if let Some(e) = write_err {
        return Err(CliError::io(&log_path, e));
    }
    flushed.map_err(|e| CliError::io(&log_path, e))?;

    save_checkpoint(&dir.join(CHECKPOINT_FILE), cfg, &state)?;
    Ok(TrainOutcome {
        steps,
        last,
        out_dir: dir.clone(),
    })
}

fn load_pair(checkpoint: &Path, dataset: &Path) -> Result<(Checkpoint, Dataset), CliError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let data = load_csv(dataset)?;
    ckpt.check_dims(data.feature_dim, data.num_attrs).map_err(data_error)?;
    Ok((ckpt, data))
}

fn forward_all(ckpt: &Checkpoint, samples: &[Sample]) -> Result<Forward, CliError> {
    let batch = Batch::from_samples(samples.to_vec()).map_err(data_error)?;
    forward_batch(&ckpt.state.model, &batch).map_err(data_error)
}

/// Metrics and embedding diagnostics of a checkpoint on a dataset.
pub fn cmd_eval(checkpoint: &Path, dataset: &Path) -> Result<EvalReport, CliError> {
    let (ckpt, data) = load_pair(checkpoint, dataset)?;
    let fwd = forward_all(&ckpt, &data.samples)?;
    let labels: Vec<Vec<u8>> = data.samples.iter().map(|s| s.attrs.clone()).collect();
    let ids: Vec<u64> = data.samples.iter().map(|s| s.id).collect();
    let metrics = metric_report(&predictions(&fwd.probs), &labels).map_err(data_error)?;
    let diagnostics = embedding_diagnostics(&fwd.embeddings, &labels, &ids).map_err(data_error)?;
    Ok(EvalReport {
        samples: data.samples.len(),
        metrics,
        diagnostics,
    })
}

/// Writes `x,y,a{attr},id` rows of the 2-D PCA projection of attribute
/// `attr`'s embeddings. Returns the row count.
pub fn cmd_project(checkpoint: &Path, dataset: &Path, attr: usize, out: &Path) -> Result<usize, CliError> {
    let (ckpt, data) = load_pair(checkpoint, dataset)?;
    if attr >= data.num_attrs {
        return Err(CliError::Usage(format!(
            "attribute index {attr} out of range for {} attributes",
            data.num_attrs
        )));
    }
    let fwd = forward_all(&ckpt, &data.samples)?;
    let proj = project_2d(&fwd.embeddings[attr]).map_err(data_error)?;
    let mut w = create(out)?;
    let mut body = format!("x,y,a{attr},id\n");
    for (i, s) in data.samples.iter().enumerate() {
        let c = proj.coords.row(i);
        body.push_str(&format!("{},{},{},{}\n", c[0], c[1], s.attrs[attr], s.id));
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(out, e))?;
    Ok(data.samples.len())
}

/// Mines one P×K batch and dumps every quintuplet with its distances.
/// `p` and `k` default to the checkpoint's batch shape. Returns the row count.
pub fn cmd_mine_debug(
    checkpoint: &Path,
    dataset: &Path,
    seed: u64,
    p: Option<usize>,
    k: Option<usize>,
    out: &Path,
) -> Result<usize, CliError> {
    let (ckpt, data) = load_pair(checkpoint, dataset)?;
    let p = p.unwrap_or(ckpt.config.num_ids);
    let k = k.unwrap_or(ckpt.config.imgs_per_id);
    let mut rng = HfeRng::derive(seed, SAMPLING_STREAM);
    let batch = pk_sample(&data.samples, p, k, &mut rng).map_err(data_error)?;
    let fwd = forward_batch(&ckpt.state.model, &batch).map_err(data_error)?;
    let (dists, quints) = mine_batch(&fwd.embeddings, &batch).map_err(|e| CliError::Numerical(e.to_string()))?;

    let cell = |m: Option<usize>| m.map_or(String::new(), |i| i.to_string());
    let mut body = String::from("attr,anchor,sample,id,p1,p2,p3,n,d_p1,d_p2,d_p3,d_n\n");
    for q in &quints {
        let dist = |m: Option<usize>| m.map_or(String::new(), |i| dists[q.attr].get(q.anchor, i).to_string());
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            q.attr,
            q.anchor,
            batch.indices()[q.anchor],
            batch.samples()[q.anchor].id,
            cell(q.p1),
            cell(q.p2),
            cell(q.p3),
            cell(q.n),
            dist(q.p1),
            dist(q.p2),
            dist(q.p3),
            dist(q.n),
        ));
    }
    let mut w = create(out)?;
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(out, e))?;
    Ok(quints.len())
}
