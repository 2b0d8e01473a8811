//! Training and evaluation harness: cache preparation, the batched Adam
//! loop with seeded shuffling and dropout, ablations, grid sweeps, and
//! matrix export.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod optim;

pub use config::TrainConfig;
pub use metrics::Evaluation;

use crate::autodiff::Tape;
use crate::corpus::{
    self,
    cache::{self, CacheContents},
    FeatureBundle, RawExample, Split, Vocabularies, VocabKind,
};
use crate::encoder;
use crate::error::{Error, Result};
use crate::model::{self, ModelParams};
use crate::views::{ForwardOpts, MatrixTrace};
use ndarray::Array2;
use optim::Adam;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const CACHE_DIR_ENV: &str = "MASGCN_CACHE_DIR";
const TRAIN_FEATURES: &str = "features.train.bin";
const TEST_FEATURES: &str = "features.test.bin";
const HASH_FILE: &str = "config_hash.txt";

/// Cache directory resolution: explicit flag, then the environment
/// override, then ./cache.
pub fn resolve_cache_dir(flag: Option<PathBuf>) -> PathBuf {
    if let Some(dir) = flag {
        return dir;
    }
    if let Ok(dir) = std::env::var(CACHE_DIR_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from("cache")
}

/// Stable sub-seed derivation so shuffling, dropout and init never share
/// or race a stream.
fn derive_seed(master: u64, tag: &str, a: u64, b: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Hash of everything that shapes cached features: dataset bytes plus the
/// two feature-affecting knobs. Training knobs stay out so an lr change
/// does not invalidate the cache.
pub fn feature_hash(views: usize, max_rel_pos: i32, train_bytes: &[u8], test_bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"masgcn-features-v1");
    h.update((views as u32).to_le_bytes());
    h.update(max_rel_pos.to_le_bytes());
    h.update(Sha256::digest(train_bytes));
    h.update(Sha256::digest(test_bytes));
    h.finalize().into()
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepareSummary {
    pub train_counts: [usize; 3],
    pub test_counts: [usize; 3],
    pub train_examples: usize,
    pub test_examples: usize,
    pub words: usize,
    pub pos_tags: usize,
    pub dep_types: usize,
    pub hash_hex: String,
}

/// Loads both splits, builds vocabularies from the train split, tokenizes
/// and writes the feature archives plus vocab files into `cache_dir`.
pub fn prepare(
    train_path: &Path,
    test_path: &Path,
    config: &TrainConfig,
    cache_dir: &Path,
) -> Result<PrepareSummary> {
    let train_bytes = fs::read(train_path).map_err(|e| Error::io(train_path, e))?;
    let test_bytes = fs::read(test_path).map_err(|e| Error::io(test_path, e))?;
    let train_raw = corpus::load_dataset(train_path, Split::Train)?;
    let test_raw = corpus::load_dataset(test_path, Split::Test)?;
    let vocabs = corpus::build_vocabularies(&train_raw)?;
    let hash = feature_hash(config.views, config.max_rel_pos, &train_bytes, &test_bytes);

    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    cache::write_vocab(&cache_dir.join("vocab.word.json"), &vocabs.word)?;
    cache::write_vocab(&cache_dir.join("vocab.pos.json"), &vocabs.pos)?;
    cache::write_vocab(&cache_dir.join("vocab.dep.json"), &vocabs.dep_type)?;

    let num_types = vocabs.dep_type.num_types();
    let tokenized = |raw: &[RawExample]| -> Result<Vec<_>> {
        raw.iter()
            .map(|ex| corpus::tokenize(ex, &vocabs, config.max_rel_pos))
            .collect()
    };
    let train_tok = tokenized(&train_raw)?;
    let test_tok = tokenized(&test_raw)?;
    cache::write_features(
        &cache_dir.join(TRAIN_FEATURES),
        &hash,
        config.views,
        num_types,
        &train_tok,
    )?;
    cache::write_features(
        &cache_dir.join(TEST_FEATURES),
        &hash,
        config.views,
        num_types,
        &test_tok,
    )?;
    let hash_hex = hex(&hash);
    fs::write(cache_dir.join(HASH_FILE), format!("{}\n", hash_hex))
        .map_err(|e| Error::io(&cache_dir.join(HASH_FILE), e))?;

    Ok(PrepareSummary {
        train_counts: corpus::polarity_counts(&train_raw),
        test_counts: corpus::polarity_counts(&test_raw),
        train_examples: train_raw.len(),
        test_examples: test_raw.len(),
        words: vocabs.word.len(),
        pos_tags: vocabs.pos.len(),
        dep_types: num_types,
        hash_hex,
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{:02x}", b)).collect()
}

/// Everything a training run consumes, read back from a prepared cache.
pub struct LoadedData {
    pub vocabs: Vocabularies,
    pub train: Vec<FeatureBundle>,
    pub test: Vec<FeatureBundle>,
    pub hash: [u8; 32],
}

pub fn load_cache(cache_dir: &Path, config: &TrainConfig) -> Result<LoadedData> {
    let word = cache::read_vocab(&cache_dir.join("vocab.word.json"), VocabKind::Word)?;
    let pos = cache::read_vocab(&cache_dir.join("vocab.pos.json"), VocabKind::Pos)?;
    let dep_type = cache::read_vocab(&cache_dir.join("vocab.dep.json"), VocabKind::DepType)?;
    let polarity = corpus::Vocabulary::from_tokens(
        VocabKind::Polarity,
        ["positive", "negative", "neutral"]
            .map(String::from)
            .to_vec(),
    )?;
    let vocabs = Vocabularies {
        word,
        pos,
        dep_type,
        polarity,
    };

    let train = cache::read_features(&cache_dir.join(TRAIN_FEATURES), None)?;
    let test = cache::read_features(&cache_dir.join(TEST_FEATURES), Some(&train.config_hash))?;
    let stored_hex = fs::read_to_string(cache_dir.join(HASH_FILE))
        .map_err(|e| Error::io(&cache_dir.join(HASH_FILE), e))?;
    if stored_hex.trim() != hex(&train.config_hash) {
        return Err(Error::CacheMismatch(
            "config_hash.txt disagrees with the feature archives; re-run prepare".into(),
        ));
    }
    let check = |c: &CacheContents, split: &str| -> Result<()> {
        if c.views != config.views {
            return Err(Error::CacheMismatch(format!(
                "{} features were built for {} views, config wants {}; re-run prepare",
                split, c.views, config.views
            )));
        }
        if c.num_types != vocabs.dep_type.num_types() {
            return Err(Error::CacheMismatch(format!(
                "{} features carry {} dependency types, vocab has {}; re-run prepare",
                split,
                c.num_types,
                vocabs.dep_type.num_types()
            )));
        }
        Ok(())
    };
    check(&train, "train")?;
    check(&test, "test")?;
    let hash = train.config_hash;
    Ok(LoadedData {
        vocabs,
        train: train.bundles,
        test: test.bundles,
        hash,
    })
}

fn forward_opts(config: &TrainConfig, capture_trace: bool) -> ForwardOpts {
    ForwardOpts {
        hidden: config.lstm_hidden,
        max_rel_pos: config.max_rel_pos,
        activation: config.activation,
        disable_view_gate: config.disable_view_gate,
        normalize_gates: config.normalize_gates,
        capture_trace,
    }
}

/// Dropout-free logits for one sentence.
pub fn predict_logits(
    params: &ModelParams,
    bundle: &FeatureBundle,
    config: &TrainConfig,
) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let opts = forward_opts(config, false);
    let pass = crate::views::forward(&mut tape, &vars, bundle, None, &opts)?;
    Ok(tape.value(pass.logits).clone())
}

/// Full forward with trace capture, for matrix export.
pub fn traced_forward(
    params: &ModelParams,
    bundle: &FeatureBundle,
    config: &TrainConfig,
) -> Result<(Array2<f64>, MatrixTrace)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let opts = forward_opts(config, true);
    let pass = crate::views::forward(&mut tape, &vars, bundle, None, &opts)?;
    let logits = tape.value(pass.logits).clone();
    Ok((logits, pass.trace.expect("trace requested")))
}

/// Scores the model over a whole split without dropout.
pub fn evaluate_model(
    params: &ModelParams,
    bundles: &[FeatureBundle],
    config: &TrainConfig,
) -> Result<(Evaluation, Vec<usize>)> {
    if bundles.is_empty() {
        return Err(Error::EmptyInput("evaluation split is empty".into()));
    }
    let mut golds = Vec::with_capacity(bundles.len());
    let mut preds = Vec::with_capacity(bundles.len());
    for bundle in bundles {
        let logits = predict_logits(params, bundle, config)?;
        golds.push(bundle.tok.label_id as usize);
        preds.push(metrics::argmax(logits.row(0).as_slice().unwrap()));
    }
    Ok((metrics::evaluate_predictions(&golds, &preds), preds))
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_ce: f64,
    pub train_se: f64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_acc: Option<f64>,
    pub test_acc: f64,
    pub test_macro_f1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best: Evaluation,
    pub last: Evaluation,
    pub final_train_acc: Option<f64>,
    pub checkpoint: String,
    pub log: Vec<EpochLog>,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters of the best epoch by test accuracy.
    pub params: ModelParams,
}

/// Trains from scratch, evaluating after every epoch and keeping the best
/// test-accuracy weights. Artifacts land in `out_dir`: train_log.jsonl,
/// checkpoint.bin, report.json. A non-finite loss or gradient aborts the
/// run after writing checkpoint.aborted.bin with the pre-update weights.
pub fn train(config: &TrainConfig, data: &LoadedData, out_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyInput("training split is empty".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let shape = config.shape(
        data.vocabs.word.len(),
        data.vocabs.pos.len(),
        data.vocabs.dep_type.num_types(),
    );
    let mut init_rng = ChaCha12Rng::seed_from_u64(derive_seed(config.seed, "init", 0, 0));
    let mut params = ModelParams::init(shape, &mut init_rng)?;
    if let Some(path) = &config.pretrained_vectors {
        let mut vec_rng = ChaCha12Rng::seed_from_u64(derive_seed(config.seed, "vectors", 0, 0));
        let (table, coverage) = encoder::load_pretrained_vectors(
            Path::new(path),
            &data.vocabs.word,
            config.word_dim,
            &mut vec_rng,
        )?;
        params.set_word_table(table)?;
        log::info!("pretrained vectors cover {:.1}% of the vocabulary", 100.0 * coverage);
    }

    let mut adam = Adam::new(config.lr);
    let opts = forward_opts(config, false);
    let gamma = config.effective_gamma();
    let input_dim = params.shape.input_dim();

    let log_path = out_dir.join("train_log.jsonl");
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let checkpoint_path = out_dir.join("checkpoint.bin");

    let mut best_params = params.clone();
    let mut best_eval: Option<Evaluation> = None;
    let mut best_epoch = 0usize;
    let mut last_eval: Option<Evaluation> = None;
    let mut final_train_acc = None;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut epochs_run = 0usize;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut shuffle_rng =
            ChaCha12Rng::seed_from_u64(derive_seed(config.seed, "shuffle", epoch as u64, 0));
        order.shuffle(&mut shuffle_rng);

        let mut ce_sum = 0.0;
        let mut se_sum = 0.0;
        let mut train_hits = 0usize;

        for batch in order.chunks(config.batch_size) {
            let se_weight = if gamma == 0.0 {
                0.0
            } else {
                gamma / batch.len() as f64
            };
            let mut acc: HashMap<String, Array2<f64>> = HashMap::new();
            let step = (|| -> Result<()> {
                for &idx in batch {
                    let bundle = &data.train[idx];
                    let dropout = if config.dropout > 0.0 {
                        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(
                            config.seed,
                            "dropout",
                            epoch as u64,
                            idx as u64,
                        ));
                        Some(encoder::dropout_mask(
                            &mut rng,
                            bundle.tok.len(),
                            input_dim,
                            config.dropout,
                        ))
                    } else {
                        None
                    };
                    let mut tape = Tape::new();
                    let vars = params.bind(&mut tape);
                    let loss =
                        model::example_loss(&mut tape, &vars, bundle, dropout, se_weight, &opts)?;
                    ce_sum += loss.ce;
                    se_sum += loss.se;
                    if metrics::argmax(loss.logits.row(0).as_slice().unwrap())
                        == bundle.tok.label_id as usize
                    {
                        train_hits += 1;
                    }
                    let mut grads = tape.backward(loss.total);
                    for (name, var) in vars.named_vars() {
                        if let Some(g) = grads.take(var) {
                            match acc.entry(name) {
                                std::collections::hash_map::Entry::Occupied(mut e) => {
                                    *e.get_mut() += &g;
                                }
                                std::collections::hash_map::Entry::Vacant(e) => {
                                    e.insert(g);
                                }
                            }
                        }
                    }
                }
                for (name, g) in &acc {
                    if !g.iter().all(|v| v.is_finite()) {
                        return Err(Error::Numeric(format!(
                            "non-finite gradient for {} in epoch {}",
                            name, epoch
                        )));
                    }
                }
                Ok(())
            })();
            if let Err(e) = step {
                // weights themselves are still the pre-update values
                let aborted = out_dir.join("checkpoint.aborted.bin");
                checkpoint::save(&aborted, &params)?;
                log::error!("aborting training: {} (weights saved to {})", e, aborted.display());
                return Err(e);
            }
            for (name, tensor) in params.named_tensors_mut() {
                if let Some(g) = acc.get(&name) {
                    adam.step(&name, tensor, g);
                }
            }
            // keep the pad embedding pinned at zero even if a stray
            // gradient ever reaches it
            if !config.freeze_word_embeddings {
                params.zero_word_pad_row();
            }
        }

        let n_train = data.train.len() as f64;
        let train_ce = ce_sum / n_train;
        let train_se = se_sum / n_train;
        let train_loss = train_ce + gamma * train_se;
        let train_acc = config
            .track_train_accuracy
            .then(|| train_hits as f64 / n_train);

        let (eval, _) = evaluate_model(&params, &data.test, config)?;
        if best_eval
            .as_ref()
            .map_or(true, |b| eval.accuracy > b.accuracy)
        {
            best_eval = Some(eval.clone());
            best_epoch = epoch;
            best_params = params.clone();
        }
        let entry = EpochLog {
            epoch,
            train_ce,
            train_se,
            train_loss,
            train_acc,
            test_acc: eval.accuracy,
            test_macro_f1: eval.macro_f1,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {:>3}: loss {:.4} (ce {:.4}, se {:+.4}){} | test acc {:.4} f1 {:.4} | {:.1}s",
            epoch,
            train_loss,
            train_ce,
            train_se,
            entry
                .train_acc
                .map_or(String::new(), |a| format!(" train acc {:.4}", a)),
            eval.accuracy,
            eval.macro_f1,
            entry.seconds
        );
        let line = serde_json::to_string(&entry).map_err(|e| Error::Other(e.to_string()))?;
        writeln!(log_file, "{}", line).map_err(|e| Error::io(&log_path, e))?;
        log.push(entry);
        last_eval = Some(eval);
        final_train_acc = train_acc;
        epochs_run = epoch;

        if let (Some(stop), Some(acc)) = (config.early_stop_train_acc, train_acc) {
            if acc >= stop {
                log::info!("train accuracy {:.4} reached {:.4}, stopping", acc, stop);
                break;
            }
        }
    }

    checkpoint::save(&checkpoint_path, &best_params)?;
    let report = TrainReport {
        epochs_run,
        best_epoch,
        best: best_eval.expect("at least one epoch ran"),
        last: last_eval.expect("at least one epoch ran"),
        final_train_acc,
        checkpoint: checkpoint_path.display().to_string(),
        log,
    };
    let report_json =
        serde_json::to_string_pretty(&report).map_err(|e| Error::Other(e.to_string()))?;
    fs::write(out_dir.join("report.json"), report_json)
        .map_err(|e| Error::io(&out_dir.join("report.json"), e))?;
    Ok(TrainOutcome {
        report,
        params: best_params,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub best_epoch: usize,
}

/// Trains the full model and the two single-component ablations with the
/// same seed and data, writing ablation.json next to the run directories.
pub fn ablate(config: &TrainConfig, data: &LoadedData, out_dir: &Path) -> Result<Vec<AblationRow>> {
    let variants: [(&str, fn(&mut TrainConfig)); 3] = [
        ("full", |_| {}),
        ("no_entropy_loss", |c| c.disable_se_loss = true),
        ("no_view_gate", |c| c.disable_view_gate = true),
    ];
    let mut rows = Vec::new();
    for (name, mutate) in variants {
        let mut variant_config = config.clone();
        mutate(&mut variant_config);
        let run_dir = out_dir.join(name);
        let outcome = train(&variant_config, data, &run_dir)?;
        log::info!(
            "ablation {}: acc {:.4} macro-f1 {:.4}",
            name,
            outcome.report.best.accuracy,
            outcome.report.best.macro_f1
        );
        rows.push(AblationRow {
            variant: name.to_string(),
            accuracy: outcome.report.best.accuracy,
            macro_f1: outcome.report.best.macro_f1,
            best_epoch: outcome.report.best_epoch,
        });
    }
    let json = serde_json::to_string_pretty(&rows).map_err(|e| Error::Other(e.to_string()))?;
    fs::write(out_dir.join("ablation.json"), json)
        .map_err(|e| Error::io(&out_dir.join("ablation.json"), e))?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub views: usize,
    pub gamma: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub best_epoch: usize,
}

/// Grid over view counts and entropy weights. Features depend on the view
/// count, so the cache is rebuilt per grid column into a subdirectory.
pub fn sweep(
    base: &TrainConfig,
    train_path: &Path,
    test_path: &Path,
    views_grid: &[usize],
    gamma_grid: &[f64],
    cache_dir: &Path,
    out_dir: &Path,
) -> Result<Vec<SweepRow>> {
    if views_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = Vec::new();
    for &views in views_grid {
        let mut column = base.clone();
        column.views = views;
        column.validate()?;
        let column_cache = cache_dir.join(format!("views{}", views));
        prepare(train_path, test_path, &column, &column_cache)?;
        let data = load_cache(&column_cache, &column)?;
        for &gamma in gamma_grid {
            let mut config = column.clone();
            config.gamma = gamma;
            config.validate()?;
            let run_dir = out_dir.join(format!("views{}-gamma{}", views, gamma));
            let outcome = train(&config, &data, &run_dir)?;
            log::info!(
                "sweep views={} gamma={}: acc {:.4} macro-f1 {:.4}",
                views,
                gamma,
                outcome.report.best.accuracy,
                outcome.report.best.macro_f1
            );
            rows.push(SweepRow {
                views,
                gamma,
                accuracy: outcome.report.best.accuracy,
                macro_f1: outcome.report.best.macro_f1,
                best_epoch: outcome.report.best_epoch,
            });
        }
    }
    let json = serde_json::to_string_pretty(&rows).map_err(|e| Error::Other(e.to_string()))?;
    fs::write(out_dir.join("sweep.json"), json)
        .map_err(|e| Error::io(&out_dir.join("sweep.json"), e))?;
    Ok(rows)
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn matrix_json(m: &Array2<f64>) -> serde_json::Value {
    serde_json::Value::Array(
        m.outer_iter()
            .map(|row| {
                serde_json::Value::Array(
                    row.iter()
                        .map(|&v| serde_json::json!(round6(v)))
                        .collect(),
                )
            })
            .collect(),
    )
}

/// One sentence's intermediate matrices as JSON: the P semantic matrices,
/// their masked softmaxes, the combined views, the type attention matrix,
/// per-layer gates, and the element mean of the combined views.
pub fn export_matrices(
    params: &ModelParams,
    data: &LoadedData,
    config: &TrainConfig,
    split: Split,
    index: usize,
) -> Result<serde_json::Value> {
    let bundles = match split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    let bundle = bundles
        .get(index)
        .ok_or(Error::UnknownSentence(index))?;
    let (logits, trace) = traced_forward(params, bundle, config)?;
    let n = bundle.tok.len();
    let tokens: Vec<String> = bundle
        .tok
        .word_ids
        .iter()
        .map(|&id| {
            data.vocabs
                .word
                .token(id)
                .unwrap_or("<unk>")
                .to_string()
        })
        .collect();
    let mut mean = Array2::<f64>::zeros((n, n));
    for a in &trace.a {
        mean += a;
    }
    mean /= trace.a.len() as f64;
    let pred = metrics::argmax(logits.row(0).as_slice().unwrap());
    Ok(serde_json::json!({
        "split": split.to_string(),
        "index": index,
        "tokens": tokens,
        "aspect": bundle.tok.aspect_indices(),
        "gold": corpus::Polarity::from_id(bundle.tok.label_id).map(|p| p.name()),
        "pred": corpus::Polarity::from_id(pred as u32).map(|p| p.name()),
        "logits": logits.row(0).iter().map(|&v| round6(v)).collect::<Vec<_>>(),
        "a_sem": trace.a_sem.iter().map(matrix_json).collect::<Vec<_>>(),
        "a_mask": trace.a_mask.iter().map(matrix_json).collect::<Vec<_>>(),
        "a": trace.a.iter().map(matrix_json).collect::<Vec<_>>(),
        "a_type": matrix_json(&trace.a_type),
        "gates": trace.gates.iter().map(|g| {
            g.iter().map(|&v| round6(v)).collect::<Vec<_>>()
        }).collect::<Vec<_>>(),
        "a_mean_over_views": matrix_json(&mean),
    }))
}
