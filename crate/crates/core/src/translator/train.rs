use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{load_rgb, resize, to_tensor};
use crate::nn::store::{read_tensors, write_tensors};
use crate::nn::{Adam, Network, Tensor};
use crate::pairing::{PairIter, SemiPairIndex};
use crate::translator::config::{lr_at_epoch, TranslatorConfig};
use crate::translator::loss::LossBreakdown;
use crate::translator::model::{all_param_grads, discriminator_objective, CycleGan, NET_DX, NET_DY};
use crate::translator::pool::ImagePool;
use crate::types::DatasetManifest;

/// Everything needed to continue training bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TranslatorConfig,
    pub model: CycleGan,
    /// Optimizers for G, F, D_X, D_Y.
    pub optimizers: [Adam; 4],
    pub pool_x: ImagePool,
    pub pool_y: ImagePool,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub history: Vec<HistoryRow>,
}

pub type TranslatorCheckpoint = TrainState;

/// One row of the loss history table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub gan_g: f64,
    pub gan_f: f64,
    pub cyc: f64,
    pub total: f64,
    pub identity: Option<f64>,
    pub d_x: f64,
    pub d_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub losses: LossBreakdown,
    pub d_x: f64,
    pub d_y: f64,
}

fn optimizers(model: &CycleGan, config: &TranslatorConfig) -> [Adam; 4] {
    model.nets().map(|n| Adam::new(n, config.beta1, config.beta2))
}

impl TrainState {
    pub fn new(config: TranslatorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = CycleGan::new(&config, &mut rng)?;
        Ok(TrainState {
            optimizers: optimizers(&model, &config),
            pool_x: ImagePool::new(config.pool_size),
            pool_y: ImagePool::new(config.pool_size),
            rng,
            epoch: 0,
            step: 0,
            history: Vec::new(),
            model,
            config,
        })
    }

    /// Starts a new schedule from trained weights: fresh optimizers, pools,
    /// epoch counter and generator, keeping the networks.
    pub fn warm_start(previous: TrainState, config: TranslatorConfig) -> Result<Self> {
        config.validate()?;
        let mut fresh = TrainState::new(config)?;
        if previous.model.g.arch != fresh.model.g.arch || previous.model.d_x.arch != fresh.model.d_x.arch {
            return Err(Error::Config("warm start with a different architecture".into()));
        }
        fresh.optimizers = optimizers(&previous.model, &fresh.config);
        fresh.model = previous.model;
        Ok(fresh)
    }
}

fn check_finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { component: name.into() })
    }
}

/// One optimization step on a batch of `(x, y)` pairs: generators first on
/// the three-term objective, then each discriminator on real images against
/// pooled fakes. Losses are averaged over the batch.
pub fn train_step(state: &mut TrainState, batch: &[(Tensor, Tensor)], lr: f64) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty training batch".into()));
    }
    let n = batch.len() as f64;
    let cfg = state.config.clone();
    let mut grads: Option<[Vec<Tensor>; 4]> = None;
    let (mut gan_g, mut gan_f, mut cyc, mut identity) = (0.0, 0.0, 0.0, 0.0);
    let mut fakes = Vec::with_capacity(batch.len());
    for (x, y) in batch {
        let obj = state.model.objective(x, y, &cfg)?;
        let b = obj.breakdown;
        gan_g += b.gan_g / n;
        gan_f += b.gan_f / n;
        cyc += b.cyc / n;
        identity += b.identity.unwrap_or(0.0) / n;
        let g = all_param_grads(&state.model, &obj.graph.backward(obj.root)?);
        match &mut grads {
            None => grads = Some(g.map(|ts| ts.into_iter().map(|t| t.map(|v| v / n)).collect())),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    for (ta, tb) in a.iter_mut().zip(b) {
                        ta.add_scaled(&tb, 1.0 / n);
                    }
                }
            }
        }
        fakes.push((obj.graph.value(obj.y_hat).clone(), obj.graph.value(obj.x_hat).clone()));
    }
    let mut losses = LossBreakdown::new(gan_g, gan_f, cyc, cfg.lambda_cyc)?;
    if cfg.use_identity_loss {
        losses.identity = Some(check_finite("identity", identity)?);
    }
    debug_assert_eq!(losses.total, losses.gan_g + losses.gan_f + cfg.lambda_cyc * losses.cyc);

    let [g_g, g_f, _, _] = grads.expect("non-empty batch");
    let [opt_g, opt_f, opt_dx, opt_dy] = &mut state.optimizers;
    opt_g.update(&mut state.model.g, &g_g, lr)?;
    opt_f.update(&mut state.model.f, &g_f, lr)?;

    let (mut d_x, mut d_y) = (0.0, 0.0);
    let mut acc_dx: Vec<Tensor> = state.model.d_x.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut acc_dy: Vec<Tensor> = state.model.d_y.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    for ((x, y), (y_hat, x_hat)) in batch.iter().zip(fakes) {
        let fake_y = state.pool_y.query(y_hat, &mut state.rng);
        let fake_x = state.pool_x.query(x_hat, &mut state.rng);
        for (net, id, real, fake, loss, acc) in [
            (&state.model.d_y, NET_DY, y, &fake_y, &mut d_y, &mut acc_dy),
            (&state.model.d_x, NET_DX, x, &fake_x, &mut d_x, &mut acc_dx),
        ] {
            let (g, root) = discriminator_objective(net, id, real, fake)?;
            *loss += g.value(root).item() / n;
            for (a, t) in acc.iter_mut().zip(Adam::collect(net, id, &g.backward(root)?)) {
                a.add_scaled(&t, 1.0 / n);
            }
        }
    }
    check_finite("D_X", d_x)?;
    check_finite("D_Y", d_y)?;
    opt_dx.update(&mut state.model.d_x, &acc_dx, lr)?;
    opt_dy.update(&mut state.model.d_y, &acc_dy, lr)?;
    state.step += 1;
    Ok(StepReport { losses, d_x, d_y })
}

/// Loads manifest images resized to the working resolution, caching up to
/// `capacity` of them.
pub struct ImageSource<'a> {
    manifest: &'a DatasetManifest,
    base_dir: PathBuf,
    size: u32,
    capacity: usize,
    cache: HashMap<String, Tensor>,
}

impl<'a> ImageSource<'a> {
    pub fn new(manifest: &'a DatasetManifest, base_dir: &Path, size: u32) -> Self {
        // Roughly 256 MB of cached tensors.
        let per_image = 3 * 8 * (size as usize).pow(2);
        ImageSource {
            manifest,
            base_dir: base_dir.to_path_buf(),
            size,
            capacity: (256 << 20) / per_image.max(1),
            cache: HashMap::new(),
        }
    }

    pub fn get(&mut self, id: &str) -> Result<Tensor> {
        if let Some(t) = self.cache.get(id) {
            return Ok(t.clone());
        }
        let record = self
            .manifest
            .get(id)
            .ok_or_else(|| Error::validation(id, "record not in manifest"))?;
        let img = load_rgb(&self.base_dir.join(&record.path))?;
        let t = to_tensor(&resize(&img, self.size, self.size));
        if self.cache.len() >= self.capacity {
            self.cache.clear();
        }
        self.cache.insert(id.to_string(), t.clone());
        Ok(t)
    }
}

/// Runs the remaining epochs of `state`'s schedule, saving a checkpoint to
/// `out_dir` after each epoch. On a non-finite loss the state at failure is
/// saved to `out_dir/diagnostic` and the error returned.
pub fn train(mut state: TrainState, index: &SemiPairIndex, images: &mut ImageSource, out_dir: &Path) -> Result<TrainState> {
    let cfg = state.config.clone();
    let steps = cfg.iterations_per_epoch.unwrap_or_else(|| index.wli_count());
    while state.epoch < cfg.total_epochs() {
        let lr = lr_at_epoch(&cfg, state.epoch)?;
        let rng = std::mem::replace(&mut state.rng, ChaCha8Rng::seed_from_u64(0));
        let mut it = PairIter::from_rng(index, steps * cfg.batch_size, rng)?;
        let pairs: Vec<(String, String)> = it.by_ref().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        state.rng = it.into_rng();
        for chunk in pairs.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|(w, n)| Ok((images.get(w)?, images.get(n)?)))
                .collect::<Result<Vec<_>>>()?;
            let report = match train_step(&mut state, &batch, lr) {
                Ok(r) => r,
                Err(e @ Error::NonFinite { .. }) => {
                    warn!("non-finite loss at step {}; writing diagnostic checkpoint", state.step);
                    save_checkpoint(&state, &out_dir.join("diagnostic"))?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            state.history.push(HistoryRow {
                epoch: state.epoch,
                step: state.step,
                lr,
                gan_g: report.losses.gan_g,
                gan_f: report.losses.gan_f,
                cyc: report.losses.cyc,
                total: report.losses.total,
                identity: report.losses.identity,
                d_x: report.d_x,
                d_y: report.d_y,
            });
        }
        state.epoch += 1;
        if let Some(last) = state.history.last() {
            info!("epoch {}/{}: total {:.4} cyc {:.4}", state.epoch, cfg.total_epochs(), last.total, last.cyc);
        }
        save_checkpoint(&state, out_dir)?;
    }
    Ok(state)
}

const NET_FILES: [&str; 4] = ["G.params", "F.params", "D_X.params", "D_Y.params"];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    epoch: usize,
    step: u64,
    adam_steps: [u64; 4],
    pool_x: usize,
    pool_y: usize,
    rng: ChaCha8Rng,
}

/// Writes a checkpoint directory: one parameter file per network, optimizer
/// and pool tensors, the config, counters and generator state, and the loss
/// history table.
pub fn save_checkpoint(state: &TrainState, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (net, file) in state.model.nets().into_iter().zip(NET_FILES) {
        write_tensors(&dir.join(file), &net.params)?;
    }
    let moments: Vec<Tensor> = state
        .optimizers
        .iter()
        .flat_map(|o| o.m.iter().chain(&o.v).cloned())
        .collect();
    write_tensors(&dir.join("optimizer.state"), &moments)?;
    let pools: Vec<Tensor> = state.pool_x.images().iter().chain(state.pool_y.images()).cloned().collect();
    write_tensors(&dir.join("pool.state"), &pools)?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, state.config.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let meta = StateFile {
        epoch: state.epoch,
        step: state.step,
        adam_steps: [0, 1, 2, 3].map(|i| state.optimizers[i].step),
        pool_x: state.pool_x.images().len(),
        pool_y: state.pool_y.images().len(),
        rng: state.rng.clone(),
    };
    let meta_path = dir.join("state.json");
    let text = serde_json::to_string_pretty(&meta).expect("state serializes");
    std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    let hist_path = dir.join("loss_history.csv");
    let mut w = csv::Writer::from_path(&hist_path).map_err(|e| Error::io(&hist_path, std::io::Error::other(e)))?;
    for row in &state.history {
        w.serialize(row).map_err(|e| Error::io(&hist_path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io(&hist_path, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainState> {
    let config = TranslatorConfig::load(&dir.join("config.toml"))?;
    let archs = [
        config.generator_arch(),
        config.generator_arch(),
        config.discriminator_arch(),
        config.discriminator_arch(),
    ];
    let mut nets = Vec::new();
    for (arch, file) in archs.into_iter().zip(NET_FILES) {
        nets.push(Network::from_params(arch, read_tensors(&dir.join(file))?)?);
    }
    let [g, f, d_x, d_y]: [Network; 4] = nets.try_into().expect("four networks");
    let model = CycleGan { g, f, d_x, d_y };

    let meta_path = dir.join("state.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: StateFile = serde_json::from_str(&text).map_err(|e| Error::Decode {
        path: meta_path.clone(),
        msg: e.to_string(),
    })?;

    let opt_path = dir.join("optimizer.state");
    let mut moments = read_tensors(&opt_path)?.into_iter();
    let mut optimizers = optimizers(&model, &config);
    for (opt, step) in optimizers.iter_mut().zip(meta.adam_steps) {
        opt.step = step;
        for slot in opt.m.iter_mut().chain(opt.v.iter_mut()) {
            let t = moments.next().ok_or_else(|| Error::Decode {
                path: opt_path.clone(),
                msg: "too few optimizer tensors".into(),
            })?;
            if t.shape() != slot.shape() {
                return Err(Error::Shape(format!("optimizer tensor {:?} vs {:?}", t.shape(), slot.shape())));
            }
            *slot = t;
        }
    }

    let mut pools = read_tensors(&dir.join("pool.state"))?;
    if pools.len() != meta.pool_x + meta.pool_y {
        return Err(Error::Decode {
            path: dir.join("pool.state"),
            msg: format!("expected {} pool images, found {}", meta.pool_x + meta.pool_y, pools.len()),
        });
    }
    let pool_y = pools.split_off(meta.pool_x);

    let hist_path = dir.join("loss_history.csv");
    let mut history = Vec::new();
    let mut reader = csv::Reader::from_path(&hist_path).map_err(|e| Error::io(&hist_path, std::io::Error::other(e)))?;
    for (i, row) in reader.deserialize().enumerate() {
        history.push(row.map_err(|e| Error::Format {
            path: hist_path.clone(),
            line: i + 2,
            msg: e.to_string(),
        })?);
    }

    Ok(TrainState {
        pool_x: ImagePool::from_images(config.pool_size, pools),
        pool_y: ImagePool::from_images(config.pool_size, pool_y),
        config,
        model,
        optimizers,
        rng: meta.rng,
        epoch: meta.epoch,
        step: meta.step,
        history,
    })
}
