//! Subcommand arguments and implementations. Each command writes its
//! summary as `key = value` lines, starting with the resolved configuration
//! as `config.<key> = <value>`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dlac_core::graph::{forward, LayerWeights, NetworkSpec};
use dlac_core::quantize::ternarize;
use dlac_core::sim::{simulate_network, simulate_synthetic, sweep, SimConfig, SyntheticLayer, SYNTHETIC_DENSITIES};
use dlac_core::train::{data, finetune_from, nets, train, Dataset, TrainConfig, TrainLog, TrainedModel};
use dlac_core::Tensor;

use crate::config::{
    policy_fields, read_sim_settings, read_train_settings, sim_config_lines, threshold_policy, train_config_lines,
    PolicyArg, SimSettings, TrainSettings,
};
use crate::error::{Error, Result};
use crate::{io, report, schema};

/// Summary writer; stdout failures are reported against `<stdout>`.
pub struct Out<'a> {
    w: &'a mut dyn Write,
    pub verbose: u8,
}

impl<'a> Out<'a> {
    pub fn new(w: &'a mut dyn Write, verbose: u8) -> Self {
        Out { w, verbose }
    }

    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) -> Result<()> {
        writeln!(self.w, "{key} = {value}").map_err(|e| Error::io(Path::new("<stdout>"), e))
    }

    fn config(&mut self, lines: &[(String, String)]) -> Result<()> {
        for (k, v) in lines {
            self.kv(&format!("config.{k}"), v)?;
        }
        Ok(())
    }

    fn wrote(&mut self, path: &Path) -> Result<()> {
        self.kv("wrote", path.display())
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn write_csv(out: &mut Out, path: &Path, bytes: &[u8]) -> Result<()> {
    io::write_atomic(path, bytes)?;
    out.wrote(path)
}

fn shape_str(s: &[usize]) -> String {
    let parts: Vec<String> = s.iter().map(|d| d.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

/// Prepends a batch dimension of 1 when `x` is a single sample.
fn batched(net: &NetworkSpec, x: Tensor) -> Result<Tensor> {
    if x.shape() == &net.input_shape[..] {
        let mut shape = vec![1];
        shape.extend_from_slice(x.shape());
        Ok(x.reshape(&shape)?)
    } else {
        Ok(x)
    }
}

#[derive(Debug, Clone, Args)]
pub struct QuantizeArgs {
    /// Weight tensor (TNSR)
    #[arg(long)]
    pub input: PathBuf,
    /// Packed output (TERN)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub threshold_policy: Option<PolicyArg>,
    /// Factor `t` for mean_scaled, `w_th` for fixed [default: 0.7 with mean_scaled]
    #[arg(long)]
    pub threshold: Option<f32>,
}

pub fn cmd_quantize(args: &QuantizeArgs, out: &mut Out) -> Result<()> {
    let policy = threshold_policy(args.threshold_policy, args.threshold)?;
    let (name, t) = policy_fields(policy);
    out.kv("config.threshold_policy", name)?;
    out.kv("config.threshold", t)?;
    let w = io::load_tensor(&args.input)?;
    let (q, w_th) = ternarize(&w, policy).map_err(|source| Error::CoreAt {
        path: args.input.clone(),
        source,
    })?;
    io::save_ternary(&args.out, &q)?;
    let n = q.len();
    let zero_fraction = if n == 0 {
        0.0
    } else {
        (n - q.count_nonzero()) as f64 / n as f64
    };
    let fp32_bytes = 4 * n;
    let packed = q.codes().len();
    out.kv("shape", shape_str(q.shape()))?;
    out.kv("w_th", w_th)?;
    out.kv("zero_fraction", zero_fraction)?;
    out.kv("fp32_bytes", fp32_bytes)?;
    out.kv("packed_bytes", packed)?;
    if packed > 0 {
        out.kv("reduction", format!("{:.2}", fp32_bytes as f64 / packed as f64))?;
    }
    out.wrote(&args.out)
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    /// Network schema with weights
    #[arg(long)]
    pub net: PathBuf,
    /// Input batch `[B, ...input_shape]` or one sample (TNSR)
    #[arg(long)]
    pub input: PathBuf,
    /// Logits output (TNSR)
    #[arg(long)]
    pub out: PathBuf,
    /// Operation trace CSV
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

pub fn cmd_infer(args: &InferArgs, out: &mut Out) -> Result<()> {
    let net = schema::load_complete_network(&args.net)?;
    let x = batched(&net.spec, io::load_tensor(&args.input)?)?;
    out.kv("config.net", args.net.display())?;
    out.kv("config.input", args.input.display())?;
    let pass = forward(&net.spec, &net.weights, &x)?;
    io::save_tensor(&args.out, &pass.logits)?;
    let mm = pass.trace.mm_records().count();
    out.kv("batch", pass.batch())?;
    out.kv("logits_shape", shape_str(pass.logits.shape()))?;
    out.kv("trace_records", pass.trace.records.len())?;
    out.kv("mm_records", mm)?;
    out.kv("pw_records", pass.trace.records.len() - mm)?;
    out.kv("dense_flops", pass.trace.dense_flops())?;
    out.wrote(&args.out)?;
    if let Some(t) = &args.trace {
        write_csv(out, t, &report::trace_csv(&net.spec, &pass.trace))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    /// 200 points in two Gaussian blobs
    Blobs,
    /// 200 points on two interleaved spirals
    Spirals,
    /// 400 single-channel 8x8 images in four classes
    Conv8x8,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Blobs => "blobs",
            Task::Spirals => "spirals",
            Task::Conv8x8 => "conv8x8",
        }
    }

    pub fn dataset(self, seed: u64) -> Dataset {
        match self {
            Task::Blobs => data::blob_task(seed),
            Task::Spirals => data::spirals(200, 0.2, seed).expect("valid spiral parameters"),
            Task::Conv8x8 => data::conv8x8_task(seed),
        }
    }

    pub fn net(self) -> NetworkSpec {
        match self {
            Task::Blobs => nets::blob_mlp(),
            Task::Spirals => NetworkSpec {
                name: "spiral-mlp".into(),
                ..nets::mlp(2, 32, 2)
            },
            Task::Conv8x8 => nets::conv8x8_net(4),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Network schema; weights in it are ignored [default: the task's reference net]
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Training config file (TOML, `schema = 1`)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in dataset
    #[arg(long, value_enum, conflicts_with = "data")]
    pub task: Option<Task>,
    /// Dataset prefix: reads `<prefix>.x.tnsr` and `<prefix>.y.tnsr`
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Seed of the built-in dataset
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Checkpoint schema; weights, masters and quantized views go beside it
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training log CSV
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Also train from scratch (no full-precision phase); its log goes to
    /// `<log>.scratch.csv`
    #[arg(long, conflicts_with = "pretrained")]
    pub compare_scratch: bool,
    /// Full-precision checkpoint to fine-tune from
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[command(flatten)]
    pub settings: TrainSettings,
}

/// Reads `<prefix>.x.tnsr` and integer labels `<prefix>.y.tnsr`.
pub fn load_dataset(prefix: &Path, classes: usize) -> Result<Dataset> {
    let x = io::load_tensor(&with_suffix(prefix, ".x.tnsr"))?;
    let yp = with_suffix(prefix, ".y.tnsr");
    let y = io::load_tensor(&yp)?;
    if y.rank() != 1 {
        return Err(Error::format(&yp, "labels must be rank 1"));
    }
    let labels = y
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < classes {
                Ok(v as usize)
            } else {
                Err(Error::format(
                    &yp,
                    format!("label {v} is not a class index below {classes}"),
                ))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(x, labels, classes).map_err(|source| Error::CoreAt { path: yp, source })
}

pub fn save_dataset(prefix: &Path, d: &Dataset) -> Result<(PathBuf, PathBuf)> {
    let xp = with_suffix(prefix, ".x.tnsr");
    let yp = with_suffix(prefix, ".y.tnsr");
    io::save_tensor(&xp, &d.x)?;
    let y = Tensor::new(&[d.len()], d.labels.iter().map(|&l| l as f32).collect())?;
    io::save_tensor(&yp, &y)?;
    Ok((xp, yp))
}

fn resolve_train(config: Option<&Path>, flags: &TrainSettings) -> Result<TrainConfig> {
    let file = match config {
        Some(p) => read_train_settings(p)?,
        None => TrainSettings::default(),
    };
    file.overlay(flags.clone()).resolve()
}

/// Writes the checkpoint schema with the effective weights, plus every
/// master as `<stem>.l<i>.master.tnsr`.
pub fn save_checkpoint(path: &Path, model: &TrainedModel) -> Result<Vec<PathBuf>> {
    let mut written = schema::save_network(path, &model.net, &model.weights())?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    for (i, m) in model.shadow.masters.iter().enumerate() {
        if let Some(m) = m {
            let p = dir.join(format!("{stem}.l{i}.master.tnsr"));
            io::save_tensor(&p, m)?;
            written.push(p);
        }
    }
    Ok(written)
}

fn epoch_summary(out: &mut Out, log: &TrainLog, prefix: &str) -> Result<()> {
    if out.verbose > 0 {
        for e in &log.epochs {
            out.kv(
                &format!("{prefix}epoch.{}", e.epoch),
                format!(
                    "train_error={} lr={} loss_task={} fwd_density={} bwd_density={}",
                    e.train_error,
                    e.lr,
                    e.loss_task,
                    e.forward_density().density,
                    e.backward_density().density
                ),
            )?;
        }
    }
    if let Some(last) = log.epochs.last() {
        out.kv(&format!("{prefix}final_train_error"), last.train_error)?;
        out.kv(&format!("{prefix}final_lr"), last.lr)?;
        out.kv(&format!("{prefix}fwd_density"), last.forward_density().density)?;
        out.kv(&format!("{prefix}bwd_density"), last.backward_density().density)?;
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs, out: &mut Out) -> Result<()> {
    let cfg = resolve_train(args.config.as_deref(), &args.settings)?;
    let pretrained = match &args.pretrained {
        Some(p) => Some((p, schema::load_complete_network(p)?)),
        None => None,
    };
    if args.data.is_some() && args.net.is_none() && pretrained.is_none() {
        return Err(Error::Usage("--data needs --net or --pretrained".into()));
    }
    let net = match (&args.net, &pretrained, args.task) {
        (Some(p), _, _) => schema::read_schema(p)?.spec,
        (None, Some((_, pre)), _) => pre.spec.clone(),
        (None, None, t) => t.unwrap_or(Task::Blobs).net(),
    };
    let classes = *net.output_shape()?.last().expect("non-empty shape");
    let (dataset, source) = match &args.data {
        Some(prefix) => (load_dataset(prefix, classes)?, prefix.display().to_string()),
        None => {
            let t = args.task.unwrap_or(Task::Blobs);
            (t.dataset(args.data_seed), t.name().to_string())
        }
    };
    out.config(&train_config_lines(&cfg))?;
    out.kv("config.net", &net.name)?;
    out.kv("config.data", source)?;
    out.kv("config.data_seed", args.data_seed)?;
    out.kv("samples", dataset.len())?;

    let (model, log) = match &pretrained {
        Some((p, pre)) => {
            let masters = pre
                .weights
                .iter()
                .enumerate()
                .map(|(i, w)| match w {
                    None => Ok(None),
                    Some(LayerWeights::Full(t)) => Ok(Some(t.clone())),
                    Some(LayerWeights::Ternary(_)) => Err(Error::schema(
                        p,
                        format!("layers[{i}]"),
                        "fine-tuning needs full-precision weights",
                    )),
                })
                .collect::<Result<Vec<_>>>()?;
            out.kv("config.pretrained", p.display())?;
            finetune_from(&masters, &net, &cfg, &dataset)?
        }
        None => train(&net, &cfg, &dataset)?,
    };
    out.kv("quantized", model.quantized)?;
    epoch_summary(out, &log, "")?;
    if let Some(p) = &args.log {
        write_csv(out, p, &report::train_log_csv(&log))?;
    }
    if let Some(p) = &args.out {
        for w in save_checkpoint(p, &model)? {
            out.wrote(&w)?;
        }
        out.wrote(p)?;
    }
    if args.compare_scratch {
        let scratch_cfg = TrainConfig {
            epochs_full_precision: 0,
            ..cfg
        };
        let (_, slog) = train(&net, &scratch_cfg, &dataset)?;
        epoch_summary(out, &slog, "scratch.")?;
        if let Some(p) = &args.log {
            let sp = p.with_extension("scratch.csv");
            write_csv(out, &sp, &report::train_log_csv(&slog))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Network schema with weights
    #[arg(long)]
    pub net: PathBuf,
    /// Input batch (TNSR)
    #[arg(long)]
    pub input: PathBuf,
    /// Simulator config file (TOML, `schema = 1`)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report CSV, one row per op plus a total row
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub settings: SimSettings,
}

fn resolve_sim(config: Option<&Path>, flags: &SimSettings) -> Result<SimConfig> {
    let file = match config {
        Some(p) => read_sim_settings(p)?,
        None => SimSettings::default(),
    };
    file.overlay(flags.clone()).resolve()
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut Out) -> Result<()> {
    let cfg = resolve_sim(args.config.as_deref(), &args.settings)?;
    out.config(&sim_config_lines(&cfg))?;
    let net = schema::load_complete_network(&args.net)?;
    let x = batched(&net.spec, io::load_tensor(&args.input)?)?;
    let rep = simulate_network(&cfg, &net.spec, &net.weights, &x)?;
    if out.verbose > 0 {
        for (layer, r) in rep.per_layer() {
            out.kv(
                &format!("layer.{layer}"),
                format!(
                    "{} density={} cycles={} speedup={}",
                    net.spec.layers[layer].kind(),
                    r.density(),
                    r.cycles,
                    r.speedup()
                ),
            )?;
        }
    }
    let t = &rep.total;
    out.kv("ops", rep.ops.len())?;
    out.kv("cycles", t.cycles)?;
    out.kv("dense_baseline_cycles", t.dense_baseline_cycles)?;
    out.kv("speedup", t.speedup())?;
    out.kv("mm_density", t.density())?;
    out.kv("eff_flops_per_cycle", t.effective_flops_per_cycle())?;
    out.kv("freq_mhz", cfg.freq_hz / 1e6)?;
    out.kv("throughput_gflops", t.throughput_flops_per_sec() / 1e9)?;
    out.kv("note", "memory traffic is not timed")?;
    if let Some(p) = &args.out {
        write_csv(out, p, &report::sim_report_csv(&rep))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Base simulator config file (TOML, `schema = 1`)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output buffers per PE to sweep [default: the base value]
    #[arg(long, value_delimiter = ',')]
    pub buffers_grid: Vec<usize>,
    /// FPUs per PE to sweep [default: the base value]
    #[arg(long, value_delimiter = ',')]
    pub fpus_grid: Vec<usize>,
    /// Pair densities [default: 1,0.55,0.4,0.3,0.25,0.2]
    #[arg(long, value_delimiter = ',')]
    pub densities: Vec<f64>,
    #[arg(long, default_value_t = 256)]
    pub m: usize,
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long, default_value_t = 256)]
    pub k: usize,
    /// Operand mask seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Long-format CSV, one row per (config, density)
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub settings: SimSettings,
}

fn or_base<T: Copy>(grid: &[T], base: T) -> Vec<T> {
    if grid.is_empty() {
        vec![base]
    } else {
        grid.to_vec()
    }
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut Out) -> Result<()> {
    let base = resolve_sim(args.config.as_deref(), &args.settings)?;
    let densities = if args.densities.is_empty() {
        SYNTHETIC_DENSITIES.to_vec()
    } else {
        args.densities.clone()
    };
    if let Some(d) = densities.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(Error::Usage(format!("density {d} outside [0, 1]")));
    }
    let fpus = or_base(&args.fpus_grid, base.fpus_per_pe);
    let buffers = or_base(&args.buffers_grid, base.output_buffers_per_pe);
    let mut configs = Vec::new();
    for &f in &fpus {
        for &b in &buffers {
            let c = SimConfig {
                fpus_per_pe: f,
                output_buffers_per_pe: b,
                ..base
            };
            c.validate().map_err(|e| Error::Usage(e.to_string()))?;
            configs.push(c);
        }
    }
    out.config(&sim_config_lines(&base))?;
    let list = |v: &[String]| v.join(",");
    let strs = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    out.kv("config.buffers_grid", list(&strs(&buffers)))?;
    out.kv("config.fpus_grid", list(&strs(&fpus)))?;
    out.kv(
        "config.densities",
        list(&densities.iter().map(|d| d.to_string()).collect::<Vec<_>>()),
    )?;
    out.kv("config.mnk", format!("{}x{}x{}", args.m, args.n, args.k))?;
    out.kv("config.seed", args.seed)?;
    let points = sweep(&configs, &densities, args.m, args.n, args.k, args.seed)?;
    out.kv("points", points.len())?;
    write_csv(out, &args.out, &report::sweep_csv(&configs, &points))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Blobs,
    Spirals,
    Conv8x8,
    RandomTensor,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub kind: GenKind,
    /// Output prefix (`<prefix>.x.tnsr`, `<prefix>.y.tnsr`), or the TNSR path
    /// for random-tensor
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample count [default: 200, 400 for conv8x8]
    #[arg(long)]
    pub n: Option<usize>,
    /// blobs, conv8x8 [default: 2 for blobs, 4 for conv8x8]
    #[arg(long)]
    pub classes: Option<usize>,
    /// blobs [default: 3]
    #[arg(long)]
    pub radius: Option<f32>,
    /// blobs [default: 1]
    #[arg(long)]
    pub std: Option<f32>,
    /// spirals, conv8x8 [default: 0.2 for spirals, 0.3 for conv8x8]
    #[arg(long)]
    pub noise: Option<f32>,
    /// random-tensor, e.g. `1000,100`
    #[arg(long, value_delimiter = ',')]
    pub shape: Vec<usize>,
    /// random-tensor: probability that an element is nonzero [default: 1]
    #[arg(long)]
    pub density: Option<f64>,
}

impl GenArgs {
    fn reject_unused(&self) -> Result<()> {
        let given: [(&str, bool); 7] = [
            ("n", self.n.is_some()),
            ("classes", self.classes.is_some()),
            ("radius", self.radius.is_some()),
            ("std", self.std.is_some()),
            ("noise", self.noise.is_some()),
            ("shape", !self.shape.is_empty()),
            ("density", self.density.is_some()),
        ];
        let allowed: &[&str] = match self.kind {
            GenKind::Blobs => &["n", "classes", "radius", "std"],
            GenKind::Spirals => &["n", "noise"],
            GenKind::Conv8x8 => &["n", "classes", "noise"],
            GenKind::RandomTensor => &["shape", "density"],
        };
        match given.iter().find(|(k, set)| *set && !allowed.contains(k)) {
            Some((k, _)) => Err(Error::Usage(format!(
                "--{k} does not apply to {}",
                self.kind.to_possible_value().expect("named").get_name()
            ))),
            None => Ok(()),
        }
    }
}

pub fn cmd_gen(args: &GenArgs, out: &mut Out) -> Result<()> {
    args.reject_unused()?;
    let kind = args.kind.to_possible_value().expect("named");
    out.kv("config.kind", kind.get_name())?;
    out.kv("config.seed", args.seed)?;
    let d = match args.kind {
        GenKind::RandomTensor => {
            if args.shape.is_empty() {
                return Err(Error::Usage("random-tensor needs --shape".into()));
            }
            let density = args.density.unwrap_or(1.0);
            out.kv("config.shape", shape_str(&args.shape))?;
            out.kv("config.density", density)?;
            let t = data::random_tensor(&args.shape, density, args.seed).map_err(|e| Error::Usage(e.to_string()))?;
            let stats = dlac_core::tensor::density(&t, 0.0);
            io::save_tensor(&args.out, &t)?;
            out.kv("elements", stats.total)?;
            out.kv("nonzero", stats.nonzero)?;
            out.kv("density", stats.density)?;
            return out.wrote(&args.out);
        }
        GenKind::Blobs => {
            let (n, c) = (args.n.unwrap_or(200), args.classes.unwrap_or(2));
            let (r, s) = (args.radius.unwrap_or(3.0), args.std.unwrap_or(1.0));
            out.config(&[
                ("n".into(), n.to_string()),
                ("classes".into(), c.to_string()),
                ("radius".into(), r.to_string()),
                ("std".into(), s.to_string()),
            ])?;
            data::blobs(n, c, r, s, args.seed)
        }
        GenKind::Spirals => {
            let (n, noise) = (args.n.unwrap_or(200), args.noise.unwrap_or(0.2));
            out.config(&[("n".into(), n.to_string()), ("noise".into(), noise.to_string())])?;
            data::spirals(n, noise, args.seed)
        }
        GenKind::Conv8x8 => {
            let (n, c, noise) = (
                args.n.unwrap_or(400),
                args.classes.unwrap_or(4),
                args.noise.unwrap_or(0.3),
            );
            out.config(&[
                ("n".into(), n.to_string()),
                ("classes".into(), c.to_string()),
                ("noise".into(), noise.to_string()),
            ])?;
            data::conv8x8(n, c, noise, args.seed)
        }
    }
    .map_err(|e| Error::Usage(e.to_string()))?;
    let counts: Vec<String> = d.class_counts().iter().map(|c| c.to_string()).collect();
    out.kv("samples", d.len())?;
    out.kv("sample_shape", shape_str(d.sample_shape()))?;
    out.kv("class_counts", counts.join(","))?;
    let (xp, yp) = save_dataset(&args.out, &d)?;
    out.wrote(&xp)?;
    out.wrote(&yp)
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Directory for the CSV files
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Epochs of the conv8x8 sparsity run
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Seeds of the pre-initialization comparison on the blob task
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[command(flatten)]
    pub settings: SimSettings,
}

/// Plot-ready data: per-layer speedup of the synthetic network, a
/// buffers-by-density sweep, per-epoch sparsity on conv8x8, and pre-init
/// against scratch on the blob task.
pub fn cmd_report(args: &ReportArgs, out: &mut Out) -> Result<()> {
    let cfg = args.settings.clone().resolve()?;
    out.config(&sim_config_lines(&cfg))?;
    out.kv("config.seed", args.seed)?;
    out.kv("config.epochs", args.epochs)?;
    out.kv("config.seeds", args.seeds)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let dir = &args.out_dir;

    let layers: Vec<SyntheticLayer> = SYNTHETIC_DENSITIES
        .iter()
        .map(|&density| SyntheticLayer {
            m: 256,
            n: 256,
            k: 256,
            density,
        })
        .collect();
    let reps = simulate_synthetic(&cfg, &layers, args.seed)?;
    write_csv(
        out,
        &dir.join("speedup_by_layer.csv"),
        &report::synthetic_csv(&SYNTHETIC_DENSITIES, &reps),
    )?;

    let configs: Vec<SimConfig> = [1, 2, 4, 8, 16]
        .iter()
        .map(|&b| SimConfig {
            output_buffers_per_pe: b,
            ..cfg
        })
        .collect();
    let points = sweep(&configs, &SYNTHETIC_DENSITIES, 256, 256, 256, args.seed)?;
    write_csv(
        out,
        &dir.join("sweep_buffers.csv"),
        &report::sweep_csv(&configs, &points),
    )?;

    let tc = TrainConfig {
        epochs_total: args.epochs,
        epochs_full_precision: TrainConfig::default().epochs_full_precision.min(args.epochs),
        seed: args.seed,
        ..TrainConfig::default()
    };
    let (_, log) = train(&Task::Conv8x8.net(), &tc, &Task::Conv8x8.dataset(args.seed))?;
    write_csv(out, &dir.join("sparsity_by_epoch.csv"), &report::train_log_csv(&log))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut rows = vec![vec!["seed".to_string(), "preinit_error".into(), "scratch_error".into()]];
    for seed in 0..args.seeds {
        let d = Task::Blobs.dataset(seed);
        let pre = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let scratch = TrainConfig {
            epochs_full_precision: 0,
            ..pre.clone()
        };
        let e = |c: &TrainConfig| -> Result<f32> {
            Ok(train(&Task::Blobs.net(), c, &d)?.1.final_error().unwrap_or(f32::NAN))
        };
        rows.push(vec![seed.to_string(), e(&pre)?.to_string(), e(&scratch)?.to_string()]);
    }
    for r in rows {
        w.write_record(&r).expect("write to memory");
    }
    write_csv(
        out,
        &dir.join("preinit_vs_scratch.csv"),
        &w.into_inner().expect("flush to memory"),
    )
}
