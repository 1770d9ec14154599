//! Configured workflows behind the `trj` binary: train transport maps, run
//! trans-dimensional chains, and summarize them. Every command writes its
//! outputs plus a `manifest.toml` into the output directory; passing that
//! manifest back as `--config` repeats the run.
//!
//! All random streams derive from the top-level `seed`; `trainer.seed` is
//! only used by direct library calls.

mod config;
mod manifest;

pub use config::{
    AblationConfig, DiagnosticsConfig, FlowConfig, KernelKind, Preset, RunConfig, SamplerConfig, TargetConfig, TargetName,
    TransportSource,
};
pub use manifest::{file_sha256, sha256_hex, Manifest, OutputDir, MANIFEST_FILE};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::diagnostics::{
    bbe_estimate, build_eval_set, exact_map_states, flow_independence_states, interquartile_range, quantile,
    running_probs_csv, thinned_chain_states, violin_csv, BbeOptions, EvalSource,
};
use crate::error::{Error, Result};
use crate::flows::{FlowSpec, FlowStack, Transport};
use crate::rjmcmc::{
    run_chains, ChainRecord, CtpKernel, IndexProposal, JumpKernel, Sampler, SaturatedKernel, TransModelState, TrjKernel,
    WithinModel,
};
use crate::rng::derive_seed;
use crate::targets::{data, factor, sas, varsel, TargetFamily};
use crate::vi::{
    conditional_train, elbo_model_weights, estimate_evidence, estimate_evidence_conditional, rejection_free_from_log,
    sgvi_train, Evidence, TrainOutcome, TrainerConfig,
};

// Tags for `derive_seed(config.seed, tag)`.
const FLOW_INIT_TAG: u64 = 100;
const TRAIN_TAG: u64 = 200;
const CHAIN_TAG: u64 = 300;
const EVIDENCE_TAG: u64 = 400;
const EVAL_STATES_TAG: u64 = 10_000;
const EVAL_PROPOSAL_TAG: u64 = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Sample,
    Diagnose,
    Evidence,
    Ablate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Diagnose => "diagnose",
            Command::Evidence => "evidence",
            Command::Ablate => "ablate",
        }
    }
}

/// Run a command and return the manifest it wrote.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    match command {
        Command::Train => cmd_train(cfg),
        Command::Sample => cmd_sample(cfg),
        Command::Diagnose => cmd_diagnose(cfg),
        Command::Evidence => cmd_evidence(cfg),
        Command::Ablate => cmd_ablate(cfg),
    }
}

/// A target family with its default index proposal and the data file it read.
pub struct Setup {
    pub family: TargetFamily,
    pub q: IndexProposal,
    pub data_file: Option<PathBuf>,
}

pub fn build_target(cfg: &RunConfig) -> Result<Setup> {
    let t = &cfg.target;
    let file = if t.synthetic_data { None } else { t.data.clone() };
    let (family, default_q) = match t.name {
        TargetName::Sas => (sas::family(), IndexProposal::fixed(&sas::INDEX_PROPOSAL)?),
        TargetName::FactorAnalysis => {
            let y = match &file {
                Some(path) => data::fa_load_data(path)?,
                None if t.synthetic_data => factor::synthetic_data(
                    t.data_seed.unwrap_or(factor::SYNTHETIC_SEED),
                    t.observations.unwrap_or(factor::DEFAULT_N),
                ),
                None => {
                    return Err(Error::Data(
                        "factor analysis needs target.data or synthetic data (--synthetic-data)".into(),
                    ))
                }
            };
            let fam = factor::family(&y, &t.factor_analysis)?;
            let q = IndexProposal::uniform(fam.len());
            (fam, q)
        }
        TargetName::VariableSelection => {
            let d = match &file {
                Some(path) => varsel::VsData::from_columns(&data::load_matrix(path)?)?,
                None if t.synthetic_data => varsel::simulate(
                    t.data_seed.unwrap_or(varsel::SYNTHETIC_SEED),
                    t.observations.unwrap_or(varsel::DEFAULT_N),
                ),
                None => {
                    return Err(Error::Data(
                        "variable selection needs target.data or synthetic data (--synthetic-data)".into(),
                    ))
                }
            };
            (varsel::family(&d, &t.variable_selection)?, IndexProposal::uniform(4))
        }
    };
    let q = match &cfg.sampler.index_proposal {
        Some(rows) => {
            let q = IndexProposal::from_rows(rows.clone())?;
            if q.len() != family.len() {
                return Err(Error::Config(format!("sampler.index_proposal has {} rows for {} models", q.len(), family.len())));
            }
            q
        }
        None => default_q,
    };
    Ok(Setup {
        family,
        q,
        data_file: file,
    })
}

fn base_spec(cfg: &FlowConfig, dim: usize, depth: usize) -> FlowSpec {
    FlowSpec {
        hidden: cfg.hidden.clone(),
        alternate: cfg.alternate,
        split: cfg.split,
        reference: cfg.reference,
        ..FlowSpec::new(dim, depth)
    }
}

/// Shape of the flow for model `k`.
pub fn model_flow_spec(cfg: &FlowConfig, family: &TargetFamily, k: usize) -> Result<FlowSpec> {
    let spec = base_spec(cfg, family.model(k)?.dim, cfg.depth_for(k)?);
    spec.validate()?;
    Ok(spec)
}

/// Shape of the conditional flow over the saturated space.
pub fn conditional_flow_spec(cfg: &FlowConfig, family: &TargetFamily) -> Result<FlowSpec> {
    let spec = FlowSpec {
        contexts: family.len(),
        conditional_base: true,
        ..base_spec(cfg, family.d_max, cfg.depth_for(0)?)
    };
    spec.validate()?;
    Ok(spec)
}

pub fn flow_file(k: Option<usize>) -> String {
    match k {
        Some(k) => format!("flow_model{k}.json"),
        None => "flow_conditional.json".into(),
    }
}

pub struct TrainedFlow {
    /// Model index, `None` for the conditional flow.
    pub model: Option<usize>,
    pub stack: FlowStack,
    pub outcome: TrainOutcome,
}

fn trainer_for(cfg: &RunConfig, slot: u64) -> TrainerConfig {
    TrainerConfig {
        seed: derive_seed(cfg.seed, TRAIN_TAG + slot),
        ..cfg.trainer.clone()
    }
}

/// Train every flow the configuration asks for: one per model, or a single
/// conditional flow.
pub fn train_flows(cfg: &RunConfig, family: &TargetFamily) -> Result<Vec<TrainedFlow>> {
    if cfg.flow.conditional {
        let spec = conditional_flow_spec(&cfg.flow, family)?;
        let mut stack = FlowStack::new(spec, derive_seed(cfg.seed, FLOW_INIT_TAG))?;
        let outcome = conditional_train(&mut stack, family, &trainer_for(cfg, 0))?;
        return Ok(vec![TrainedFlow {
            model: None,
            stack,
            outcome,
        }]);
    }
    (0..family.len())
        .into_par_iter()
        .map(|k| {
            let spec = model_flow_spec(&cfg.flow, family, k)?;
            let mut stack = FlowStack::new(spec, derive_seed(cfg.seed, FLOW_INIT_TAG + k as u64))?;
            let outcome = sgvi_train(&mut stack, family.models[k].density.as_ref(), &trainer_for(cfg, k as u64))?;
            Ok(TrainedFlow {
                model: Some(k),
                stack,
                outcome,
            })
        })
        .collect()
}

/// Transport maps a kernel or estimator runs on.
#[derive(Clone)]
pub enum Transports {
    PerModel(Vec<Arc<dyn Transport>>),
    Conditional(Arc<dyn Transport>),
    /// Saturated sampling needs no maps.
    None,
}

impl Transports {
    pub fn from_flows(flows: Vec<TrainedFlow>) -> Self {
        if let [TrainedFlow { model: None, .. }] = flows.as_slice() {
            let f = flows.into_iter().next().expect("one flow");
            return Transports::Conditional(Arc::new(f.stack));
        }
        Transports::PerModel(flows.into_iter().map(|f| Arc::new(f.stack) as Arc<dyn Transport>).collect())
    }

    fn as_slice(&self) -> Vec<Arc<dyn Transport>> {
        match self {
            Transports::PerModel(m) => m.clone(),
            Transports::Conditional(m) => vec![m.clone()],
            Transports::None => Vec::new(),
        }
    }
}

fn checkpoint_dir(cfg: &RunConfig) -> PathBuf {
    cfg.sampler.checkpoints.clone().unwrap_or_else(|| cfg.out.clone())
}

/// Maps from analytic formulas or from `train` checkpoints in `dir`; checkpoint
/// paths are returned so they can be hashed into a manifest.
pub fn load_transports(cfg: &RunConfig, family: &TargetFamily, dir: &Path) -> Result<(Transports, Vec<PathBuf>)> {
    if cfg.sampler.transport == TransportSource::Exact {
        let maps = (0..family.len())
            .map(|k| Ok(Arc::new(sas::exact_map(k)?) as Arc<dyn Transport>))
            .collect::<Result<Vec<_>>>()?;
        return Ok((Transports::PerModel(maps), Vec::new()));
    }
    if cfg.flow.conditional {
        let path = dir.join(flow_file(None));
        let stack = FlowStack::load_expecting(&path, &conditional_flow_spec(&cfg.flow, family)?)?;
        return Ok((Transports::Conditional(Arc::new(stack)), vec![path]));
    }
    let mut paths = Vec::new();
    let maps = (0..family.len())
        .map(|k| {
            let path = dir.join(flow_file(Some(k)));
            let stack = FlowStack::load_expecting(&path, &model_flow_spec(&cfg.flow, family, k)?)?;
            paths.push(path);
            Ok(Arc::new(stack) as Arc<dyn Transport>)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Transports::PerModel(maps), paths))
}

/// The configured jump kernel and within-model update.
pub fn build_kernel(cfg: &RunConfig, setup: &Setup, maps: &Transports) -> Result<(Box<dyn JumpKernel>, WithinModel)> {
    let (family, q) = (setup.family.clone(), setup.q.clone());
    let s = &cfg.sampler;
    let kernel: Box<dyn JumpKernel> = match (s.kernel, maps) {
        (KernelKind::Trj, Transports::PerModel(m)) => Box::new(TrjKernel::new(family, m.clone(), q)?),
        (KernelKind::Ctp, Transports::Conditional(m)) => Box::new(CtpKernel::new(family, m.clone(), q)?),
        (KernelKind::Saturated, _) => Box::new(SaturatedKernel::new(family, q, s.aux_var)?),
        (k, _) => return Err(Error::Config(format!("kernel {k:?} does not match the available transport maps"))),
    };
    // per-model maps also drive the within-model updates; otherwise they run
    // in parameter space
    let within = match maps {
        Transports::PerModel(m) if s.kernel == KernelKind::Trj => {
            WithinModel::new(&setup.family, m.clone(), s.within, s.within_steps)?
        }
        _ => WithinModel::identity(&setup.family, s.within, s.within_steps)?,
    };
    Ok((kernel, within))
}

fn cmd_train(cfg: &RunConfig) -> Result<Manifest> {
    // later commands run from this manifest read the flows written here
    let mut pinned = cfg.clone();
    pinned.sampler.checkpoints = Some(cfg.out.clone());
    let cfg = &pinned;
    let setup = build_target(cfg)?;
    let mut manifest = Manifest::new("train", cfg)?;
    if let Some(f) = &setup.data_file {
        manifest.input(f)?;
    }
    let mut out = OutputDir::create(&cfg.out)?;
    let flows = train_flows(cfg, &setup.family)?;
    let mut table = toml::Table::new();
    for f in &flows {
        let slot = f.model.unwrap_or(0) as u64;
        let name = flow_file(f.model);
        let stem = name.trim_end_matches(".json").to_string();
        manifest.seed(&format!("{stem}.init"), derive_seed(cfg.seed, FLOW_INIT_TAG + slot));
        manifest.seed(&format!("{stem}.train"), derive_seed(cfg.seed, TRAIN_TAG + slot));
        f.stack.save(&out.path(&name))?;
        out.record(&name)?;
        out.write(&format!("elbo_{stem}.csv"), f.outcome.trace.to_csv().as_bytes())?;
        let mut row = toml::Table::new();
        row.insert("final_neg_elbo".into(), f.outcome.final_loss().into());
        row.insert("iterations".into(), (f.outcome.iterations as i64).into());
        row.insert("early_stopped".into(), f.outcome.early_stopped.into());
        table.insert(stem, row.into());
    }
    manifest.result("flows", table);
    out.finish(manifest)
}

/// Effective configuration with the checkpoint directory pinned, so a manifest
/// rerun into another output directory still finds the maps.
fn pinned(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    if c.sampler.transport == TransportSource::Trained && c.sampler.kernel != KernelKind::Saturated {
        c.sampler.checkpoints = Some(checkpoint_dir(cfg));
    }
    c
}

fn load_for_sampling(cfg: &RunConfig, setup: &Setup, manifest: &mut Manifest) -> Result<Transports> {
    if cfg.sampler.kernel == KernelKind::Saturated && cfg.sampler.transport == TransportSource::Trained {
        return Ok(Transports::None);
    }
    let (maps, paths) = load_transports(cfg, &setup.family, &checkpoint_dir(cfg))?;
    for p in &paths {
        manifest.input(p)?;
    }
    Ok(maps)
}

fn cmd_sample(cfg: &RunConfig) -> Result<Manifest> {
    let cfg = &pinned(cfg);
    let setup = build_target(cfg)?;
    let mut manifest = Manifest::new("sample", cfg)?;
    if let Some(f) = &setup.data_file {
        manifest.input(f)?;
    }
    let maps = load_for_sampling(cfg, &setup, &mut manifest)?;
    let (kernel, within) = build_kernel(cfg, &setup, &maps)?;
    let sampler = Sampler {
        jump: kernel.as_ref(),
        within: (within.steps > 0).then_some(&within),
    };
    let chain_seed = derive_seed(cfg.seed, CHAIN_TAG);
    manifest.seed("chains", chain_seed);
    let records = run_chains(sampler, cfg.chain.chains, cfg.chain.iterations, chain_seed)?;
    let mut out = OutputDir::create(&cfg.out)?;
    for (i, r) in records.iter().enumerate() {
        out.write(&format!("trace_chain{i}.csv"), r.to_csv().as_bytes())?;
    }
    let (acc_csv, acc_table) = acceptance_summary(&records);
    out.write("acceptance.csv", acc_csv.as_bytes())?;
    out.write("model_probs.csv", model_probs_csv(&setup.family, &records, cfg.chain.burn_in_iterations()).as_bytes())?;
    manifest.result("acceptance", acc_table);
    let jump: Vec<toml::Value> = records
        .iter()
        .map(|r| r.jump_acceptance().map_or(toml::Value::String("NA".into()), toml::Value::Float))
        .collect();
    manifest.result("jump_acceptance", jump);
    out.finish(manifest)
}

/// `from,to,count,mean_accept_prob` pooled over chains, and the same as a table
/// keyed `"from->to"`.
fn acceptance_summary(records: &[ChainRecord]) -> (String, toml::Table) {
    let mut pooled: std::collections::BTreeMap<(usize, usize), (usize, f64)> = Default::default();
    for r in records {
        for (pair, (n, mean)) in r.acceptance_summary() {
            let e = pooled.entry(pair).or_default();
            e.0 += n;
            e.1 += mean * n as f64;
        }
    }
    let mut csv = String::from("from,to,count,mean_accept_prob\n");
    let mut table = toml::Table::new();
    for ((a, b), (n, s)) in pooled {
        let mean = s / n as f64;
        let _ = writeln!(csv, "{a},{b},{n},{mean}");
        table.insert(format!("{a}->{b}"), mean.into());
    }
    (csv, table)
}

fn model_probs_csv(family: &TargetFamily, records: &[ChainRecord], burn_in: usize) -> String {
    let mut s = String::from("chain,model,label,probability\n");
    let labels = family.labels();
    let mut pooled = vec![0.0; family.len()];
    for (i, r) in records.iter().enumerate() {
        for (k, p) in r.model_frequencies(family.len(), burn_in).iter().enumerate() {
            let _ = writeln!(s, "{i},{k},{},{p}", labels[k]);
            pooled[k] += p / records.len() as f64;
        }
    }
    for (k, p) in pooled.iter().enumerate() {
        let _ = writeln!(s, "all,{k},{},{p}", labels[k]);
    }
    s
}

fn trace_paths(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    if !cfg.diagnostics.traces.is_empty() {
        return Ok(cfg.diagnostics.traces.clone());
    }
    let dir = checkpoint_dir(cfg);
    let mut found: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("trace_chain") && n.ends_with(".csv"))
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    found.sort();
    Ok(found)
}

/// Bridge-estimator model probabilities for `replicates` independent
/// evaluation sets, each with `eval_states` states per model.
pub fn bbe_replicates(
    cfg: &RunConfig,
    kernel: &dyn JumpKernel,
    maps: &Transports,
    traces: &[Vec<TransModelState>],
) -> Result<Vec<Vec<f64>>> {
    let d = &cfg.diagnostics;
    let family = kernel.family();
    let opts = BbeOptions {
        anchor: d.anchor,
        prior_reweight: None,
    };
    (0..d.replicates)
        .into_par_iter()
        .map(|r| {
            let r = r as u64;
            let state_seed = derive_seed(cfg.seed, EVAL_STATES_TAG + r);
            let states = match d.eval_source {
                EvalSource::ExactMap => {
                    if cfg.target.name != TargetName::Sas {
                        return Err(Error::Config("eval_source = \"exact-map\" is only available for the sas target".into()));
                    }
                    let exact = (0..family.len())
                        .map(|k| Ok(Arc::new(sas::exact_map(k)?) as Arc<dyn Transport>))
                        .collect::<Result<Vec<_>>>()?;
                    exact_map_states(family, &exact, d.eval_states, state_seed)?
                }
                EvalSource::FlowIndependence => {
                    let m = maps.as_slice();
                    if m.is_empty() {
                        return Err(Error::Config("eval_source = \"flow-independence\" needs trained flows".into()));
                    }
                    flow_independence_states(family, &m, d.eval_states, d.eval_burn, state_seed)?
                }
                EvalSource::ChainThinning => {
                    if traces.is_empty() {
                        return Err(Error::Data("eval_source = \"chain-thinning\" needs chain traces".into()));
                    }
                    thinned_chain_states(family, traces, d.eval_states, cfg.chain.burn_in_iterations())?
                }
            };
            let acc = build_eval_set(kernel, &states, derive_seed(cfg.seed, EVAL_PROPOSAL_TAG + r))?;
            bbe_estimate(&acc, &opts)
        })
        .collect()
}

/// `model,label,mean,q25,median,q75,iqr` over replicates.
pub fn bbe_summary_csv(labels: &[String], replicates: &[Vec<f64>]) -> String {
    let mut s = String::from("model,label,mean,q25,median,q75,iqr\n");
    for (k, label) in labels.iter().enumerate() {
        let v: Vec<f64> = replicates.iter().map(|p| p[k]).collect();
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let _ = writeln!(
            s,
            "{k},{label},{mean},{},{},{},{}",
            quantile(&v, 0.25),
            quantile(&v, 0.5),
            quantile(&v, 0.75),
            interquartile_range(&v)
        );
    }
    s
}

fn cmd_diagnose(cfg: &RunConfig) -> Result<Manifest> {
    let cfg = &pinned(cfg);
    let setup = build_target(cfg)?;
    let mut manifest = Manifest::new("diagnose", cfg)?;
    if let Some(f) = &setup.data_file {
        manifest.input(f)?;
    }
    let mut out = OutputDir::create(&cfg.out)?;
    let mut traces = Vec::new();
    for (i, path) in trace_paths(cfg)?.iter().enumerate() {
        manifest.input(path)?;
        let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let states = ChainRecord::states_from_csv(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let ks: Vec<usize> = states.iter().map(|s| s.k).collect();
        if let Some(bad) = ks.iter().find(|&&k| k >= setup.family.len()) {
            return Err(Error::Data(format!("{}: model index {bad} outside the target", path.display())));
        }
        out.write(&format!("running_probs_chain{i}.csv"), running_probs_csv(&ks, setup.family.len())?.as_bytes())?;
        if let Some(last) = ks.len().checked_sub(1) {
            let n = ks.len() as f64;
            let finals: Vec<toml::Value> = (0..setup.family.len())
                .map(|k| (ks.iter().filter(|&&m| m == k).count() as f64 / n).into())
                .collect();
            manifest.result(&format!("chain{i}_final_running_probs"), finals);
            manifest.result(&format!("chain{i}_iterations"), last as i64);
        }
        traces.push(states);
    }
    let maps = if cfg.diagnostics.eval_source == EvalSource::FlowIndependence || cfg.sampler.kernel != KernelKind::Saturated {
        let (m, paths) = load_transports(cfg, &setup.family, &checkpoint_dir(cfg))?;
        for p in &paths {
            manifest.input(p)?;
        }
        m
    } else {
        Transports::None
    };
    let (kernel, _) = build_kernel(cfg, &setup, &maps)?;
    let reps = bbe_replicates(cfg, kernel.as_ref(), &maps, &traces)?;
    out.write("bbe_replicates.csv", violin_csv(&reps).as_bytes())?;
    out.write("bbe_summary.csv", bbe_summary_csv(&setup.family.labels(), &reps).as_bytes())?;
    manifest.result("bbe_replicates", reps.len() as i64);
    out.finish(manifest)
}

/// Importance-sampling evidence of every model under the given maps.
pub fn model_evidences(cfg: &RunConfig, family: &TargetFamily, maps: &Transports) -> Result<Vec<Evidence>> {
    let m = cfg.diagnostics.evidence_samples;
    (0..family.len())
        .into_par_iter()
        .map(|k| {
            let seed = derive_seed(cfg.seed, EVIDENCE_TAG + k as u64);
            match maps {
                Transports::PerModel(v) => estimate_evidence(v[k].as_ref(), family.models[k].density.as_ref(), m, seed),
                Transports::Conditional(c) => estimate_evidence_conditional(c.as_ref(), family, k, m, seed),
                Transports::None => Err(Error::Config("evidence needs transport maps".into())),
            }
        })
        .collect()
}

fn evidence_tables(family: &TargetFamily, ev: &[Evidence]) -> Result<(String, String)> {
    let labels = family.labels();
    let mut a = String::from("model,label,log_evidence,evidence,std_error,rel_std_error,neg_elbo\n");
    for (k, e) in ev.iter().enumerate() {
        let _ = writeln!(
            a,
            "{k},{},{},{},{},{},{}",
            labels[k], e.log_estimate, e.estimate, e.std_error, e.rel_std_error, -e.elbo
        );
    }
    let logs: Vec<f64> = ev.iter().map(|e| e.log_estimate).collect();
    let neg: Vec<f64> = ev.iter().map(|e| -e.elbo).collect();
    let prior = family.prior();
    let q = rejection_free_from_log(&logs, &prior)?;
    let w = elbo_model_weights(&neg, &prior)?;
    let mut b = String::from("model,label,prior,rejection_free_q,elbo_weight\n");
    for k in 0..family.len() {
        let _ = writeln!(b, "{k},{},{},{},{}", labels[k], prior[k], q[k], w[k]);
    }
    Ok((a, b))
}

fn cmd_evidence(cfg: &RunConfig) -> Result<Manifest> {
    let cfg = &pinned(cfg);
    let setup = build_target(cfg)?;
    let mut manifest = Manifest::new("evidence", cfg)?;
    if let Some(f) = &setup.data_file {
        manifest.input(f)?;
    }
    let (maps, paths) = load_transports(cfg, &setup.family, &checkpoint_dir(cfg))?;
    for p in &paths {
        manifest.input(p)?;
    }
    let ev = model_evidences(cfg, &setup.family, &maps)?;
    let (a, b) = evidence_tables(&setup.family, &ev)?;
    let mut out = OutputDir::create(&cfg.out)?;
    out.write("evidence.csv", a.as_bytes())?;
    out.write("model_weights.csv", b.as_bytes())?;
    let logs: Vec<toml::Value> = ev.iter().map(|e| e.log_estimate.into()).collect();
    manifest.result("log_evidence", logs);
    out.finish(manifest)
}

fn cmd_ablate(cfg: &RunConfig) -> Result<Manifest> {
    let setup = build_target(cfg)?;
    let mut manifest = Manifest::new("ablate", cfg)?;
    if let Some(f) = &setup.data_file {
        manifest.input(f)?;
    }
    if cfg.ablation.depths.is_empty() {
        return Err(Error::Config("ablation.depths must not be empty".into()));
    }
    let mut out = OutputDir::create(&cfg.out)?;
    let labels = setup.family.labels();
    let mut table = String::from("depth,model,label,iterations,final_neg_elbo,log_evidence,rel_std_error\n");
    for &depth in &cfg.ablation.depths {
        let mut sub = cfg.clone();
        sub.flow.depth = vec![depth];
        let flows = train_flows(&sub, &setup.family)?;
        let dir = format!("depth_{depth}");
        let mut rows = Vec::new();
        for f in &flows {
            let name = format!("{dir}/{}", flow_file(f.model));
            fs::create_dir_all(out.path(&dir))?;
            f.stack.save(&out.path(&name))?;
            out.record(&name)?;
            let stem = flow_file(f.model).trim_end_matches(".json").to_string();
            out.write(&format!("{dir}/elbo_{stem}.csv"), f.outcome.trace.to_csv().as_bytes())?;
            rows.push((f.outcome.iterations, f.outcome.final_loss()));
        }
        let ev = model_evidences(&sub, &setup.family, &Transports::from_flows(flows))?;
        for (k, e) in ev.iter().enumerate() {
            // a conditional flow trains once for all models
            let (iters, loss) = rows[k.min(rows.len() - 1)];
            let _ = writeln!(table, "{depth},{k},{},{iters},{loss},{},{}", labels[k], e.log_estimate, e.rel_std_error);
        }
    }
    out.write("ablation.csv", table.as_bytes())?;
    manifest.result("depths", cfg.ablation.depths.iter().map(|&d| d as i64).collect::<Vec<_>>());
    out.finish(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_sas(out: &Path) -> RunConfig {
        let mut c = RunConfig::preset(Preset::Sas);
        c.out = out.to_path_buf();
        c.seed = 5;
        c.flow.hidden = vec![8];
        c.flow.depth = vec![2, 2];
        c.trainer.max_iters = 30;
        c.trainer.batch = 16;
        c.chain.iterations = 200;
        c.diagnostics.replicates = 3;
        c.diagnostics.eval_states = 20;
        c.diagnostics.evidence_samples = 200;
        c
    }

    #[test]
    fn exact_map_sampling_accepts_everything() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = quick_sas(dir.path());
        c.sampler.transport = TransportSource::Exact;
        let m = run(Command::Sample, &c).unwrap();
        for v in m.results["acceptance"].as_table().unwrap().values() {
            assert!((v.as_float().unwrap() - 1.0).abs() < 1e-10);
        }
        assert_eq!(m.outputs.keys().filter(|k| k.starts_with("trace_chain")).count(), 3);
    }

    #[test]
    fn zero_iterations_give_init_only_traces() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = quick_sas(dir.path());
        c.sampler.transport = TransportSource::Exact;
        c.chain.iterations = 0;
        run(Command::Sample, &c).unwrap();
        let text = fs::read_to_string(dir.path().join("trace_chain0.csv")).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn train_then_sample_uses_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let c = quick_sas(dir.path());
        let m = run(Command::Train, &c).unwrap();
        assert!(m.outputs.contains_key("flow_model0.json") && m.outputs.contains_key("elbo_flow_model1.csv"));
        let m = run(Command::Sample, &c).unwrap();
        assert_eq!(m.inputs.len(), 2);
        assert_eq!(m.config.sampler.checkpoints.as_deref(), Some(dir.path()));
    }

    #[test]
    fn incompatible_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = quick_sas(dir.path());
        run(Command::Train, &c).unwrap();
        let mut other = c.clone();
        other.flow.depth = vec![3, 3];
        let err = run(Command::Sample, &other).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn factor_analysis_without_data_is_a_data_error() {
        let mut c = RunConfig::preset(Preset::FactorAnalysis);
        c.out = tempfile::tempdir().unwrap().path().to_path_buf();
        let err = run(Command::Train, &c).unwrap_err();
        assert_eq!(err.exit_code(), 4, "{err}");
    }
}
