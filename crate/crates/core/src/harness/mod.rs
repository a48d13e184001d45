//! Experiment orchestration behind the `linkrl` command line.
//!
//! Every command reads one [`ExperimentConfig`], works inside an output
//! directory, and writes CSV files that open with the config hash. Commands
//! are deterministic: the same config and seed reproduce the same bytes.

mod config;
mod eval;

pub use config::{CollectConfig, CollectPolicy, EvalConfig, ExperimentConfig, OracleConfig, EVAL_SEED_OFFSET};
pub use eval::{csv_with_hash, evaluate, report_row, rollouts, EvalReport, REPORT_HEADER};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::agents::{bc_train, bcq_train, cql_train, dqn_train, AgentKind, TabularPolicy, ValueAgent};
use crate::dataset::{read_dataset, write_dataset, Transition};
use crate::dt::{self, ConditioningKind, ConditioningTargets, DtModel, DtPolicy, OmegaSchedule};
use crate::env::{run_scheduler, Action, EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::olla::OllaPolicy;
use crate::oracle::{greedy_action, value_iteration, QTable};
use crate::policy::Policy;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgentTarget {
    Value(AgentKind),
    Dt,
}

impl AgentTarget {
    pub fn name(self) -> &'static str {
        match self {
            AgentTarget::Value(k) => k.name(),
            AgentTarget::Dt => "dt",
        }
    }
}

impl std::str::FromStr for AgentTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("dt") {
            return Ok(AgentTarget::Dt);
        }
        s.parse().map(AgentTarget::Value).map_err(|_| Error::Config(format!("unknown agent {s:?}; expected bc, bcq, cql, dqn or dt")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Collect,
    TrainOracle,
    TrainAgent(AgentTarget),
    Eval,
    SweepConditioning,
    Compare,
}

impl Command {
    pub fn name(self) -> String {
        match self {
            Command::Collect => "collect".into(),
            Command::TrainOracle => "train-oracle".into(),
            Command::TrainAgent(a) => format!("train-agent-{}", a.name()),
            Command::Eval => "eval".into(),
            Command::SweepConditioning => "sweep-conditioning".into(),
            Command::Compare => "compare".into(),
        }
    }
}

/// File locations inside an output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn qtable(&self) -> PathBuf {
        self.root.join("oracle/qtable.bin")
    }

    pub fn oracle_policy_csv(&self) -> PathBuf {
        self.root.join("oracle/policy.csv")
    }

    pub fn dataset(&self, epsilon: f64, seed: u64) -> PathBuf {
        self.root.join(format!("data/eps{epsilon:.2}_seed{seed}.jsonl"))
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(name)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.json"))
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: &'a str,
    seed: u64,
    /// Worker threads available; the only field that may differ between reruns.
    threads: usize,
    outputs: Vec<String>,
}

fn threads() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();
    #[cfg(not(feature = "parallel"))]
    1
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

/// Runs one command and returns the files it wrote, manifest last.
pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let layout = Layout::new(out);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hash = cfg.hash();
    let mut outputs = match cmd {
        Command::Collect => collect(cfg, &layout)?,
        Command::TrainOracle => train_oracle(cfg, &layout, &hash)?,
        Command::TrainAgent(a) => train_agent(cfg, &layout, &hash, a)?,
        Command::Eval => eval(cfg, &layout, &hash)?,
        Command::SweepConditioning => sweep_conditioning(cfg, &layout, &hash)?,
        Command::Compare => compare(cfg, &layout, &hash)?,
    };
    let name = cmd.name();
    let manifest = RunManifest {
        command: &name,
        version: VERSION,
        config_hash: &hash,
        seed: cfg.seed,
        threads: threads(),
        outputs: outputs.iter().map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string()).collect(),
    };
    let path = layout.manifest(&name);
    write_file(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")?;
    outputs.push(path);
    Ok(outputs)
}

/// Greedy action of the oracle for every (retransmission index, context).
pub fn oracle_table(q: &QTable, env: &EnvConfig) -> TabularPolicy {
    let actions = (0..env.n_states)
        .flat_map(|k| (0..env.context_max).map(move |x| (k, x)))
        .map(|(k, x)| greedy_action(q, &Observation { k, x, cqi: 0, t: 0, packet_id: 0 }))
        .collect();
    TabularPolicy { context_max: env.context_max as usize, actions }
}

/// Uniformly random action with probability `epsilon`, otherwise `base`.
pub struct Explore<P> {
    pub base: P,
    pub epsilon: f64,
    pub n_actions: usize,
    pub rng: ChaCha8Rng,
}

impl<P: Policy> Policy for Explore<P> {
    fn act(&mut self, obs: &Observation) -> Action {
        if self.epsilon > 0.0 && self.rng.gen::<f64>() < self.epsilon {
            Action(self.rng.gen_range(1..=self.n_actions as u16))
        } else {
            self.base.act(obs)
        }
    }

    fn observe(&mut self, tr: &Transition) {
        self.base.observe(tr)
    }
}

fn explore_rng(seed: u64, epsilon: f64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ epsilon.to_bits().rotate_left(17))
}

pub fn load_oracle(layout: &Layout) -> Result<QTable> {
    let p = layout.qtable();
    if !p.exists() {
        return Err(Error::MissingArtifact(p));
    }
    QTable::load(&p)
}

fn collect(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let base = match cfg.collect.policy {
        CollectPolicy::DpGreedy => oracle_table(&load_oracle(layout)?, &cfg.env),
        CollectPolicy::Dqn => ValueAgent::load(&layout.model("dqn"))?.policy_table(&cfg.env)?,
    };
    let mut outputs = Vec::new();
    for &eps in &cfg.collect.epsilons {
        for seed in cfg.collect_seeds() {
            let mut p = Explore { base: base.clone(), epsilon: eps, n_actions: cfg.env.n_actions, rng: explore_rng(seed, eps) };
            let data = run_scheduler(&cfg.env_for_seed(seed), &mut p, cfg.collect.ttis)?;
            let path = layout.dataset(eps, seed);
            ensure_parent(&path)?;
            write_dataset(&path, &data)?;
            outputs.push(path);
        }
    }
    Ok(outputs)
}

fn train_oracle(cfg: &ExperimentConfig, layout: &Layout, hash: &str) -> Result<Vec<PathBuf>> {
    let q = value_iteration(&cfg.env, cfg.oracle.gamma, cfg.oracle.tol)?;
    let path = layout.qtable();
    ensure_parent(&path)?;
    q.save(&path)?;
    let rows = (0..cfg.env.n_states).flat_map(|k| (0..cfg.env.context_max).map(move |x| (k, x))).map(|(k, x)| {
        let a = greedy_action(&q, &Observation { k, x, cqi: 0, t: 0, packet_id: 0 });
        format!("{k},{x},{a},{:.9}", q.state_value(k, x))
    });
    let csv = layout.oracle_policy_csv();
    write_file(&csv, csv_with_hash(hash, "k,x,greedy_action,value", rows))?;
    Ok(vec![path, csv])
}

/// Every collected dataset at the training exploration level, seeds in order.
pub fn load_training_data(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<Transition>> {
    let mut data = Vec::new();
    for seed in cfg.collect_seeds() {
        let path = layout.dataset(cfg.eval.train_epsilon, seed);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        data.extend(read_dataset(&path)?);
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("no transitions at epsilon {}", cfg.eval.train_epsilon)));
    }
    Ok(data)
}

fn train_agent(cfg: &ExperimentConfig, layout: &Layout, hash: &str, target: AgentTarget) -> Result<Vec<PathBuf>> {
    let stem = layout.model(target.name());
    ensure_parent(&stem)?;
    let agent_cfg = cfg.agent_config();
    let agent = match target {
        AgentTarget::Dt => {
            let data = load_training_data(cfg, layout)?;
            let (model, report) = dt::train(&data, &cfg.env, &cfg.dt_config())?;
            model.save(&stem, hash)?;
            let loss_csv = layout.model("dt_loss.csv");
            let rows = report.losses.iter().enumerate().map(|(i, l)| format!("{i},{l:.9}"));
            write_file(&loss_csv, csv_with_hash(hash, "step,loss", rows))?;
            return Ok(vec![stem.with_extension("bin"), stem.with_extension("manifest.json"), loss_csv]);
        }
        AgentTarget::Value(AgentKind::Dqn) => dqn_train(&cfg.env, &agent_cfg)?,
        AgentTarget::Value(kind) => {
            let data = load_training_data(cfg, layout)?;
            match kind {
                AgentKind::Bc => bc_train(&data, &cfg.env, &agent_cfg)?,
                AgentKind::Bcq => bcq_train(&data, &cfg.env, &agent_cfg)?,
                AgentKind::Cql => cql_train(&data, &cfg.env, &agent_cfg)?,
                AgentKind::Dqn => unreachable!("handled above"),
            }
        }
    };
    agent.save(&stem, hash)?;
    Ok(vec![stem.with_extension("bin"), stem.with_extension("manifest.json")])
}

type Factory = Box<dyn Fn(u64) -> Result<Box<dyn Policy + Send>> + Sync>;

/// A named policy constructor for evaluation rows.
pub struct Candidate {
    pub name: String,
    pub make: Factory,
}

pub fn oracle_candidate(q: QTable, env: &EnvConfig) -> Candidate {
    let table = oracle_table(&q, env);
    Candidate { name: "oracle-greedy".into(), make: Box::new(move |_| Ok(Box::new(table.clone()))) }
}

pub fn olla_candidates(cfg: &ExperimentConfig) -> Vec<Candidate> {
    cfg.eval
        .olla_targets
        .iter()
        .map(|&target| {
            let env = cfg.env.clone();
            let step = cfg.eval.olla_step_up;
            Candidate {
                name: format!("OLLA({target})"),
                make: Box::new(move |_| Ok(Box::new(OllaPolicy::new(&env, target, step)?) as Box<dyn Policy + Send>)),
            }
        })
        .collect()
}

pub fn value_candidate(agent: &ValueAgent, env: &EnvConfig) -> Result<Candidate> {
    let table = agent.policy_table(env)?;
    Ok(Candidate { name: agent.kind.name().to_ascii_uppercase(), make: Box::new(move |_| Ok(Box::new(table.clone()))) })
}

pub fn dt_candidate(name: &str, model: Arc<DtModel>, schedule: OmegaSchedule, env: &EnvConfig) -> Candidate {
    let delay = env.harq_delay;
    Candidate {
        name: name.into(),
        make: Box::new(move |_| Ok(Box::new(DtPolicy::new(model.clone(), schedule.clone(), delay)))),
    }
}

pub fn evaluate_candidate(cfg: &ExperimentConfig, c: &Candidate) -> Result<EvalReport> {
    evaluate(&c.name, &cfg.env, &cfg.eval_seeds(), cfg.eval.horizon, &c.make)
}

/// DT conditioned as configured.
fn configured_dt(cfg: &ExperimentConfig, layout: &Layout, data: &[Transition]) -> Result<Candidate> {
    let model = Arc::new(DtModel::load(&layout.model("dt"))?);
    let spec = &model.config.conditioning;
    let targets = ConditioningTargets::from_dataset(data, spec, cfg.env.n_cqi)?;
    let schedule = targets.schedule(spec.kind, spec.quantile, spec.target)?;
    Ok(dt_candidate("DT", model, schedule, &cfg.env))
}

/// All rows that can be built from what is on disk, in leaderboard order.
/// With `require_all`, a missing agent is an error.
fn candidates(cfg: &ExperimentConfig, layout: &Layout, require_all: bool) -> Result<Vec<Candidate>> {
    let mut rows = vec![oracle_candidate(load_oracle(layout)?, &cfg.env)];
    rows.extend(olla_candidates(cfg));
    for kind in AgentKind::ALL {
        match ValueAgent::load(&layout.model(kind.name())) {
            Ok(agent) => rows.push(value_candidate(&agent, &cfg.env)?),
            Err(Error::MissingArtifact(_)) if !require_all => {}
            Err(e) => return Err(e),
        }
    }
    let stem = layout.model("dt");
    if require_all || stem.with_extension("manifest.json").exists() {
        let data = load_training_data(cfg, layout)?;
        rows.push(configured_dt(cfg, layout, &data)?);
    }
    Ok(rows)
}

fn eval(cfg: &ExperimentConfig, layout: &Layout, hash: &str) -> Result<Vec<PathBuf>> {
    let seeds = cfg.eval_seeds();
    let mut summary = Vec::new();
    let mut per_seed = Vec::new();
    for c in candidates(cfg, layout, false)? {
        let r = evaluate_candidate(cfg, &c)?;
        for (s, ret) in seeds.iter().zip(&r.returns) {
            per_seed.push(format!("{},{s},{ret:.6},{:.6}", r.name, ret / cfg.eval.horizon.max(1) as f64));
        }
        summary.push(report_row(&r));
    }
    let a = layout.file("eval.csv");
    let b = layout.file("eval_per_seed.csv");
    write_file(&a, csv_with_hash(hash, REPORT_HEADER, summary))?;
    write_file(&b, csv_with_hash(hash, "policy,seed,total_return,reward_per_tti", per_seed))?;
    Ok(vec![a, b])
}

fn compare(cfg: &ExperimentConfig, layout: &Layout, hash: &str) -> Result<Vec<PathBuf>> {
    let rows = candidates(cfg, layout, true)?
        .iter()
        .map(|c| evaluate_candidate(cfg, c).map(|r| report_row(&r)))
        .collect::<Result<Vec<_>>>()?;
    let path = layout.file("compare.csv");
    write_file(&path, csv_with_hash(hash, REPORT_HEADER, rows))?;
    Ok(vec![path])
}

/// One DT report per quantile of the training returns.
pub struct Sweep {
    pub rows: Vec<(f64, f64, EvalReport)>,
    pub cctr: Option<EvalReport>,
    pub reference: EvalReport,
}

impl Sweep {
    /// `(max - min) / |mean|` of the quantile rows' mean returns.
    pub fn relative_spread(&self) -> f64 {
        let m: Vec<f64> = self.rows.iter().map(|(_, _, r)| r.mean).collect();
        let (lo, hi) = m.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let mean = m.iter().sum::<f64>() / m.len().max(1) as f64;
        if m.is_empty() || mean == 0.0 { 0.0 } else { (hi - lo) / mean.abs() }
    }
}

pub fn run_sweep(
    cfg: &ExperimentConfig,
    model: Arc<DtModel>,
    data: &[Transition],
    reference: &Candidate,
) -> Result<(Sweep, Option<String>)> {
    let spec = model.config.conditioning.clone();
    let targets = ConditioningTargets::from_dataset(data, &spec, cfg.env.n_cqi)?;
    let kind = match spec.kind {
        ConditioningKind::Cctr => ConditioningKind::Vanilla,
        k => k,
    };
    let mut rows = Vec::new();
    for &q in &cfg.eval.quantiles {
        let schedule = targets.schedule(kind, q, None)?;
        let omega = schedule.first_attempt(&Observation { k: 0, x: 0, cqi: 0, t: 0, packet_id: 0 });
        let name = format!("DT-{kind:?}").to_ascii_uppercase();
        let r = evaluate_candidate(cfg, &dt_candidate(&name, model.clone(), schedule, &cfg.env))?;
        rows.push((q, omega, r));
    }
    let (cctr, table) = if spec.kind == ConditioningKind::Davg {
        (None, None)
    } else {
        let schedule = targets.schedule(ConditioningKind::Cctr, spec.quantile, None)?;
        let table = match &schedule {
            OmegaSchedule::PerCqi { targets, .. } => Some(targets.to_csv()),
            _ => None,
        };
        (Some(evaluate_candidate(cfg, &dt_candidate("DT-CCTR", model, schedule, &cfg.env))?), table)
    };
    let reference = evaluate_candidate(cfg, reference)?;
    Ok((Sweep { rows, cctr, reference }, table))
}

fn sweep_conditioning(cfg: &ExperimentConfig, layout: &Layout, hash: &str) -> Result<Vec<PathBuf>> {
    let model = Arc::new(DtModel::load(&layout.model("dt"))?);
    let data = load_training_data(cfg, layout)?;
    let reference = oracle_candidate(load_oracle(layout)?, &cfg.env);
    let (sweep, table) = run_sweep(cfg, model.clone(), &data, &reference)?;
    let mut lines: Vec<String> = sweep.rows.iter().map(|(q, w, r)| format!("{},{q},{w:.6}", report_row(r))).collect();
    if let Some(r) = &sweep.cctr {
        lines.push(format!("{},{},per-cqi", report_row(r), model.config.conditioning.quantile));
    }
    lines.push(format!("{},,", report_row(&sweep.reference)));
    let mut csv = csv_with_hash(hash, &format!("{REPORT_HEADER},quantile,omega"), lines);
    let _ = writeln!(csv, "# relative_spread: {:.6}", sweep.relative_spread());
    let path = layout.file("sweep_conditioning.csv");
    write_file(&path, csv)?;
    let mut out = vec![path];
    if let Some(t) = table {
        let p = layout.file("cctr_targets.csv");
        write_file(&p, format!("# config_hash: {hash}\n{t}"))?;
        out.push(p);
    }
    Ok(out)
}
