use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use redox_core::randomness::{
    compute_bound, enumerate_reachable, position_uniformity, Enumeration, RandomnessBound, UniformityReport,
};
use redox_core::seed::mix;
use redox_core::sim::{
    ablation_csv, chunk_size_sweep, redirection_violations, run_ablation, sweep_csv, verify_exactly_once,
    ExactlyOnceReport, Scheduler, Seeds, SimConfig, Simulator,
};
use redox_core::storage::{
    chunk_file_name, pack_chunks, ChunkStore, DirSource, DirStore, PayloadSource, SyntheticSource, SyntheticStore,
};
use redox_core::{ConfigError, DeliveryTrace, EpochTrace, Layout, LayoutConfig};

use crate::manifest::{sha256_hex, RunManifest};
use crate::{AblateArgs, OnOff, PackArgs, RandomnessArgs, SimulateArgs, VerifyArgs};

/// A check over user-supplied artifacts failed.
#[derive(Debug)]
pub struct InvariantFailure(pub String);

impl std::fmt::Display for InvariantFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvariantFailure {}

/// Writes to stdout. A closed pipe (`redox ... | head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<InvariantFailure>() || cause.is::<redox_core::ProtocolViolation>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<redox_core::Error>() {
            return if e.is_invariant_violation() { 1 } else { 2 };
        }
    }
    2
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    redox_core::Error::from(ConfigError::Invalid(msg.into())).into()
}

fn read_text(path: &Path, what: &str) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {what} {}", path.display()))
}

/// Defaults, then the config file (a plain config or a run manifest).
fn load_sim_config(path: Option<&Path>) -> Result<SimConfig> {
    let Some(path) = path else {
        return Ok(SimConfig::default());
    };
    let text = read_text(path, "config")?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let value = match RunManifest::detect(&value) {
        Some(m) => m.config,
        None => value,
    };
    serde_json::from_value(value).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn apply_seed(config: &mut SimConfig, seed: Option<u64>) {
    if let Some(s) = seed {
        config.seeds = Seeds::derive(s);
        config.layout.layout_seed = mix(s, 0);
        if let Scheduler::Jitter { seed } = &mut config.scheduler {
            *seed = mix(s, 5);
        }
    }
}

fn seed_map(config: &SimConfig, master: Option<u64>) -> std::collections::BTreeMap<String, u64> {
    let mut m = std::collections::BTreeMap::new();
    if let Some(s) = master {
        m.insert("master".into(), s);
    }
    m.insert("epoch".into(), config.seeds.epoch);
    m.insert("payload".into(), config.seeds.payload);
    m.insert("tiebreak".into(), config.seeds.tiebreak);
    m.insert("layout".into(), config.layout.layout_seed);
    if let Scheduler::Jitter { seed } = config.scheduler {
        m.insert("scheduler".into(), seed);
    }
    m
}

/// Changes K while holding M·K fixed.
fn rescale_chunk_size(layout: &mut LayoutConfig, k: usize) -> Result<()> {
    let memory = layout.virtual_chunks * layout.chunk_size;
    if k == 0 || !memory.is_multiple_of(k) {
        return Err(config_error(format!(
            "--chunk-size {k} does not divide the memory of {memory} file slots (M·K)"
        )));
    }
    layout.chunk_size = k;
    layout.virtual_chunks = memory / k;
    Ok(())
}

pub fn simulate(a: SimulateArgs, seed: Option<u64>) -> Result<()> {
    let mut config = load_sim_config(a.config.as_deref())?;
    apply_seed(&mut config, seed);
    if let Some(p) = a.prefetch {
        config.features.prefetch = p == OnOff::On;
    }
    if let Some(r) = a.refill {
        config.features.refill_policy = r.into();
    }
    if let Some(b) = a.batching {
        config.features.batching = b == OnOff::On;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(k) = a.chunk_size {
        if a.data.is_some() {
            return Err(config_error(
                "--chunk-size cannot be combined with --data; the packed layout fixes K",
            ));
        }
        rescale_chunk_size(&mut config.layout, k)?;
    }

    let (layout, store): (Arc<Layout>, Arc<dyn ChunkStore + Send + Sync>) = match &a.data {
        Some(dir) => {
            let packed = Layout::from_text(&read_text(&dir.join("layout.txt"), "packed layout")?)
                .map_err(redox_core::Error::from)?;
            if !config.features.batching {
                return Err(config_error("--data needs batching on; packed chunks hold K files"));
            }
            let mut lc = packed.config().clone();
            lc.remote_vc_budget = config.layout.remote_vc_budget;
            config.layout = lc.clone();
            config.validate().map_err(redox_core::Error::from)?;
            let layout = Arc::new(Layout::build(lc, packed.sizes().to_vec()).map_err(redox_core::Error::from)?);
            (layout.clone(), Arc::new(DirStore::new(dir, layout)))
        }
        None => {
            config.validate().map_err(redox_core::Error::from)?;
            let layout = Arc::new(
                Layout::build(config.effective_layout(), config.file_sizes()).map_err(redox_core::Error::from)?,
            );
            let store = Arc::new(SyntheticStore::new(&layout, config.seeds.payload));
            (layout, store)
        }
    };

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut manifest = RunManifest::new("simulate", serde_json::to_value(&config)?);
    manifest.seeds = seed_map(&config, seed);

    let mut sim = Simulator::with_store(config.clone(), layout.clone(), store, a.wire)?;
    if a.emit_trace {
        manifest.write_output(&a.out, "layout.txt", layout.to_text().as_bytes())?;
    }
    let mut reports = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let run = sim.run_epoch()?;
        let r = &run.report;
        emit(&format!(
            "epoch {epoch}: delivered {} files, simulated time {:.3}s, misses {}, remote requests {}, prefetched {}, wasted {}\n",
            r.delivered,
            r.simulated_epoch_time,
            r.memory_misses,
            r.remote_on_demand_requests,
            r.prefetched_files,
            r.files_wasted
        ))?;
        if a.emit_trace {
            manifest.write_output(
                &a.out,
                &format!("trace-epoch{epoch}.txt"),
                run.trace.to_text().as_bytes(),
            )?;
            let deliveries = DeliveryTrace::from_logs(layout.num_files(), r.epoch_seed, &run.logs);
            manifest.write_output(
                &a.out,
                &format!("deliveries-epoch{epoch}.txt"),
                deliveries.to_text().as_bytes(),
            )?;
        }
        reports.push(run.report);
    }
    let mut text = serde_json::to_string_pretty(&reports)?;
    text.push('\n');
    manifest.write_output(&a.out, "report.json", text.as_bytes())?;
    manifest.save(&a.out)?;
    emit(&format!(
        "report {} sha256 {}\n",
        a.out.join("report.json").display(),
        manifest.outputs["report.json"]
    ))?;
    Ok(())
}

pub fn ablate(a: AblateArgs, seed: Option<u64>) -> Result<()> {
    let mut config = load_sim_config(a.config.as_deref())?;
    apply_seed(&mut config, seed);
    config.validate().map_err(redox_core::Error::from)?;
    let csv = ablation_csv(&run_ablation(&config)?);
    emit(&csv)?;
    let sweep = if a.sweep.is_empty() {
        None
    } else {
        let s = sweep_csv(&chunk_size_sweep(&config, &a.sweep)?);
        emit("\n")?;
        emit(&s)?;
        Some(s)
    };
    if let Some(out) = &a.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut manifest = RunManifest::new("ablate", serde_json::to_value(&config)?);
        manifest.seeds = seed_map(&config, seed);
        manifest.write_output(out, "ablation.csv", csv.as_bytes())?;
        if let Some(s) = sweep {
            manifest.write_output(out, "sweep.csv", s.as_bytes())?;
        }
        manifest.save(out)?;
    }
    Ok(())
}

pub fn pack(a: PackArgs, seed: Option<u64>) -> Result<()> {
    let dir_source = match a.source.as_str() {
        "synthetic" => None,
        path => Some(DirSource::open(Path::new(path)).with_context(|| format!("opening source directory {path}"))?),
    };
    let (layout, payload_seed) = match (&a.layout, &a.config) {
        (Some(path), _) => {
            let layout = Layout::from_text(&read_text(path, "layout")?).map_err(redox_core::Error::from)?;
            (layout, seed.unwrap_or(0))
        }
        (None, Some(path)) => {
            let mut config = load_sim_config(Some(path))?;
            apply_seed(&mut config, seed);
            config.validate().map_err(redox_core::Error::from)?;
            let sizes = match &dir_source {
                Some(src) => src.sizes().map_err(redox_core::Error::from)?,
                None => config.file_sizes(),
            };
            let layout = Layout::build(config.effective_layout(), sizes).map_err(redox_core::Error::from)?;
            (layout, config.seeds.payload)
        }
        (None, None) => unreachable!("clap requires --layout or --config"),
    };

    let synthetic;
    let source: &dyn PayloadSource = match &dir_source {
        Some(src) => {
            if src.len() != layout.num_files() {
                return Err(config_error(format!(
                    "source directory has {} files, layout has {}",
                    src.len(),
                    layout.num_files()
                )));
            }
            let sizes = src.sizes().map_err(redox_core::Error::from)?;
            if let Some(f) = (0..sizes.len()).find(|&f| sizes[f] != layout.size_of(f)) {
                return Err(config_error(format!(
                    "file {f} in the source directory is {} bytes, layout says {}",
                    sizes[f],
                    layout.size_of(f)
                )));
            }
            src
        }
        None => {
            synthetic = SyntheticSource::new(&layout, payload_seed);
            &synthetic
        }
    };

    let count = pack_chunks(&layout, source, &a.out).map_err(redox_core::Error::from)?;
    let mut manifest = RunManifest::new(
        "pack",
        json!({
            "layout": layout.config(),
            "source": a.source,
            "payload_seed": payload_seed,
            "chunks": count,
        }),
    );
    if let Some(s) = seed {
        manifest.seeds.insert("master".into(), s);
    }
    manifest.seeds.insert("payload".into(), payload_seed);
    manifest.write_output(&a.out, "layout.txt", layout.to_text().as_bytes())?;
    let mut all = Vec::new();
    for pc in 0..count {
        all.extend_from_slice(sha256_hex(&fs::read(a.out.join(chunk_file_name(pc)))?).as_bytes());
    }
    manifest.outputs.insert("chunks".into(), sha256_hex(&all));
    manifest.save(&a.out)?;
    emit(&format!(
        "packed {} files into {count} chunks in {}\n",
        layout.num_files(),
        a.out.display()
    ))?;
    Ok(())
}

/// `d.ddde±N` from a base-10 logarithm.
fn scientific(log10: f64) -> String {
    let exp = log10.floor();
    format!("{:.2}e{}", 10f64.powf(log10 - exp), exp as i64)
}

#[derive(Serialize)]
struct RandomnessReport {
    params: serde_json::Value,
    bound: RandomnessBound,
    /// `(G!)^K`: the figure quoted as the randomness left after redirection.
    divisor: String,
    /// `(F/M)! / (G!)^K`, the bound the formula actually gives.
    lower_bound: String,
    enumeration: Option<Enumeration>,
    diagnostics: Option<UniformityReport>,
}

pub fn randomness(a: RandomnessArgs, seed: Option<u64>) -> Result<()> {
    let bound = compute_bound(a.files, a.virtual_chunks, a.chunk_size).map_err(redox_core::Error::from)?;
    let enumeration = if a.enumerate {
        Some(enumerate_reachable(bound.files_per_vc, a.chunk_size)?)
    } else {
        None
    };
    let diagnostics = match a.trials {
        Some(t) => Some(position_uniformity(
            bound.files_per_vc,
            a.chunk_size,
            a.refill.into(),
            t,
            a.alpha,
            seed.unwrap_or(0),
        )?),
        None => None,
    };
    let params = json!({
        "F": a.files, "M": a.virtual_chunks, "K": a.chunk_size, "G": bound.group_size,
        "enumerate": a.enumerate, "trials": a.trials, "alpha": a.alpha, "refill": RefillName(a.refill.into()),
        "seed": seed,
    });
    let report = RandomnessReport {
        params: params.clone(),
        divisor: scientific(bound.log10_divisor),
        lower_bound: scientific(bound.log10_lower_bound),
        bound,
        enumeration,
        diagnostics,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    emit(&text)?;
    if let Some(out) = &a.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut manifest = RunManifest::new("randomness", params);
        if let Some(s) = seed {
            manifest.seeds.insert("master".into(), s);
        }
        manifest.write_output(out, "randomness.json", text.as_bytes())?;
        manifest.save(out)?;
    }
    Ok(())
}

struct RefillName(redox_core::protocol::RefillPolicy);

impl Serialize for RefillName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&self.0)
    }
}

/// Keeps at most this many example entries in verify output.
const SHOW: usize = 10;

fn summarize(report: &ExactlyOnceReport) -> serde_json::Value {
    json!({
        "ok": report.is_ok(),
        "delivered": report.delivered,
        "duplicates": report.duplicates.len(),
        "duplicate_examples": &report.duplicates[..report.duplicates.len().min(SHOW)],
        "omissions": report.omissions.len(),
        "omission_examples": &report.omissions[..report.omissions.len().min(SHOW)],
        "out_of_range": report.out_of_range.len(),
    })
}

pub fn verify(a: VerifyArgs) -> Result<()> {
    let layout = Layout::from_text(&read_text(&a.layout, "layout")?).map_err(redox_core::Error::from)?;
    let text = read_text(&a.trace, "trace")?;
    let kind = text.split_whitespace().next().unwrap_or_default();
    let mut problems = Vec::new();
    let summary = match kind {
        "redox-deliveries" => {
            let t = DeliveryTrace::from_text(&text).map_err(redox_core::Error::from)?;
            if t.files != layout.num_files() || t.nodes != layout.nodes() {
                return Err(config_error(format!(
                    "trace is for F={} N={}, layout has F={} N={}",
                    t.files,
                    t.nodes,
                    layout.num_files(),
                    layout.nodes()
                )));
            }
            let logs = t.logs();
            let returned = verify_exactly_once(t.files, &logs);
            let mut as_requested = logs.clone();
            for log in &mut as_requested {
                for d in &mut log.entries {
                    d.returned = d.requested;
                }
            }
            let requested = verify_exactly_once(t.files, &as_requested);
            let redirects = redirection_violations(&layout, &logs);
            if !returned.is_ok() {
                problems.push(format!(
                    "returned files are not a permutation: {} duplicates, {} omissions, {} out of range",
                    returned.duplicates.len(),
                    returned.omissions.len(),
                    returned.out_of_range.len()
                ));
            }
            if !requested.is_ok() {
                problems.push("requested files are not a permutation".to_string());
            }
            if !redirects.is_empty() {
                problems.push(format!(
                    "{} deliveries break the (vc, offset, home) constraint",
                    redirects.len()
                ));
            }
            json!({
                "kind": "deliveries",
                "files": t.files,
                "epoch_seed": t.epoch_seed,
                "returned": summarize(&returned),
                "requested": summarize(&requested),
                "redirection_violations": redirects.len(),
                "redirection_examples": &redirects[..redirects.len().min(SHOW)],
            })
        }
        "redox-trace" => {
            let t = EpochTrace::from_text(&text).map_err(redox_core::Error::from)?;
            if t.len() != layout.num_files() || t.nodes() != layout.nodes() {
                return Err(config_error(format!(
                    "trace is for F={} N={}, layout has F={} N={}",
                    t.len(),
                    t.nodes(),
                    layout.num_files(),
                    layout.nodes()
                )));
            }
            json!({ "kind": "requests", "files": t.len(), "epoch_seed": t.epoch_seed(), "permutation": true })
        }
        other => return Err(config_error(format!("unrecognized trace header `{other}`"))),
    };
    emit(&format!("{}\n", serde_json::to_string_pretty(&summary)?))?;
    if problems.is_empty() {
        Ok(())
    } else {
        bail!(InvariantFailure(problems.join("; ")))
    }
}
