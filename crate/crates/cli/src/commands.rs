//! The five subcommands. Each writes its artifacts under the config's output
//! directory and returns the text to print.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use accel_leak::attacks::{
    huffduff_attack, kk_attack, reverse_engg_attack, si_attack, ss_attack, AttackError, AttackKind,
    AttackReport, HuffDuffConfig,
};
use accel_leak::binpack::BinPackReport;
use accel_leak::stats::MetricReport;
use accel_leak::tracegen::{cdtv, read_csv, write_csv, TraceEvent};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Verdict};
use crate::error::CliError;
use crate::experiments::{battery, searchspace};
use crate::scenario::{Cm, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(CliError::Config(format!(
                "unknown format {other:?} (expected csv or json)"
            ))),
        }
    }
}

pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub format: Format,
}

impl Context {
    pub fn new(cfg: RunConfig, format: Format) -> Self {
        let hash = cfg.hash();
        Self { cfg, hash, format }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn ensure_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.cfg.out).map_err(|e| CliError::io(&self.cfg.out, e))
    }

    fn write(&self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.out(name);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<String, CliError> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(name, &text)?;
        Ok(text)
    }

    /// CSV with the config hash as a leading comment line.
    fn write_csv_table(&self, name: &str, table: &str) -> Result<String, CliError> {
        let text = format!("# config_hash={}\n{table}", self.hash);
        self.write(name, &text)?;
        Ok(text)
    }
}

fn trace_dir(out: &Path) -> PathBuf {
    out.join("traces")
}

fn trace_name(run: usize) -> String {
    format!("run_{run:05}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub events: usize,
    pub read_volume: u64,
    pub write_volume: u64,
    /// Distinct event sizes, ascending.
    pub event_sizes: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub binpack: Vec<BinPackReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub config_hash: String,
    pub network: String,
    pub runs: Vec<RunSummary>,
}

pub fn simulate(ctx: &Context) -> Result<String, CliError> {
    let sc = Scenario::from_config(&ctx.cfg)?;
    let runs = sc.generate()?;
    let dir = trace_dir(&ctx.cfg.out);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut summaries = Vec::with_capacity(runs.len());
    for (r, ev) in runs.iter().zip(sc.observed(&runs)) {
        let p = dir.join(trace_name(r.run));
        let f = fs::File::create(&p).map_err(|e| CliError::io(&p, e))?;
        write_csv(BufWriter::new(f), &ev)?;
        let c = cdtv(&ev)?;
        let mut sizes: Vec<u32> = ev.iter().map(|e| e.size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        summaries.push(RunSummary {
            run: r.run,
            seed: sc.run_seed(r.run),
            events: ev.len(),
            read_volume: c.read_volume,
            write_volume: c.write_volume,
            event_sizes: sizes,
            binpack: r.binpack.clone(),
        });
    }
    let report = SimulateReport {
        config_hash: ctx.hash.clone(),
        network: sc.net.name.clone(),
        runs: summaries,
    };
    let json = ctx.write_json("simulate.json", &report)?;
    let mut table = String::from("run,seed,events,read_volume,write_volume\n");
    for r in &report.runs {
        table.push_str(&format!(
            "{},{},{},{},{}\n",
            r.run, r.seed, r.events, r.read_volume, r.write_volume
        ));
    }
    let csv = ctx.write_csv_table("simulate.csv", &table)?;
    Ok(match ctx.format {
        Format::Json => json,
        Format::Csv => csv,
    })
}

/// Traces written by `simulate`, in run order.
pub fn load_traces(out: &Path, runs: usize) -> Result<Vec<Vec<TraceEvent>>, CliError> {
    let dir = trace_dir(out);
    (0..runs)
        .map(|r| {
            let p = dir.join(trace_name(r));
            let f = fs::File::open(&p).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    CliError::Config(format!(
                        "missing trace {}; run `simulate` with this config first",
                        p.display()
                    ))
                } else {
                    CliError::io(&p, e)
                }
            })?;
            Ok(read_csv(BufReader::new(f))?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub attacks: Vec<AttackKind>,
    pub verdict: Verdict,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub config_hash: String,
    /// Broken when any component recovered its target.
    pub verdict: Verdict,
    pub expect: Option<Verdict>,
    pub truth_volumes: Vec<f64>,
    pub components: Vec<Component>,
    pub reports: Vec<AttackReport>,
}

fn volume_verdict(r: &AttackReport, truth: &[f64], tol: f64) -> (Verdict, String) {
    if r.layers.len() != truth.len() {
        return (
            Verdict::Held,
            format!(
                "{} layers estimated, {} present",
                r.layers.len(),
                truth.len()
            ),
        );
    }
    let worst = r
        .layers
        .iter()
        .zip(truth)
        .map(|(l, &t)| (l.volume - t).abs() / t.max(1.0))
        .fold(0.0, f64::max);
    let v = if worst <= tol {
        Verdict::Broken
    } else {
        Verdict::Held
    };
    (
        v,
        format!("largest relative volume error {worst:.4} (tolerance {tol})"),
    )
}

pub fn attack(ctx: &Context) -> Result<(AttackOutcome, String), CliError> {
    let spec = ctx
        .cfg
        .attacks
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no `attacks` section".into()))?;
    let sc = Scenario::from_config(&ctx.cfg)?;
    let truth: Vec<f64> = ss_attack(&[sc.ground_truth()?.events])?
        .layers
        .iter()
        .map(|l| l.volume)
        .collect();
    let has = |k: AttackKind| spec.list.contains(&k);
    let mut components = Vec::new();
    let mut reports = Vec::new();

    if has(AttackKind::Ss) || has(AttackKind::Si) || has(AttackKind::Kk) {
        let traces = load_traces(&ctx.cfg.out, sc.spec.runs)?;
        let mut used = Vec::new();
        let mut r = if has(AttackKind::Si) {
            used.push(AttackKind::Si);
            si_attack(&traces, sc.spec.observability.values, spec.prior)
        } else {
            used.push(AttackKind::Ss);
            ss_attack(&traces)?
        };
        reports.push(r.clone());
        if has(AttackKind::Kk) {
            used.push(AttackKind::Kk);
            r = kk_attack(&r, &spec.leaked);
            reports.push(r.clone());
        }
        let (verdict, detail) = volume_verdict(&r, &truth, spec.tolerance);
        components.push(Component {
            attacks: used,
            verdict,
            detail,
        });
    }

    if has(AttackKind::HuffDuff) {
        let victim = sc.victim();
        let true_s = sc.net.layers[0].shape.s;
        let c = match huffduff_attack(victim.as_ref(), &HuffDuffConfig::default()) {
            Ok(r) => {
                let got = r.layers[0].filter_s;
                reports.push(r);
                Component {
                    attacks: vec![AttackKind::HuffDuff],
                    verdict: if got == Some(true_s) {
                        Verdict::Broken
                    } else {
                        Verdict::Held
                    },
                    detail: format!("inferred S {got:?}, true S {true_s}"),
                }
            }
            Err(AttackError::Inapplicable(why)) => Component {
                attacks: vec![AttackKind::HuffDuff],
                verdict: Verdict::Held,
                detail: format!("not applicable: {why}"),
            },
            Err(e) => return Err(e.into()),
        };
        components.push(c);
    }

    if has(AttackKind::ReverseEngg) {
        let traces = load_traces(&ctx.cfg.out, 1)?;
        let r = reverse_engg_attack(&traces[0], &spec.reverse.unwrap_or_default())?;
        let unique = r.layers.len() == sc.net.layers.len()
            && r.layers.iter().zip(&sc.net.layers).all(|(l, t)| {
                l.shape_count == Some(1)
                    && l.shapes.first().is_some_and(|c| {
                        (c.c, c.h, c.k, c.r)
                            == (
                                t.shape.c as u64,
                                t.shape.h as u64,
                                t.shape.k as u64,
                                t.shape.r as u64,
                            )
                    })
            });
        let counts: Vec<u64> = r
            .layers
            .iter()
            .map(|l| l.shape_count.unwrap_or(0))
            .collect();
        reports.push(r);
        components.push(Component {
            attacks: vec![AttackKind::ReverseEngg],
            verdict: if unique {
                Verdict::Broken
            } else {
                Verdict::Held
            },
            detail: format!("consistent geometries per layer {counts:?}"),
        });
    }

    let verdict = if components.iter().any(|c| c.verdict == Verdict::Broken) {
        Verdict::Broken
    } else {
        Verdict::Held
    };
    let outcome = AttackOutcome {
        config_hash: ctx.hash.clone(),
        verdict,
        expect: spec.expect,
        truth_volumes: truth,
        components,
        reports,
    };
    ctx.ensure_out()?;
    let json = ctx.write_json("attack.json", &outcome)?;
    let mut table = String::from("attacks,verdict,detail\n");
    for c in &outcome.components {
        let names: Vec<String> = c.attacks.iter().map(|k| attack_name(*k)).collect();
        table.push_str(&format!(
            "{},{},\"{}\"\n",
            names.join("+"),
            c.verdict,
            c.detail
        ));
    }
    let csv = ctx.write_csv_table("attack.csv", &table)?;
    let text = match ctx.format {
        Format::Json => json,
        Format::Csv => csv,
    };
    Ok((outcome, text))
}

fn attack_name(k: AttackKind) -> String {
    serde_json::to_value(k)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Fails with an expectation error when the verdict contradicts `expect`.
pub fn check_expectation(o: &AttackOutcome) -> Result<(), CliError> {
    match o.expect {
        Some(e) if e != o.verdict => Err(CliError::Expectation {
            expected: e.to_string(),
            got: o.verdict.to_string(),
        }),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpaceReport {
    pub config_hash: String,
    pub target: searchspace::Target,
    pub points: Vec<searchspace::SweepPoint>,
    /// Log10 size with no noise, no compression and the exact volume observed.
    pub exact_log10_size: f64,
}

pub fn searchspace(ctx: &Context) -> Result<String, CliError> {
    let spec = ctx.cfg.searchspace.clone().unwrap_or_default();
    let sc = Scenario::from_config(&ctx.cfg)?;
    let key = match sc.cm {
        Cm::Neuroplug(k) => k,
        _ => {
            return Err(CliError::Config(
                "searchspace needs a neuroplug scenario".into(),
            ))
        }
    };
    let target = searchspace::target(&sc.workload, key, &spec)?;
    let points = searchspace::sweep(&target, &spec)?;
    let exact = searchspace::ranks(
        &target,
        0.0,
        None,
        &crate::config::SearchSpaceSpec {
            alpha_floor: 0.0,
            ..spec.clone()
        },
    )?;
    let report = SearchSpaceReport {
        config_hash: ctx.hash.clone(),
        target,
        points,
        exact_log10_size: accel_leak::mellin::search_space_size(&exact),
    };
    ctx.ensure_out()?;
    let json = ctx.write_json("searchspace.json", &report)?;
    let csv = ctx.write_csv_table("searchspace.csv", &searchspace::to_csv(&report.points))?;
    Ok(match ctx.format {
        Format::Json => json,
        Format::Csv => csv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub config_hash: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

pub fn metrics(ctx: &Context) -> Result<String, CliError> {
    let spec = ctx.cfg.metrics.clone().unwrap_or_default();
    let report = battery::battery(&spec)?;
    ctx.ensure_out()?;
    let csv = ctx.write_csv_table("metrics.csv", &battery::to_csv(&report))?;
    let json = ctx.write_json(
        "metrics.json",
        &MetricsFile {
            config_hash: ctx.hash.clone(),
            report,
        },
    )?;
    Ok(match ctx.format {
        Format::Json => json,
        Format::Csv => csv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub file: String,
    pub config_hash: String,
    /// Written by a different config than the current one.
    pub stale: bool,
    pub summary: String,
}

/// Collects whichever reports exist in the output directory.
pub fn report(ctx: &Context) -> Result<String, CliError> {
    let mut entries = Vec::new();
    for name in [
        "simulate.json",
        "attack.json",
        "searchspace.json",
        "metrics.json",
    ] {
        let p = ctx.out(name);
        let Ok(text) = fs::read_to_string(&p) else {
            continue;
        };
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Parse {
            path: p.clone(),
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        let hash = v["config_hash"].as_str().unwrap_or_default().to_string();
        let summary = match name {
            "simulate.json" => format!("{} runs", v["runs"].as_array().map_or(0, Vec::len)),
            "attack.json" => format!("verdict {}", v["verdict"].as_str().unwrap_or("?")),
            "searchspace.json" => format!(
                "{} sweep points",
                v["points"].as_array().map_or(0, Vec::len)
            ),
            _ => format!("{} metric rows", v["rows"].as_array().map_or(0, Vec::len)),
        };
        entries.push(ReportEntry {
            file: name.to_string(),
            stale: hash != ctx.hash,
            config_hash: hash,
            summary,
        });
    }
    if entries.is_empty() {
        return Err(CliError::Config(format!(
            "no reports under {}; run another subcommand first",
            ctx.cfg.out.display()
        )));
    }
    let json = ctx.write_json("report.json", &entries)?;
    let mut table = String::from("file,config_hash,stale,summary\n");
    for e in &entries {
        table.push_str(&format!(
            "{},{},{},{}\n",
            e.file, e.config_hash, e.stale, e.summary
        ));
    }
    Ok(match ctx.format {
        Format::Json => json,
        Format::Csv => format!("# config_hash={}\n{table}", ctx.hash),
    })
}
