//! CSV and manifest writers. Every number is printed with 12 significant digits
//! and nothing time-dependent is recorded, so reruns are byte-identical.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use dshape_core::traffic::write_arrivals_csv;
use dshape_core::{Da, DaSchedule, GapReport, Scenario, SlotReport, TracePoint};

use crate::error::{HarnessError, Result};
use crate::experiment::{Case, IterationPoint, RepOutcome, Settings, SweepPoint};

/// `x` with 12 significant digits, fixed notation for moderate magnitudes.
pub fn sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if !(-5..12).contains(&exp) {
        return sci;
    }
    let fixed = format!("{:.*}", (11 - exp).max(0) as usize, x);
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(sig).unwrap_or_default()
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    pub settings: Settings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arrivals: Option<&'a str>,
    pub scenario: &'a Scenario,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, seed: u64, settings: Settings, scenario: &'a Scenario) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            reps: None,
            settings,
            case: None,
            values: None,
            arrivals: None,
            scenario,
        }
    }
}

/// One experiment's output directory.
#[derive(Debug, Clone)]
pub struct OutputDir {
    path: PathBuf,
}

impl OutputDir {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        std::fs::create_dir_all(&path).map_err(|e| HarnessError::io(&path, e))?;
        Ok(Self { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn file(&self, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let p = self.path.join(name);
        let f = File::create(&p).map_err(|e| HarnessError::io(&p, e))?;
        Ok((p, BufWriter::new(f)))
    }

    pub fn write_csv<I>(&self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let (p, f) = self.file(name)?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| HarnessError::io(&p, e))
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<()> {
        let (p, mut f) = self.file("manifest.json")?;
        serde_json::to_writer_pretty(&mut f, manifest)?;
        use std::io::Write;
        writeln!(f).and_then(|_| f.flush()).map_err(|e| HarnessError::io(&p, e))
    }

    pub fn write_arrivals(&self, name: &str, das: &[Da]) -> Result<()> {
        let (_, f) = self.file(name)?;
        write_arrivals_csv(das, f)?;
        Ok(())
    }

    pub fn write_trace(&self, name: &str, points: &[TracePoint]) -> Result<()> {
        self.write_csv(
            name,
            &["iteration", "V", "max_change"],
            points
                .iter()
                .map(|p| vec![p.iteration.to_string(), sig(p.objective), opt(p.max_change)]),
        )
    }

    /// One row per slot: base, every DA's rate, and the average profile.
    pub fn write_schedule(&self, name: &str, base: &[f64], schedules: &[DaSchedule], average: &[f64]) -> Result<()> {
        let ids: Vec<String> = schedules.iter().map(|s| format!("da_{}", s.id)).collect();
        let mut header = vec!["t", "base"];
        header.extend(ids.iter().map(String::as_str));
        header.push("d");
        self.write_csv(
            name,
            &header,
            (0..base.len()).map(|t| {
                let mut row = vec![t.to_string(), sig(base[t])];
                row.extend(schedules.iter().map(|s| sig(s.profile[t])));
                row.push(sig(average[t]));
                row
            }),
        )
    }

    pub fn write_slots(&self, name: &str, reports: &[SlotReport]) -> Result<()> {
        self.write_csv(
            name,
            &["t", "V_horizon", "committed_d", "q_total", "locked_count", "arrivals", "resolved"],
            reports.iter().map(|r| {
                vec![
                    r.t.to_string(),
                    sig(r.v_horizon),
                    sig(r.committed_d),
                    sig(r.q_total),
                    r.locked_count.to_string(),
                    r.arrivals.to_string(),
                    r.resolved.to_string(),
                ]
            }),
        )
    }

    /// Per-repetition comparison of `case` against the offline reference.
    pub fn write_gaps(&self, name: &str, case: Case, outcomes: &[RepOutcome]) -> Result<()> {
        self.write_csv(
            name,
            &["rep", "seed", "arrivals", "V_case", "V_offline", "absolute_gap", "relative_gap"],
            outcomes.iter().map(|o| {
                let g = report(o, case);
                vec![
                    o.rep.to_string(),
                    o.seed.to_string(),
                    o.arrivals.to_string(),
                    sig(g.v_subject),
                    sig(g.v_reference),
                    sig(g.absolute_gap),
                    opt(g.relative_gap),
                ]
            }),
        )
    }

    /// Every objective of every repetition at every sweep point.
    pub fn write_sweep_runs(&self, name: &str, parameter: &str, points: &[SweepPoint]) -> Result<()> {
        self.write_csv(
            name,
            &[parameter, "rep", "seed", "arrivals", "case", "V"],
            points.iter().flat_map(|p| {
                p.outcomes.iter().flat_map(move |o| {
                    o.objectives.iter().map(move |(c, v)| {
                        vec![
                            sig(p.value),
                            o.rep.to_string(),
                            o.seed.to_string(),
                            o.arrivals.to_string(),
                            c.id().to_string(),
                            sig(*v),
                        ]
                    })
                })
            }),
        )
    }

    /// Mean relative gap and its standard error per sweep point and case.
    pub fn write_sweep_summary(&self, name: &str, parameter: &str, points: &[SweepPoint], cases: &[Case]) -> Result<()> {
        self.write_csv(
            name,
            &[parameter, "case", "reps", "mean_relative_gap", "se_relative_gap", "mean_absolute_gap"],
            points.iter().flat_map(|p| {
                cases.iter().map(move |&c| {
                    let (mean, se, abs) = aggregate(&p.outcomes, c);
                    vec![
                        sig(p.value),
                        c.id().to_string(),
                        p.outcomes.len().to_string(),
                        opt(mean),
                        opt(se),
                        sig(abs),
                    ]
                })
            }),
        )
    }

    pub fn write_iterations(&self, name: &str, points: &[IterationPoint]) -> Result<()> {
        self.write_csv(
            name,
            &["K", "seeds", "mean_V", "std_V", "min_V", "max_V"],
            points.iter().map(|p| {
                let min = p.objectives.iter().copied().fold(f64::INFINITY, f64::min);
                let max = p.objectives.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                vec![
                    p.iterations.to_string(),
                    p.objectives.len().to_string(),
                    sig(p.mean),
                    sig(p.std),
                    sig(min),
                    sig(max),
                ]
            }),
        )
    }
}

pub fn report(outcome: &RepOutcome, case: Case) -> GapReport {
    let v = |c| outcome.objective(c).unwrap_or(f64::NAN);
    dshape_core::gap_report(v(case), v(Case::Offline), None)
}

/// `(mean relative gap, its standard error, mean absolute gap)`. The relative
/// figures are undefined when any repetition has a flat reference.
pub fn aggregate(outcomes: &[RepOutcome], case: Case) -> (Option<f64>, Option<f64>, f64) {
    let reports: Vec<GapReport> = outcomes.iter().map(|o| report(o, case)).collect();
    let abs = reports.iter().map(|g| g.absolute_gap).sum::<f64>() / reports.len().max(1) as f64;
    let rel: Option<Vec<f64>> = reports.iter().map(|g| g.relative_gap).collect();
    match rel {
        Some(r) if !r.is_empty() => {
            let (m, se) = dshape_core::metrics::mean_and_se(&r);
            (Some(m), Some(se), abs)
        }
        _ => (None, None, abs),
    }
}
