//! The four subcommands.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use dfsq::design::{design, DesignProblem, DesignResult};
use dfsq::distortion::{simulate, DistortionReport};
use dfsq::dontcare::{
    detect, dontcare_quantizer, fr_distortion_dontcare, simulate_dontcare, vr_distortion_amplified, DontCareDesign,
    DontCareSpec,
};
use dfsq::rate::{output_entropy, rate_report, resolution_for_rate, RateReport, ResolutionSearch};
use dfsq::report::{
    codebook_table, design_summary_table, design_table, distortion_table, dontcare_table, num, rate_table,
    sweep_table, Table,
};
use dfsq::{Error, FunctionModel, Regime, SensitivityProfile, SourceModel};

use crate::config::{Experiment, SchemaError};

/// Largest relative gap between simulation and prediction that `verify`
/// accepts for the configured operating points.
pub const PREDICTION_TOLERANCE: f64 = 0.1;

#[derive(Debug)]
pub enum Failure {
    Schema(SchemaError),
    Library(Error),
    Io(String),
    Checks(usize),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Schema(_) | Failure::Library(Error::Config(_)) => 2,
            Failure::Library(_) => 3,
            Failure::Io(_) | Failure::Checks(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            Failure::Schema(e) => write!(f, "config error at {e}"),
            Failure::Library(e) => write!(f, "{e}"),
            Failure::Io(e) => write!(f, "i/o error: {e}"),
            Failure::Checks(k) => write!(f, "{k} check(s) failed"),
        }
    }
}

impl From<SchemaError> for Failure {
    fn from(e: SchemaError) -> Self {
        Failure::Schema(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Library(e)
    }
}

/// A validated experiment with command-line overrides applied.
#[derive(Debug, Clone)]
pub struct Run {
    pub experiment: Experiment,
    pub samples: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Run {
    fn write(&self, name: &str, table: &Table) -> Result<PathBuf, Failure> {
        std::fs::create_dir_all(&self.out).map_err(|e| Failure::Io(format!("{}: {e}", self.out.display())))?;
        let path = self.out.join(name);
        table.write(&path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// A design at one rate, either regular or with don't-care intervals.
enum Point {
    Regular {
        design: DesignResult,
        search: ResolutionSearch,
    },
    DontCare {
        specs: Vec<DontCareSpec>,
        profiles: Vec<SensitivityProfile>,
        alpha: Vec<f64>,
        dc: DontCareDesign,
    },
}

struct Instance {
    n: usize,
    source: SourceModel,
    g: Arc<dyn FunctionModel>,
}

impl Instance {
    fn new(exp: &Experiment, n: usize) -> Result<Self, Failure> {
        let (source, g) = exp.instance(n)?;
        Ok(Self { n, source, g })
    }

    fn point(&self, exp: &Experiment, rbar: f64) -> Result<Point, Failure> {
        let total = rbar * self.n as f64;
        let mut problem = DesignProblem::new(self.source.clone(), self.g.clone(), exp.regime, total);
        problem.profile_options = exp.profile_options();
        match design(&problem) {
            Ok(design) => {
                let search = resolution_for_rate(exp.regime, &design.densities, &self.source, &design.alpha, total)?;
                Ok(Point::Regular { design, search })
            }
            Err(Error::DontCare { .. }) => {
                let profiles = problem.profiles()?;
                let specs = profiles
                    .iter()
                    .enumerate()
                    .map(|(j, p)| detect(p, self.source.marginal(j)))
                    .collect::<dfsq::Result<Vec<_>>>()?;
                let alpha = vec![1.0 / self.n as f64; self.n];
                let dc = dontcare_quantizer(exp.regime, &specs, &profiles, &self.source, &alpha, total)?;
                Ok(Point::DontCare { specs, profiles, alpha, dc })
            }
            Err(e) => Err(e.into()),
        }
    }

    fn simulate(&self, exp: &Experiment, point: &Point, rbar: f64, samples: usize, seed: u64) -> Result<(DistortionReport, RateReport), Failure> {
        let total = rbar * self.n as f64;
        match point {
            Point::Regular { design, search } => {
                let dq = design.quantizer(search.k)?;
                let emp = simulate(&dq, &self.source, self.g.as_ref(), samples, seed)?;
                let d_hr = design.distortion_at(search.rate);
                let report = DistortionReport::new(exp.regime, search.rate, dq.resolutions(), d_hr, &emp);
                Ok((report, rate_report(exp.regime, &dq, &design.densities, &self.source)?))
            }
            Point::DontCare { specs, profiles, alpha, dc } => {
                let run = simulate_dontcare(
                    exp.regime,
                    specs,
                    profiles,
                    &self.source,
                    self.g.as_ref(),
                    alpha,
                    total,
                    samples,
                    seed,
                )?;
                let dq = &dc.quantizer;
                let exact = match exp.regime {
                    Regime::Fixed => dq.product_cells().log2(),
                    _ => (0..self.n).map(|j| output_entropy(&dq.parts()[j], &self.source, j)).sum(),
                };
                let rate = RateReport {
                    regime: exp.regime,
                    k: dq.total_resolution(),
                    exact_bits: exact,
                    hr_bits: total,
                    gap: exact - total,
                };
                Ok((run.report, rate))
            }
        }
    }
}

/// Append `table` to `acc` with a leading `rbar` column.
fn append(acc: &mut Option<Table>, rbar: f64, table: Table) {
    let t = acc.get_or_insert_with(|| {
        let mut header = vec!["rbar".to_string()];
        header.extend(table.header.iter().cloned());
        Table { header, rows: Vec::new() }
    });
    for row in table.rows {
        let mut r = vec![num(rbar)];
        r.extend(row);
        t.push(r);
    }
}

fn dontcare_design_table(specs: &[DontCareSpec], alpha: &[f64], dc: &DontCareDesign, regime: Regime) -> Table {
    let mut t = Table::new(&["var", "regime", "alpha", "p_a", "rho", "indicator_entropy", "complement_cells", "levels"]);
    for (j, s) in specs.iter().enumerate() {
        t.push(vec![
            j.to_string(),
            regime.to_string(),
            num(alpha[j]),
            num(s.p_a),
            num(s.rho),
            num(s.indicator_entropy),
            dc.complement_cells[j].to_string(),
            dc.quantizer.parts()[j].levels().to_string(),
        ]);
    }
    t
}

pub fn run_design(run: &Run) -> Result<Vec<PathBuf>, Failure> {
    let exp = &run.experiment;
    let inst = Instance::new(exp, exp.source.n())?;
    let (mut designs, mut summaries, mut zones) = (None, None, None);
    let mut last = None;
    for &rbar in &exp.rates {
        let point = inst.point(exp, rbar)?;
        match &point {
            Point::Regular { design, search } => {
                append(&mut designs, rbar, design_table(design));
                let mut s = design_summary_table(design);
                s.header.extend(["k".to_string(), "resolutions".to_string(), "search_rate".to_string()]);
                let res = search.resolutions.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
                s.rows[0].extend([num(search.k), res, num(search.rate)]);
                append(&mut summaries, rbar, s);
            }
            Point::DontCare { specs, profiles, alpha, dc } => {
                let total = rbar * inst.n as f64;
                append(&mut designs, rbar, dontcare_design_table(specs, alpha, dc, exp.regime));
                let (predicted, warnings) = match exp.regime {
                    Regime::Variable => {
                        let a = vr_distortion_amplified(specs, profiles, &inst.source, alpha, total)?;
                        (a.value, a.warnings)
                    }
                    _ => {
                        let res = dc.quantizer.resolutions();
                        (fr_distortion_dontcare(specs, profiles, &dc.densities, &inst.source, &res)?, Vec::new())
                    }
                };
                let mut s = Table::new(&["regime", "total_rate", "predicted", "warnings"]);
                s.push(vec![exp.regime.to_string(), num(total), num(predicted), warnings.join("; ")]);
                append(&mut summaries, rbar, s);
                append(&mut zones, rbar, dontcare_table(specs));
            }
        }
        last = Some(point);
    }
    let mut written = vec![
        run.write("design.csv", &designs.expect("at least one rate"))?,
        run.write("design_summary.csv", &summaries.expect("at least one rate"))?,
    ];
    if let Some(z) = zones {
        written.push(run.write("dontcare.csv", &z)?);
    }
    let parts = match last.expect("at least one rate") {
        Point::Regular { design, search } => design.quantizer(search.k)?.parts().to_vec(),
        Point::DontCare { dc, .. } => dc.quantizer.parts().to_vec(),
    };
    for (j, q) in parts.iter().enumerate() {
        written.push(run.write(&format!("codebook_{j}.csv"), &codebook_table(q))?);
    }
    Ok(written)
}

fn simulate_all(run: &Run, ns: &[usize]) -> Result<Vec<(f64, usize, DistortionReport, RateReport)>, Failure> {
    let exp = &run.experiment;
    let mut rows = Vec::new();
    for &n in ns {
        let inst = Instance::new(exp, n)?;
        for &rbar in &exp.rates {
            let point = inst.point(exp, rbar)?;
            let (d, r) = inst.simulate(exp, &point, rbar, run.samples, run.seed)?;
            rows.push((rbar, n, d, r));
        }
    }
    Ok(rows)
}

pub fn run_simulate(run: &Run) -> Result<Vec<PathBuf>, Failure> {
    let rows = simulate_all(run, &[run.experiment.source.n()])?;
    let (mut dist, mut rate) = (None, None);
    for (rbar, _, d, r) in rows {
        append(&mut dist, rbar, distortion_table(&[d]));
        append(&mut rate, rbar, rate_table(&[r]));
    }
    Ok(vec![
        run.write("distortion.csv", &dist.expect("at least one rate"))?,
        run.write("rate.csv", &rate.expect("at least one rate"))?,
    ])
}

pub fn run_sweep(run: &Run) -> Result<Vec<PathBuf>, Failure> {
    let rows: Vec<(f64, usize, DistortionReport)> =
        simulate_all(run, &run.experiment.n_list())?.into_iter().map(|(rbar, n, d, _)| (rbar, n, d)).collect();
    Ok(vec![run.write("sweep.csv", &sweep_table(&rows, "rbar"))?])
}

/// One line of the `verify` table.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// The library's property suites, then the configured operating points
/// against their high-resolution predictions.
pub fn run_verify(seed: u64, run: Option<&Run>) -> Result<Vec<Line>, Failure> {
    let mut lines: Vec<Line> = dfsq::verify::run_all(seed)?
        .into_iter()
        .map(|c| Line { name: c.name, passed: c.passed, detail: c.detail })
        .collect();
    let Some(run) = run else {
        return Ok(lines);
    };
    for (rbar, n, d, _) in simulate_all(run, &[run.experiment.source.n()])? {
        let gap = (d.ratio - 1.0).abs();
        lines.push(Line {
            name: format!("prediction n={n} rbar={rbar}"),
            passed: gap <= PREDICTION_TOLERANCE,
            detail: format!("D_emp/D_hr = {:.4} ± {:.4}", d.ratio, d.stderr / d.d_hr),
        });
    }
    Ok(lines)
}

pub fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}
