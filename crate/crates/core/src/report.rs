//! Plain CSV tables. Numbers are written with 17 significant digits and
//! lines end in `\n`, so identical runs give identical bytes.

use std::io;
use std::path::Path;

use crate::chatting::ChatComparison;
use crate::compander::ScalarQuantizer;
use crate::design::DesignResult;
use crate::distortion::DistortionReport;
use crate::dontcare::DontCareSpec;
use crate::equivalence::{EquivalenceScan, FloorSweep};
use crate::rate::RateReport;

/// `x` in `{:.16e}` form.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// A header and rows of already formatted cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        for row in std::iter::once(&self.header).chain(&self.rows) {
            w.write_record(row).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("writing to memory")).expect("cells are UTF-8")
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

/// One row per variable.
pub fn design_table(d: &DesignResult) -> Table {
    let mut t = Table::new(&[
        "var",
        "regime",
        "alpha",
        "rate",
        "constant",
        "mean_sq_ratio",
        "e_log_lambda",
        "entropy",
    ]);
    for j in 0..d.n() {
        t.push(vec![
            j.to_string(),
            d.regime.to_string(),
            num(d.alpha[j]),
            num(d.allocation.rates[j]),
            num(d.constants[j]),
            num(d.terms[j].mean_sq_ratio),
            num(d.terms[j].e_log_lambda),
            num(d.terms[j].entropy),
        ]);
    }
    t
}

/// Totals of a design.
pub fn design_summary_table(d: &DesignResult) -> Table {
    let mut t = Table::new(&["regime", "total_rate", "predicted", "joint_entropy", "warnings"]);
    t.push(vec![
        d.regime.to_string(),
        num(d.total_rate),
        num(d.predicted),
        num(d.joint_entropy),
        d.allocation.warnings.join("; "),
    ]);
    t
}

/// Cells of a scalar quantizer. Cells that are unions of intervals take one
/// row per interval.
pub fn codebook_table(q: &ScalarQuantizer) -> Table {
    let mut t = Table::new(&["cell", "lower", "upper", "codeword"]);
    for i in 0..q.levels() {
        let c = num(q.representative(i));
        for (a, b) in q.regions(i) {
            t.push(vec![i.to_string(), num(a), num(b), c.clone()]);
        }
    }
    t
}

fn join_usize(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

pub fn distortion_table(reports: &[DistortionReport]) -> Table {
    let mut t = Table::new(&[
        "regime",
        "rate",
        "resolutions",
        "d_hr",
        "d_emp",
        "stderr",
        "ratio",
        "flagged_fraction",
    ]);
    for r in reports {
        t.push(vec![
            r.regime.to_string(),
            num(r.rate),
            join_usize(&r.resolutions),
            num(r.d_hr),
            num(r.d_emp),
            num(r.stderr),
            num(r.ratio),
            num(r.flagged_fraction),
        ]);
    }
    t
}

pub fn rate_table(reports: &[RateReport]) -> Table {
    let mut t = Table::new(&["regime", "k", "exact_bits", "hr_bits", "gap"]);
    for r in reports {
        t.push(vec![r.regime.to_string(), num(r.k), num(r.exact_bits), num(r.hr_bits), num(r.gap)]);
    }
    t
}

/// Sweep rows: the swept parameter, the number of variables, and a report.
pub fn sweep_table(rows: &[(f64, usize, DistortionReport)], parameter: &str) -> Table {
    let mut t = Table::new(&[
        parameter,
        "n",
        "regime",
        "rate",
        "d_hr",
        "d_emp",
        "stderr",
        "ratio",
        "normalized_hr",
        "normalized",
    ]);
    for (p, n, r) in rows {
        // 12 D 2^{2R/n}: distortion in units of ordinary uniform quantization.
        let scale = 12.0 * (2.0 * r.rate / *n as f64).exp2();
        t.push(vec![
            num(*p),
            n.to_string(),
            r.regime.to_string(),
            num(r.rate),
            num(r.d_hr),
            num(r.d_emp),
            num(r.stderr),
            num(r.ratio),
            num(scale * r.d_hr),
            num(scale * r.d_emp),
        ]);
    }
    t
}

pub fn dontcare_table(specs: &[DontCareSpec]) -> Table {
    let mut t = Table::new(&["var", "lower", "upper", "probability", "p_a", "indicator_entropy"]);
    for s in specs {
        for (&(a, b), p) in s.zones.iter().zip(&s.zone_probs) {
            t.push(vec![s.var.to_string(), num(a), num(b), num(*p), num(s.p_a), num(s.indicator_entropy)]);
        }
    }
    t
}

/// Fitted slope row appended to a don't-care sweep.
pub fn slope_table(slope: f64, intercept: f64) -> Table {
    let mut t = Table::new(&["slope", "intercept"]);
    t.push(vec![num(slope), num(intercept)]);
    t
}

pub fn chat_table(rows: &[(f64, ChatComparison)]) -> Table {
    let mut t = Table::new(&[
        "parameter",
        "regime",
        "d1_chat_hr",
        "d1_nochat_hr",
        "d1_chat_emp",
        "d1_nochat_emp",
        "ratio",
        "ratio_stderr",
    ]);
    for (p, c) in rows {
        t.push(vec![
            num(*p),
            c.chat.regime.to_string(),
            num(c.chat.d_hr),
            num(c.nochat.d_hr),
            num(c.chat.d_emp),
            num(c.nochat.d_emp),
            num(c.ratio),
            num(c.ratio_stderr),
        ]);
    }
    t
}

pub fn scan_table(scan: &EquivalenceScan) -> Table {
    let mut t = Table::new(&["s", "t", "v", "stderr"]);
    for (s, u, v) in &scan.pairs {
        t.push(vec![num(*s), num(*u), num(v.mean), num(v.stderr)]);
    }
    t
}

pub fn floor_table(label: &str, sweep: &FloorSweep) -> Table {
    let mut t = Table::new(&["family", "rate", "resolution", "distortion", "stderr"]);
    for p in &sweep.points {
        t.push(vec![label.to_string(), num(p.rate), p.resolution.to_string(), num(p.distortion.mean), num(p.distortion.stderr)]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_and_lf() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x,y".into(), num(2.0)]);
        assert_eq!(t.to_csv(), "a,b\n\"x,y\",2.0000000000000000e0\n");
    }
}
