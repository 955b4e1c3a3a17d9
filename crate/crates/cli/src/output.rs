//! CSV output. Every float is written with 17 significant digits so a
//! reader recovers the exact bits.
//!
//! Row `k` of a trajectory file holds point `k`. Pair columns (`E_plus`,
//! `E_minus`, `constraint_res`, `momentum_*`) describe the pair starting at
//! point `k`; `lambda_*` is the multiplier at interior point `k`, found by the
//! step that produced point `k + 1`; `newton_iters` and `residual` belong to
//! the step that produced point `k`. Cells with no value are empty.

use std::io::Write;

use nhvi_core::reference::Rung;
use nhvi_core::{NonholonomicSystem, Trajectory};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trajectory_header(sys: &NonholonomicSystem) -> Vec<String> {
    let n = sys.dim();
    let m = sys.constraint_count();
    let p = sys.action.as_ref().map_or(0, |a| a.algebra_dim());
    let mut cols = vec!["k".to_string(), "t".to_string()];
    cols.extend((1..=n).map(|i| format!("q_{i}")));
    cols.extend((1..=m).map(|a| format!("lambda_{a}")));
    cols.extend(["E_plus", "E_minus", "constraint_res"].map(String::from));
    cols.extend((1..=p).map(|i| format!("momentum_{i}")));
    cols.extend(["newton_iters", "residual"].map(String::from));
    cols
}

pub fn trajectory_rows(sys: &NonholonomicSystem, traj: &Trajectory) -> Vec<Vec<String>> {
    let m = sys.constraint_count();
    let p = sys.action.as_ref().map_or(0, |a| a.algebra_dim());
    let empty = |count: usize| std::iter::repeat(String::new()).take(count);
    traj.points()
        .iter()
        .enumerate()
        .map(|(k, pt)| {
            let mut row = vec![k.to_string(), fmt_f64(pt.t)];
            row.extend(pt.q.iter().map(|&x| fmt_f64(x)));
            match k.checked_sub(1).and_then(|j| traj.multipliers.get(j)) {
                Some(l) => row.extend(l.iter().map(|&x| fmt_f64(x))),
                None => row.extend(empty(m)),
            }
            match traj.diagnostics.get(k) {
                Some(d) => {
                    row.extend([d.e_plus, d.e_minus, d.constraint_residual].map(fmt_f64));
                    row.extend(d.momentum.iter().map(|&x| fmt_f64(x)));
                }
                None => row.extend(empty(3 + p)),
            }
            match k.checked_sub(2).and_then(|j| traj.solver_stats.get(j)) {
                Some(s) => row.extend([s.iterations.to_string(), fmt_f64(s.residual_norm)]),
                None => row.extend(empty(2)),
            }
            row
        })
        .collect()
}

pub fn write_trajectory<W: Write>(out: W, sys: &NonholonomicSystem, traj: &Trajectory) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(sys))?;
    for row in trajectory_rows(sys, traj) {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rungs<W: Write>(out: W, rungs: &[Rung]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["h", "error", "steps", "log_h", "log_error"])?;
    for r in rungs {
        w.write_record([fmt_f64(r.h), fmt_f64(r.error), r.steps.to_string(), fmt_f64(r.h.ln()), fmt_f64(r.error.ln())])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }
}
