use bellforge_core::bellkit::row_rng;
use bellforge_core::linalg::{identity, max_abs_diff, min_eigenvalue, CMatrix};
use bellforge_core::pbt::{build_pbt_povm, classical_cost, entanglement_fidelity_of, entanglement_fidelity_sampled};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Mode, Params, RunConfig};
use crate::error::CliError;
use crate::report::{cell, CsvTable, Finished, Method, Num};

/// Completeness and positivity limits for the measurement.
pub const COMPLETENESS_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
struct Row {
    n: usize,
    d: usize,
    entanglement_fidelity: Num,
    average_fidelity: Num,
    bound: Num,
    bound_vacuous: bool,
    bound_holds: bool,
    completeness_defect: Num,
    min_eigenvalue: Num,
    classical_bits: Num,
}

#[derive(Debug, Clone, Serialize)]
struct Results {
    rows: Vec<Row>,
    all_bounds_hold: bool,
}

fn bench_row(cfg: &RunConfig, d: usize, n: usize, index: usize) -> Result<Row, CliError> {
    let meas = build_pbt_povm(n, d)?;
    let elements = meas.elements.elements();
    let sum = elements
        .iter()
        .fold(CMatrix::zeros(meas.dim(), meas.dim()), |acc, e| acc + e);
    let completeness_defect = max_abs_diff(&sum, &identity(meas.dim()));
    let min_eig = elements.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min);
    let (fe, method) = match cfg.mode {
        Mode::Exact => (entanglement_fidelity_of(&meas)?, Method::Exact),
        Mode::Sampled => {
            let mut rng = row_rng(cfg.seed.unwrap_or_default(), index);
            let trials = usize::try_from(cfg.trials).unwrap_or(usize::MAX);
            (entanglement_fidelity_sampled(&meas, trials, &mut rng)?, Method::Sampled)
        }
    };
    let average = (d as f64 * fe + 1.0) / (d as f64 + 1.0);
    let bound = 1.0 - (d * d) as f64 / n as f64;
    let vacuous = bound <= 0.0;
    Ok(Row {
        n,
        d,
        entanglement_fidelity: Num::new(fe, method),
        average_fidelity: Num::new(average, method),
        bound: Num::new(bound, Method::ClosedForm),
        bound_vacuous: vacuous,
        bound_holds: vacuous || average >= bound - cfg.tolerance,
        completeness_defect: Num::new(completeness_defect, Method::Exact),
        min_eigenvalue: Num::new(min_eig, Method::Exact),
        classical_bits: Num::new(classical_cost(n), Method::ClosedForm),
    })
}

pub fn pbt_bench(cfg: &RunConfig) -> Result<Finished, CliError> {
    let Params::PbtBench { d, ports } = &cfg.params else {
        return Err(CliError::Usage("pbt-bench parameters missing".into()));
    };
    let rows = ports
        .par_iter()
        .enumerate()
        .map(|(i, &n)| bench_row(cfg, *d, n, i))
        .collect::<Result<Vec<_>, _>>()?;

    let mut failures = Vec::new();
    let mut csv = CsvTable::new(&[
        "n",
        "d",
        "entanglement_fidelity",
        "average_fidelity",
        "bound",
        "bound_vacuous",
        "bound_holds",
        "method",
    ]);
    for r in &rows {
        if !r.bound_holds {
            failures.push(format!(
                "N={}: average fidelity {} below 1 - d^2/N = {}",
                r.n, r.average_fidelity.value, r.bound.value
            ));
        }
        if r.completeness_defect.value > COMPLETENESS_TOL || r.min_eigenvalue.value < -POSITIVITY_TOL {
            failures.push(format!(
                "N={}: measurement defect {:e}, min eigenvalue {:e}",
                r.n, r.completeness_defect.value, r.min_eigenvalue.value
            ));
        }
        csv.push(vec![
            r.n.to_string(),
            r.d.to_string(),
            cell(r.entanglement_fidelity.value),
            cell(r.average_fidelity.value),
            cell(r.bound.value),
            r.bound_vacuous.to_string(),
            r.bound_holds.to_string(),
            r.entanglement_fidelity.method.label().into(),
        ]);
    }
    let all = rows.iter().all(|r| r.bound_holds);
    let mut done = Finished::new(
        Results {
            rows,
            all_bounds_hold: all,
        },
        csv,
    )?;
    done.failures = failures;
    Ok(done)
}
