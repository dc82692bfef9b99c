use bellforge_core::bellkit::{
    nonlinear_bell_check, one_way_correlations, one_way_linear_bell, qubit_lower_bound, BoxTable,
};
use rayon::prelude::*;
use serde::Serialize;

use super::{load, BitsOut, RatioNum};
use crate::config::{Params, RunConfig};
use crate::error::CliError;
use crate::report::{cell, CsvTable, Finished, Method, Num};

/// Most deterministic boxes the sweep enumerates.
pub const SWEEP_CAP: u64 = 1 << 20;

const TARGET_FORM: &str = "(1 - delta) * p_B + delta / 2";

#[derive(Debug, Clone, Serialize)]
struct Rigorous {
    delta: f64,
    lhs: Num,
    target: Num,
    rhs: BitsOut,
    holds: bool,
    pumping_rhs: Num,
    pumping_holds: bool,
}

#[derive(Debug, Clone, Serialize)]
struct Heuristic {
    lhs: Num,
    rhs: BitsOut,
    violated: bool,
}

#[derive(Debug, Clone, Serialize)]
struct QubitBound {
    bound: Num,
    qubit_cost: Num,
    consistent: bool,
}

#[derive(Debug, Clone, Serialize)]
struct Linear {
    k: usize,
    instances: usize,
    budget_bits: u32,
    value: Num,
    delta: Num,
    shifted: Num,
    ratio: RatioNum,
    violated: bool,
}

#[derive(Debug, Clone, Serialize)]
struct Sweep {
    boxes: u64,
    checks: u64,
    counterexamples: u64,
}

#[derive(Debug, Clone, Serialize)]
struct Results {
    p_a: Num,
    p_b: Num,
    success: Num,
    target_form: &'static str,
    rigorous: Vec<Rigorous>,
    heuristic: Heuristic,
    qubit_bound: QubitBound,
    linear: Vec<Linear>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lhv_sweep: Option<Sweep>,
}

fn deterministic_box(nx: usize, ny: usize, code: u64) -> BoxTable {
    let alpha: Vec<u8> = (0..nx).map(|x| ((code >> x) & 1) as u8).collect();
    let beta: Vec<u8> = (0..ny).map(|y| ((code >> (nx + y)) & 1) as u8).collect();
    BoxTable::deterministic(&alpha, &beta)
}

pub fn oneway(cfg: &RunConfig) -> Result<Finished, CliError> {
    let Params::Oneway {
        protocol,
        deltas,
        k,
        lhv_sweep,
    } = &cfg.params
    else {
        return Err(CliError::Usage("oneway parameters missing".into()));
    };
    let p = load(cfg, protocol)?;
    if p.moves().len() != 1 {
        return Err(CliError::Usage(format!(
            "oneway needs a single-message protocol, this one has {} moves",
            p.moves().len()
        )));
    }
    let truth = p.truth().clone();
    let (table, stats) = one_way_correlations(&p)?;
    let success = p.success_probability()?;

    let mut rigorous = Vec::with_capacity(deltas.len());
    let mut heuristic = None;
    for &delta in deltas {
        let v = nonlinear_bell_check(&stats, delta)?;
        heuristic.get_or_insert(Heuristic {
            lhs: Num::new(v.heuristic_lhs, Method::Exact),
            rhs: v.heuristic_rhs.into(),
            violated: v.heuristic_violated,
        });
        rigorous.push(Rigorous {
            delta,
            lhs: Num::new(v.lhs, Method::Exact),
            target: Num::new(v.target, Method::Exact),
            rhs: v.rhs.into(),
            holds: v.holds,
            pumping_rhs: Num::new(v.pumping_rhs, Method::Enumeration),
            pumping_holds: v.pumping_holds,
        });
    }
    let bound = qubit_lower_bound(&truth, success, deltas)?;
    let q = p.qubit_cost();

    let linear = k
        .iter()
        .map(|&k| {
            let r = one_way_linear_bell(&table, &stats, k)?;
            Ok(Linear {
                k,
                instances: r.instances,
                budget_bits: r.budget_bits,
                value: Num::new(r.lhs, Method::Exact),
                delta: Num::new(r.delta, Method::CcDerived),
                shifted: Num::new(r.shifted, Method::Exact),
                ratio: RatioNum::new(r.ratio, Method::CcDerived),
                violated: r.shifted > r.delta + cfg.tolerance,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut failures = Vec::new();
    let sweep = if *lhv_sweep {
        let (nx, ny) = (truth.nx(), truth.ny());
        let boxes = 1u64
            .checked_shl((nx + ny) as u32)
            .filter(|&b| (nx + ny) < 64 && b <= SWEEP_CAP)
            .ok_or_else(|| CliError::Cap(format!("2^{} deterministic boxes exceed {SWEEP_CAP}", nx + ny)))?;
        let bad = (0..boxes)
            .into_par_iter()
            .map(|code| {
                let stats = deterministic_box(nx, ny, code).stats(&truth);
                let mut bad = 0u64;
                for &delta in deltas {
                    if !nonlinear_bell_check(&stats, delta)?.holds {
                        bad += 1;
                    }
                }
                Ok(bad)
            })
            .collect::<Result<Vec<u64>, CliError>>()?
            .into_iter()
            .sum::<u64>();
        if bad > 0 {
            failures.push(format!("{bad} local boxes break the rigorous inequality"));
        }
        Some(Sweep {
            boxes,
            checks: boxes * deltas.len() as u64,
            counterexamples: bad,
        })
    } else {
        None
    };

    let mut csv = CsvTable::new(&["delta", "lhs", "target", "rhs", "holds", "pumping_rhs", "pumping_holds"]);
    for r in &rigorous {
        csv.push(vec![
            cell(r.delta),
            cell(r.lhs.value),
            cell(r.target.value),
            r.rhs.cell(),
            r.holds.to_string(),
            cell(r.pumping_rhs.value),
            r.pumping_holds.to_string(),
        ]);
    }
    let results = Results {
        p_a: Num::new(stats.p_a, Method::Exact),
        p_b: Num::new(stats.p_b, Method::Exact),
        success: Num::new(success, Method::Exact),
        target_form: TARGET_FORM,
        rigorous,
        heuristic: heuristic.ok_or_else(|| CliError::Usage("no delta values".into()))?,
        qubit_bound: QubitBound {
            bound: Num::new(bound, Method::Enumeration),
            qubit_cost: Num::new(q, Method::ClosedForm),
            consistent: q >= bound,
        },
        linear,
        lhv_sweep: sweep,
    };
    let mut done = Finished::new(&results, csv)?;
    done.failures = failures;
    Ok(done)
}
