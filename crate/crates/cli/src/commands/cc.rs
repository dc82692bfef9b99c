use bellforge_core::ccoracle::{
    best_success_tree, chernoff_floor, chernoff_repeats, distributional_cc, majority_amplify, majority_success_exact,
    verify_pumping, CCQueryResult,
};
use rayon::prelude::*;
use serde::Serialize;

use super::BitsOut;
use crate::config::{FunctionSpec, Params, RunConfig};
use crate::error::CliError;
use crate::report::{cell, CsvTable, Finished, Method, Num};

#[derive(Debug, Clone, Serialize)]
struct Entry {
    c: u32,
    success: Num,
}

#[derive(Debug, Clone, Serialize)]
struct Target {
    p: f64,
    bits: BitsOut,
}

#[derive(Debug, Clone, Serialize)]
struct Pumping {
    epsilon: f64,
    c_at_p: BitsOut,
    c_two_thirds: BitsOut,
    floor: Num,
    holds: bool,
}

#[derive(Debug, Clone, Serialize)]
struct FunctionReport {
    id: String,
    x_bits: u32,
    y_bits: u32,
    one_way: Vec<Entry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    multi_round: Vec<Entry>,
    targets: Vec<Target>,
    pumping: Vec<Pumping>,
}

#[derive(Debug, Clone, Serialize)]
struct Chernoff {
    epsilon: f64,
    repeats: u64,
    floor: Num,
}

#[derive(Debug, Clone, Serialize)]
struct Majority {
    p: f64,
    l: u64,
    trials: u64,
    seed: u64,
    rate: Num,
    sigma: Num,
    exact: Num,
    floor: Num,
    holds: bool,
}

#[derive(Debug, Clone, Serialize)]
struct Results {
    rounds: usize,
    functions: Vec<FunctionReport>,
    chernoff: Vec<Chernoff>,
    #[serde(skip_serializing_if = "Option::is_none")]
    majority: Option<Majority>,
}

fn function_report(
    spec: &FunctionSpec,
    rounds: usize,
    targets: &[f64],
    epsilons: &[f64],
) -> Result<FunctionReport, CliError> {
    let t = spec.table()?;
    let one_way = CCQueryResult::compute(spec.id(), &t)?
        .success
        .iter()
        .enumerate()
        .map(|(c, &s)| Entry {
            c: c as u32,
            success: Num::new(s, Method::Enumeration),
        })
        .collect();
    let multi_round = if rounds > 1 {
        (0..=t.x_bits)
            .map(|c| {
                Ok(Entry {
                    c,
                    success: Num::new(best_success_tree(&t, c, rounds)?, Method::Enumeration),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?
    } else {
        Vec::new()
    };
    let targets = targets
        .iter()
        .map(|&p| {
            Ok(Target {
                p,
                bits: distributional_cc(&t, p)?.into(),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let pumping = epsilons
        .iter()
        .map(|&e| {
            let check = verify_pumping(&t, e)?;
            Ok(Pumping {
                epsilon: e,
                c_at_p: check.c_at_p.into(),
                c_two_thirds: check.c_two_thirds.into(),
                floor: Num::new(check.floor, Method::Enumeration),
                holds: check.holds,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(FunctionReport {
        id: spec.id(),
        x_bits: t.x_bits,
        y_bits: t.y_bits,
        one_way,
        multi_round,
        targets,
        pumping,
    })
}

pub fn cc(cfg: &RunConfig) -> Result<Finished, CliError> {
    let Params::Cc {
        functions,
        rounds,
        targets,
        epsilons,
        chernoff,
        majority,
    } = &cfg.params
    else {
        return Err(CliError::Usage("cc parameters missing".into()));
    };
    let reports = functions
        .par_iter()
        .map(|spec| function_report(spec, *rounds, targets, epsilons))
        .collect::<Result<Vec<_>, _>>()?;
    let chernoff = chernoff
        .iter()
        .map(|&e| {
            let repeats = chernoff_repeats(e);
            Chernoff {
                epsilon: e,
                repeats,
                floor: Num::new(chernoff_floor(repeats, e), Method::ClosedForm),
            }
        })
        .collect();
    let majority = majority.map(|m| {
        let seed = cfg.seed.unwrap_or_default();
        let run = majority_amplify(m.p, m.l, cfg.trials, seed);
        let floor = chernoff_floor(m.l, m.p - 0.5);
        Majority {
            p: m.p,
            l: m.l,
            trials: cfg.trials,
            seed,
            rate: Num::new(run.rate, Method::Sampled),
            sigma: Num::new(run.sigma, Method::Sampled),
            exact: Num::new(majority_success_exact(m.p, m.l), Method::Exact),
            floor: Num::new(floor, Method::ClosedForm),
            holds: run.rate >= floor - 4.0 * run.sigma,
        }
    });

    let mut failures = Vec::new();
    let mut csv = CsvTable::new(&["function", "rounds", "c", "success", "method"]);
    for f in &reports {
        for p in f.pumping.iter().filter(|p| !p.holds) {
            failures.push(format!("{}: pumping inequality fails at epsilon {}", f.id, p.epsilon));
        }
        for (r, entries) in [(1, &f.one_way), (*rounds, &f.multi_round)] {
            for e in entries {
                csv.push(vec![
                    f.id.clone(),
                    r.to_string(),
                    e.c.to_string(),
                    cell(e.success.value),
                    e.success.method.label().into(),
                ]);
            }
        }
    }
    if let Some(m) = majority.as_ref().filter(|m| !m.holds) {
        failures.push(format!(
            "majority rate {} below floor {} - 4 sigma",
            m.rate.value, m.floor.value
        ));
    }
    let results = Results {
        rounds: *rounds,
        functions: reports,
        chernoff,
        majority,
    };
    let mut done = Finished::new(&results, csv)?;
    done.failures = failures;
    Ok(done)
}
