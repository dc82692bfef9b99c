use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::Instant;

use bellforge_core::bellkit::{
    build_linear_bell, delta_sweep, delta_upper_bound, exact_lhv_value, example_one_way_ratio, example_two_way_ratio,
    generate_correlations, lhv_bound, nonlinear_bell_check, path_success, ratio_constant, ratio_from_delta,
    ratio_lower_bound, simulate_with_classical_comm, violation_ratio, BoundMethod, BoxTable, PortSchedule, Ratio,
    TableMode, EXACT_MAX_MOVES,
};
use bellforge_core::ccoracle::{
    chernoff_floor, chernoff_repeats, distributional_cc, majority_amplify, verify_pumping, CCQueryResult, CcBits,
};
use bellforge_core::linalg::{self, gaussian_vector, max_abs_diff, min_eigenvalue, CMatrix};
use bellforge_core::pbt::{build_pbt_povm, entanglement_fidelity_of};
use bellforge_core::proto::{
    builtin_qrac, random_protocol, to_memoryless, to_single_qubit_rounds, CommProtocol, RandomShape,
};
use bellforge_core::qstate::{fidelity, PureState, RegisterLayout};
use bellforge_core::rsp::{attempt_rng, rsp_attempt};
use bellforge_core::truth::TruthTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pbt_bound() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for n in 1..=8 {
        let meas = build_pbt_povm(n, 2).map_err(|e| e.to_string())?;
        let dim = meas.dim();
        let sum = meas
            .elements
            .elements()
            .iter()
            .fold(CMatrix::zeros(dim, dim), |acc, e| acc + e);
        let defect = max_abs_diff(&sum, &linalg::identity(dim));
        let min_eig = meas
            .elements
            .elements()
            .iter()
            .map(min_eigenvalue)
            .fold(f64::INFINITY, f64::min);
        ok &= defect <= 1e-9 && min_eig >= -1e-10;
        if n >= 5 {
            let fe = entanglement_fidelity_of(&meas).map_err(|e| e.to_string())?;
            let avg = (2.0 * fe + 1.0) / 3.0;
            let bound = 1.0 - 4.0 / n as f64;
            ok &= avg >= bound;
            notes.push(format!("N={n} F={avg:.4}>={bound:.4}"));
        }
    }
    check(ok, notes.join(", "))
}

fn rsp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_p, mut worst_f) = (0.0f64, 0.0f64);
    for d in [2, 3, 4] {
        let layout = RegisterLayout::new([("q", d)]).map_err(|e| e.to_string())?;
        for t in 0..100 {
            let target =
                PureState::normalized(gaussian_vector(d, &mut rng), layout.clone()).map_err(|e| e.to_string())?;
            let mut stream = attempt_rng(t, 0);
            let mut attempt = rsp_attempt(&target, &mut stream).map_err(|e| e.to_string())?;
            worst_p = worst_p.max((attempt.success_probability - 1.0 / d as f64).abs());
            while !attempt.success {
                attempt = rsp_attempt(&target, &mut stream).map_err(|e| e.to_string())?;
            }
            let bob = attempt.bob_state.ok_or("missing output state")?;
            let f = fidelity(&target, &bob).map_err(|e| e.to_string())?;
            worst_f = worst_f.max((f - 1.0).abs());
        }
    }
    check(
        worst_p <= 1e-12 && worst_f <= 1e-10,
        format!("max |p - 1/d| = {worst_p:.1e}, max |F - 1| = {worst_f:.1e}"),
    )
}

fn corpus() -> Vec<CommProtocol> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    (0..20)
        .map(|k| {
            let shape = RandomShape {
                rounds: 1 + k % 2,
                ..RandomShape::default()
            };
            random_protocol(shape, &mut rng)
        })
        .collect()
}

fn max_gap(a: &CommProtocol, b: &CommProtocol) -> Result<f64, String> {
    let t = a.truth();
    let mut gap: f64 = 0.0;
    for x in 0..t.nx() {
        for y in 0..t.ny() {
            let p = a.output_distribution(x, y).map_err(|e| e.to_string())?;
            let q = b.output_distribution(x, y).map_err(|e| e.to_string())?;
            gap = gap.max((p[0] - q[0]).abs()).max((p[1] - q[1]).abs());
        }
    }
    Ok(gap)
}

fn transforms() -> Outcome {
    let (mut gap, mut ok) = (0.0f64, true);
    let mut worst = (0.0f64, 0.0f64);
    for p in corpus() {
        let single = to_single_qubit_rounds(&p).map_err(|e| e.to_string())?;
        let free = to_memoryless(&single).map_err(|e| e.to_string())?;
        let g = max_gap(&p, &single)?.max(max_gap(&p, &free.protocol)?);
        gap = gap.max(g);
        let q = p.qubit_cost();
        let bound = q * q + 2.0 * q;
        ok &= single.is_single_qubit() && free.protocol.is_memoryless() && free.qubit_cost <= bound + 1e-9;
        if free.qubit_cost / bound > worst.0 / worst.1.max(1.0) {
            worst = (free.qubit_cost, bound);
        }
    }
    check(
        ok && gap <= 1e-9,
        format!(
            "20 protocols, max gap {gap:.1e}, tightest cost {} <= {}",
            worst.0, worst.1
        ),
    )
}

fn simulation_pipeline() -> Outcome {
    let mut sources = vec![builtin_qrac()];
    sources.extend(corpus());
    let mut bypass_gap = 0.0f64;
    let mut tables = 0;
    for p in &sources {
        let single = to_single_qubit_rounds(p).map_err(|e| e.to_string())?;
        let free = to_memoryless(&single).map_err(|e| e.to_string())?;
        let s = PortSchedule::ideal(&free.protocol);
        let want = p.success_probability().map_err(|e| e.to_string())?;
        let paths = path_success(&free, &s).map_err(|e| e.to_string())?;
        bypass_gap = bypass_gap.max((paths - want).abs());
        if free.protocol.moves().len() <= EXACT_MAX_MOVES {
            if let Ok(table) = generate_correlations(&free, &s, TableMode::Exact) {
                let sim = simulate_with_classical_comm(&table, &s, p.truth()).map_err(|e| e.to_string())?;
                bypass_gap = bypass_gap.max((sim.success - want).abs());
                tables += 1;
            }
        }
    }

    let qrac = to_memoryless(&builtin_qrac()).map_err(|e| e.to_string())?;
    let s = PortSchedule::for_protocol(&qrac.protocol, &[8]).map_err(|e| e.to_string())?;
    let table = generate_correlations(&qrac, &s, TableMode::Exact).map_err(|e| e.to_string())?;
    let sim = simulate_with_classical_comm(&table, &s, qrac.protocol.truth()).map_err(|e| e.to_string())?;
    let eps = qrac.protocol.advantage().map_err(|e| e.to_string())?;
    let fe = entanglement_fidelity_of(&build_pbt_povm(8, 2).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let f_avg = (2.0 * fe + 1.0) / 3.0;
    let depol = (4.0 * fe - 1.0) / 3.0;
    let floor = 0.5 + f_avg * eps;
    let identity_gap = (sim.success - (0.5 + depol * eps)).abs();
    let detail = format!(
        "bypass gap {bypass_gap:.1e} over {} sources ({tables} via tables); N=8 QRAC success {:.6}, bits {}, \
         floor 1/2 + F*eps = {floor:.6} (F={f_avg:.6}, eps={eps:.6}); depolarized 1/2 + p*eps with p={depol:.6} off by {identity_gap:.1e}",
        sources.len(),
        sim.success,
        sim.bits
    );
    check(
        bypass_gap <= 1e-9 && sim.bits == 3.0 && sim.success >= floor - 1e-9,
        detail,
    )
}

fn random_table(x_bits: u32, y_bits: u32, rng: &mut ChaCha8Rng) -> TruthTable {
    let size = 1usize << (x_bits + y_bits);
    let f: Vec<u8> = (0..size).map(|_| rng.random_range(0..2)).collect();
    let raw: Vec<f64> = (0..size).map(|_| rng.random::<f64>() + 0.01).collect();
    let total: f64 = raw.iter().sum();
    TruthTable::new(x_bits, y_bits, f, raw.iter().map(|w| w / total).collect()).unwrap()
}

/// Best deterministic local value: every α(·) in full, and per y the best β(y).
fn enumerate_lhv(f: &bellforge_core::bellkit::BellFunctional, t: &TruthTable) -> f64 {
    let (a, b) = (f.tree.alice_size(), f.tree.bob_size());
    let nx = t.nx() as u32;
    let mut best = f64::NEG_INFINITY;
    for code in 0..a.pow(nx) {
        let alpha: Vec<u64> = (0..nx).map(|x| code / a.pow(x) % a).collect();
        let mut v = 0.0;
        for y in 0..t.ny() {
            let mut col = f64::NEG_INFINITY;
            for beta in 0..b {
                let s: f64 = (0..t.nx()).map(|x| f.coefficient(x, y, alpha[x], beta)).sum();
                col = col.max(s);
            }
            v += col;
        }
        best = best.max(v);
    }
    best
}

fn all_boxes(nx: usize, ny: usize) -> Vec<BoxTable> {
    let mut out = Vec::new();
    for am in 0..1usize << nx {
        for bm in 0..1usize << ny {
            let alpha: Vec<u8> = (0..nx).map(|x| ((am >> x) & 1) as u8).collect();
            let beta: Vec<u8> = (0..ny).map(|y| ((bm >> y) & 1) as u8).collect();
            out.push(BoxTable::deterministic(&alpha, &beta));
        }
    }
    out
}

fn soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tables = vec![
        TruthTable::qrac(),
        TruthTable::equality(1),
        TruthTable::equality(2),
        TruthTable::inner_xor(1),
        TruthTable::inner_xor(2),
        TruthTable::inner_product(2),
    ];
    for (xb, yb) in [(1, 1), (1, 2), (2, 1), (2, 2), (2, 2)] {
        tables.push(random_table(xb, yb, &mut rng));
    }
    let schedules: Vec<Vec<usize>> = vec![vec![1], vec![2], vec![3], vec![4], vec![2, 1, 2], vec![2, 2, 2]];
    let (mut scenarios, mut violations) = (0, 0);
    for t in &tables {
        for ports in &schedules {
            let s = PortSchedule {
                dims: vec![2; ports.len()],
                ports: ports.clone(),
                ideal: false,
            };
            let f = build_linear_bell(t, &s).map_err(|e| e.to_string())?;
            let (a, b) = (f.tree.alice_size() as f64, f.tree.bob_size() as f64);
            if a.powi(t.nx() as i32) * b * (t.nx() * t.ny()) as f64 > 2e7 {
                continue;
            }
            let delta = exact_lhv_value(&f).map_err(|e| e.to_string())? - 0.5;
            let cc = lhv_bound(&f, BoundMethod::CcDerived).map_err(|e| e.to_string())?;
            let value = enumerate_lhv(&f, t);
            scenarios += 1;
            if value > 0.5 + delta + 1e-12 || value > 0.5 + cc + 1e-12 {
                violations += 1;
            }
        }
    }

    let (mut boxes, mut checks) = (0, 0);
    for t in &tables {
        let all = all_boxes(t.nx(), t.ny());
        let mut candidates: Vec<BoxTable> = all.clone();
        for _ in 0..20 {
            let w: Vec<f64> = all.iter().map(|_| rng.random::<f64>().powi(4)).collect();
            let total: f64 = w.iter().sum();
            let mix: Vec<(f64, BoxTable)> = w.iter().zip(&all).map(|(w, b)| (w / total, b.clone())).collect();
            candidates.push(BoxTable::mixture(&mix));
        }
        for b in candidates {
            boxes += 1;
            let stats = b.stats(t);
            for delta in delta_sweep(10) {
                checks += 1;
                if !nonlinear_bell_check(&stats, delta).map_err(|e| e.to_string())?.holds {
                    violations += 1;
                }
            }
        }
    }
    check(
        violations == 0,
        format!("{scenarios} LHV scenarios, {boxes} boxes x 10 deltas = {checks} inequality checks, {violations} counterexamples"),
    )
}

fn classical_oracle() -> Outcome {
    let q = CCQueryResult::compute("qrac", &TruthTable::qrac()).map_err(|e| e.to_string())?;
    let want = [0.5, 0.75, 1.0];
    let table_ok = q.success.len() == 3 && q.success.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12);
    let cc = distributional_cc(&TruthTable::qrac(), 0.76).map_err(|e| e.to_string())?;
    check(
        table_ok && cc == CcBits::Finite(2),
        format!("table {:?}, C(0.76) = {cc:?}", q.success),
    )
}

fn amplification() -> Outcome {
    let repeats = chernoff_repeats(1.0 / 6.0);
    let (p, l) = (0.6, 51);
    let run = majority_amplify(p, l, 10_000, 2718);
    let floor = chernoff_floor(l, p - 0.5);
    let mut pumping = 0;
    for t in [TruthTable::qrac(), TruthTable::equality(2), TruthTable::inner_xor(2)] {
        for eps in [0.05, 0.1, 0.15] {
            if verify_pumping(&t, eps).map_err(|e| e.to_string())?.holds {
                pumping += 1;
            }
        }
    }
    check(
        repeats == 108 && run.rate >= floor - 4.0 * run.sigma && pumping == 9,
        format!(
            "l(1/6) = {repeats}, majority {:.4} vs floor {floor:.4} - 4 sigma ({:.4}), pumping {pumping}/9",
            run.rate, run.sigma
        ),
    )
}

fn ratio_arithmetic() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    let c = 1.0 / (6.0 * 3f64.sqrt());
    let mut ok = close(ratio_constant(), 0.096_225_044_864_937_63);
    for (c23, cpq) in [(12.0, 3.0), (100.0, 7.0), (1.0, 1.0)] {
        ok &= close(ratio_lower_bound(c23, cpq), c * (c23 / cpq).sqrt());
    }
    ok &= close(ratio_lower_bound(12.0, 3.0), 2.0 * c);
    ok &= close(delta_upper_bound(1.0, 12.0), 0.5);
    ok &= ratio_from_delta(0.25) == Ratio::Finite(2.0 / 3.0);
    ok &= violation_ratio(0.3, 0.0) == Ratio::Infinite;
    let mut notes = Vec::new();
    for k in [12, 24, 48] {
        let n = 2f64.powi(k);
        let log_n = k as f64;
        let one = 0.5 * (1.0 - 1.0 / n) * (n.powf(1.0 / 3.0) / (5.0 * log_n)).sqrt();
        let two = 0.5 * (1.0 - 1.0 / n) * (1.0 - 1.0 / n) * n.powf(0.125) / (10f64.sqrt() * log_n);
        let (a, b) = (example_one_way_ratio(n, 1.0), example_two_way_ratio(n, 1.0));
        ok &= close(a, one) && close(b, two);
        notes.push(format!("n=2^{k}: {a:.4}, {b:.4}"));
    }
    check(ok, notes.join("; "))
}

fn examples_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/examples")
}

fn reproducibility() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (command, config) in [
        ("cc", "cc.json"),
        ("bell-certify", "bell-certify-sampled.json"),
        ("oneway", "oneway-qrac.json"),
    ] {
        let run = |threads: &str| {
            Command::new(env!("CARGO_BIN_EXE_bellforge"))
                .arg(command)
                .arg("--config")
                .arg(examples_dir().join(config))
                .env("BELLFORGE_THREADS", threads)
                .output()
                .map_err(|e| e.to_string())
        };
        let (a, b) = (run("1")?, run("4")?);
        let same = a.status.success() && b.status.success() && a.stdout == b.stdout && !a.stdout.is_empty();
        ok &= same;
        notes.push(format!(
            "{config}: {} bytes {}",
            a.stdout.len(),
            if same { "identical" } else { "differ" }
        ));
    }
    check(ok, notes.join(", "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("PBT bound", pbt_bound),
        ("RSP", rsp),
        ("transform equivalence", transforms),
        ("classical simulation pipeline", simulation_pipeline),
        ("LHV soundness sweep", soundness),
        ("classical oracle", classical_oracle),
        ("amplification and pumping", amplification),
        ("violation ratio arithmetic", ratio_arithmetic),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
