use bellforge_core::linalg::{self, max_abs_diff, min_eigenvalue, CMatrix};
use bellforge_core::pbt::{
    build_pbt_povm, build_resource, entanglement_fidelity, entanglement_fidelity_of, receiver_port, sender_port,
    teleport, PbtMeasurement,
};
use bellforge_core::qstate::{fidelity, max_entangled_on, MixedState, PureState, RegisterLayout};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assert_complete_and_positive(meas: &PbtMeasurement) {
    let dim = meas.dim();
    let sum = meas
        .elements
        .elements()
        .iter()
        .fold(CMatrix::zeros(dim, dim), |acc, e| acc + e);
    assert!(max_abs_diff(&sum, &linalg::identity(dim)) < 1e-9);
    for e in meas.elements.elements() {
        assert!(min_eigenvalue(e) >= -1e-10);
    }
}

/// Permutes the sender-port digits 1 and j of an operator on A0 A1..AN.
fn swap_ports(m: &CMatrix, n: usize, d: usize, j: usize) -> CMatrix {
    let digits = |mut idx: usize| {
        let mut v = vec![0; n + 1];
        for k in (0..=n).rev() {
            v[k] = idx % d;
            idx /= d;
        }
        v
    };
    let pack = |v: &[usize]| v.iter().fold(0, |acc, &x| acc * d + x);
    let perm: Vec<usize> = (0..m.nrows())
        .map(|idx| {
            let mut v = digits(idx);
            v.swap(1, j);
            pack(&v)
        })
        .collect();
    CMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(perm[r], perm[c])])
}

#[test]
fn measurement_is_valid_for_small_qutrit_cases() {
    for n in 1..=3 {
        assert_complete_and_positive(&build_pbt_povm(n, 3).unwrap());
    }
}

#[test]
fn elements_are_port_permutation_covariant() {
    for (n, d) in [(3, 2), (4, 2), (3, 3)] {
        let meas = build_pbt_povm(n, d).unwrap();
        let els = meas.elements.elements();
        for j in 2..=n {
            let moved = swap_ports(&els[0], n, d, j);
            assert!(max_abs_diff(&moved, &els[j - 1]) < 1e-9, "n={n} d={d} j={j}");
        }
    }
}

/// Entanglement fidelity by simulating the joint state and summing branches.
fn fidelity_by_joint_state(n: usize, d: usize) -> f64 {
    let res = build_resource(n, d).unwrap();
    let meas = build_pbt_povm(n, d).unwrap();
    let joint = max_entangled_on(d, "R", "A0").unwrap().tensor(&res.state).unwrap();
    let targets: Vec<String> = std::iter::once("A0".to_string())
        .chain((1..=n).map(sender_port))
        .collect();
    let targets: Vec<&str> = targets.iter().map(String::as_str).collect();
    let probs = joint.probabilities_on(&meas.elements, &targets).unwrap();
    let mut avg = CMatrix::zeros(d * d, d * d);
    for (i, p) in probs.iter().enumerate() {
        let post = joint.branch(&meas.elements, &targets, i).unwrap();
        let port = receiver_port(i + 1);
        let out = post.reduce(&["R", &port]).unwrap();
        avg += out.matrix().map(|z| z * *p);
    }
    let layout = RegisterLayout::new([("R", d), ("B", d)]).unwrap();
    let state = MixedState::new(avg, layout).unwrap();
    fidelity(&max_entangled_on(d, "R", "B").unwrap(), &state).unwrap()
}

#[test]
fn channel_route_matches_joint_state_route() {
    for (n, d) in [(1, 2), (2, 2), (3, 2), (2, 3)] {
        let direct = fidelity_by_joint_state(n, d);
        let fast = entanglement_fidelity(n, d).unwrap();
        assert!((direct - fast).abs() < 1e-10, "n={n} d={d}: {direct} vs {fast}");
    }
}

#[test]
fn fidelity_is_monotone_and_meets_bound() {
    let mut last = 0.0;
    for n in 1..=8 {
        let meas = build_pbt_povm(n, 2).unwrap();
        assert_complete_and_positive(&meas);
        let f = entanglement_fidelity_of(&meas).unwrap();
        assert!(f >= 0.0);
        if n > 4 {
            assert!(f >= 1.0 - 4.0 / n as f64, "n={n}: {f}");
        }
        if n % 2 == 0 {
            assert!(f + 1e-12 >= last, "n={n}: {f} < {last}");
            last = f;
        }
    }
}

#[test]
fn teleport_output_is_partial_trace_of_joint_state() {
    let n = 4;
    let res = build_resource(n, 2).unwrap();
    let meas = build_pbt_povm(n, 2).unwrap();
    let layout = RegisterLayout::new([("q", 2)]).unwrap();
    let input = PureState::basis(layout.clone(), 0).unwrap().to_mixed().unwrap();
    let mixed = MixedState::new(
        CMatrix::from_row_slice(
            2,
            2,
            &[
                linalg::re(0.7),
                linalg::c(0.1, 0.2),
                linalg::c(0.1, -0.2),
                linalg::re(0.3),
            ],
        ),
        layout,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for state in [&input, &mixed] {
        for _ in 0..4 {
            let t = teleport(state, &res, &meas, &mut rng).unwrap();
            assert!((t.output.trace() - 1.0).abs() < 1e-10);
            let direct = t.joint.reduce(&[&receiver_port(t.port)]).unwrap();
            assert_eq!(direct.matrix(), t.output.matrix());
            assert!((t.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn eight_ports_keep_basis_state_on_average() {
    let meas = build_pbt_povm(8, 2).unwrap();
    // exact average over outcomes of ⟨0|Λ_i(|0⟩⟨0|)|0⟩
    let avg: f64 = (0..8).map(|i| meas.port_block(i, 0, 0)[(0, 0)].re).sum();
    assert!(avg >= 0.5, "{avg}");

    let res = build_resource(8, 2).unwrap();
    let zero = PureState::basis(RegisterLayout::new([("q", 2)]).unwrap(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = teleport(&zero.to_mixed().unwrap(), &res, &meas, &mut rng).unwrap();
    assert!((t.output.trace() - 1.0).abs() < 1e-10);
    let f = t.output.matrix()[(0, 0)].re;
    assert!((f - avg).abs() < 1e-9, "{f} vs {avg}");
}
