#![allow(dead_code)]

use bellforge_core::linalg::gaussian_vector;
use bellforge_core::qstate::{PureState, RegisterLayout};
use rand::Rng;

pub fn haar_state<R: Rng>(d: usize, name: &str, rng: &mut R) -> PureState {
    let layout = RegisterLayout::new([(name, d)]).unwrap();
    PureState::normalized(gaussian_vector(d, rng), layout).unwrap()
}
