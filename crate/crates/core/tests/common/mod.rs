#![allow(dead_code)]

use nalgebra::{Quaternion, Vector3};
use parttransfer::{Gripper, Trajectory, Waypoint};
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};

pub fn random_waypoint<R: Rng>(rng: &mut R) -> Waypoint {
    let g = Gripper::ALL[rng.random_range(0..3)];
    let t = Vector3::new(
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
    );
    let [x, y, z, w]: [f64; 4] = {
        let axis: [f64; 3] = UnitSphere.sample(rng);
        let half = rng.random_range(0.0..std::f64::consts::PI) / 2.0;
        [
            axis[0] * half.sin(),
            axis[1] * half.sin(),
            axis[2] * half.sin(),
            half.cos(),
        ]
    };
    Waypoint::normalized(g, t, Quaternion::new(w, x, y, z)).unwrap()
}

pub fn random_trajectory<R: Rng>(id: &str, len: usize, rng: &mut R) -> Trajectory {
    Trajectory::new(id, (0..len).map(|_| random_waypoint(rng)).collect()).unwrap()
}
