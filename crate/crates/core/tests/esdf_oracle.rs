//! Distance transform and trilinear sampling against brute force.

mod common;

use common::{brute_esdf, random_occupancy, rng};
use groundplan::gridmap::{build_esdf, Field3, FieldQuery, GridSpec, OccupancyGrid};
use groundplan::Point3;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn matches_brute_force_on_random_grids() {
    let mut r = rng(3);
    for trial in 0..12 {
        let dims = [r.gen_range(3..14), r.gen_range(3..14), r.gen_range(2..9)];
        let occ = random_occupancy(&mut r, dims, [0.01, 0.05, 0.2][trial % 3]);
        let esdf = build_esdf(&occ).unwrap();
        let want = brute_esdf(&occ);
        for (i, (&got, &w)) in esdf.field.values.iter().zip(&want).enumerate() {
            assert!((got - w).abs() <= 1e-9, "trial {trial} voxel {i}: {got} vs {w}");
        }
    }
}

#[test]
fn single_obstacle_distances_are_euclidean() {
    let spec = GridSpec::new(Point3::zeros(), 0.1, [9, 9, 9]).unwrap();
    let mut occ = OccupancyGrid::empty(spec);
    occ.set([4, 4, 4], true);
    let esdf = build_esdf(&occ).unwrap();
    assert_eq!(esdf.dist([4, 4, 4]), 0.0);
    assert!((esdf.dist([5, 4, 4]) - 0.1).abs() < 1e-12);
    assert!((esdf.dist([5, 5, 5]) - 0.1 * 3f64.sqrt()).abs() < 1e-12);
    assert!((esdf.dist([0, 0, 4]) - 0.4 * 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn midpoint_between_centers_is_the_average() {
    let mut r = rng(8);
    let occ = random_occupancy(&mut r, [8, 8, 5], 0.05);
    let f = build_esdf(&occ).unwrap().field;
    let spec = f.spec;
    for _ in 0..200 {
        let c = [r.gen_range(0..7), r.gen_range(0..8), r.gen_range(0..5)];
        let n = [c[0] + 1, c[1], c[2]];
        let mid = (spec.center(c) + spec.center(n)) * 0.5;
        let (v, _) = f.sample(&mid).unwrap();
        assert!((v - 0.5 * (f.get(c) + f.get(n))).abs() < 1e-12);
    }
}

#[test]
fn sampled_gradient_matches_finite_differences() {
    let mut r = rng(21);
    let occ = random_occupancy(&mut r, [10, 10, 6], 0.04);
    let f = build_esdf(&occ).unwrap().field;
    let spec = f.spec;
    let res = spec.resolution;
    let h = 1e-6;
    let mut checked = 0;
    while checked < 300 {
        // stay away from cell faces, where the gradient has a kink
        let u: [f64; 3] = std::array::from_fn(|a| {
            let cell = r.gen_range(0..spec.dims[a] - 1) as f64;
            cell + r.gen_range(0.05..0.95) + 0.5
        });
        let p = spec.origin + Point3::new(u[0], u[1], u[2]) * res;
        let (_, g) = f.query(&p).unwrap();
        for a in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp[a] += h;
            pm[a] -= h;
            let fd = (f.query(&pp).unwrap().0 - f.query(&pm).unwrap().0) / (2.0 * h);
            assert!((fd - g[a]).abs() <= 1e-6 * (1.0 + fd.abs()), "axis {a}: {fd} vs {}", g[a]);
        }
        checked += 1;
    }
}

#[test]
fn out_of_domain_queries_fail() {
    let occ = random_occupancy(&mut rng(1), [4, 4, 4], 0.1);
    let f = build_esdf(&occ).unwrap();
    assert!(f.query(&Point3::new(-100.0, 0.0, 0.0)).is_err());
    assert!(f.query(&(f.spec().origin)).is_err());
}

#[test]
fn dump_round_trip_is_lossless() {
    let occ = random_occupancy(&mut rng(5), [7, 5, 3], 0.1);
    let f = build_esdf(&occ).unwrap().field;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("esdf.bin");
    f.write_dump(&path).unwrap();
    assert_eq!(Field3::read_dump(&path).unwrap(), f);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn distance_is_one_lipschitz(seed in 0u64..10_000, density in 0.01f64..0.3) {
        let occ = random_occupancy(&mut rng(seed), [9, 7, 5], density);
        let f = build_esdf(&occ).unwrap().field;
        let spec = f.spec;
        for idx in 0..spec.len() {
            let c = spec.unlinear(idx);
            for a in 0..3 {
                if c[a] + 1 < spec.dims[a] {
                    let mut n = c;
                    n[a] += 1;
                    prop_assert!((f.get(c) - f.get(n)).abs() <= spec.resolution + 1e-12);
                }
            }
            prop_assert!(f.get(c) >= 0.0);
            prop_assert_eq!(f.get(c) == 0.0, occ.is_occupied(c));
        }
    }

    #[test]
    fn sampling_is_continuous_across_faces(seed in 0u64..10_000, fy in 0.0f64..1.0, fz in 0.0f64..1.0) {
        let mut r = rng(seed);
        let occ = random_occupancy(&mut r, [6, 6, 6], 0.05);
        let f = build_esdf(&occ).unwrap().field;
        let res = f.spec.resolution;
        let i = r.gen_range(1..5) as f64;
        let face = f.spec.origin + Point3::new(i + 0.5, 1.5 + 3.0 * fy, 1.5 + 3.0 * fz) * res;
        let e = 1e-9;
        let lo = f.sample(&(face - Point3::x() * e)).unwrap().0;
        let hi = f.sample(&(face + Point3::x() * e)).unwrap().0;
        prop_assert!((lo - hi).abs() < 1e-6);
    }
}
