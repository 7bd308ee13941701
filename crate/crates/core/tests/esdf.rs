mod common;

use proptest::prelude::*;
use voxmap::esdf::{brute_force_esdf, EsdfConfig, EsdfIntegrator};
use voxmap::grid::{grids_equal, GridConfig};

use common::{free_space, set_voxel};

fn cfg() -> GridConfig {
    GridConfig::new(0.1, 8, 0.2).unwrap()
}

/// One edit: voxel, new TSDF distance, new weight.
fn edit() -> impl Strategy<Value = ([i64; 3], f32, f32)> {
    (
        prop::array::uniform3(0..24i64),
        prop_oneof![Just(0.0f32), -0.15..0.15f32, Just(0.2f32), Just(-0.2f32)],
        prop_oneof![3 => Just(1.0f32), 1 => Just(0.0f32)],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn incremental_equals_rebuild_and_oracle(stages in prop::collection::vec(prop::collection::vec(edit(), 1..25), 1..5)) {
        let config = EsdfConfig { max_distance: 1.0 };
        let integ = EsdfIntegrator::new(config);
        let mut tsdf = free_space(cfg(), 3);
        let mut esdf = integ.rebuild(&tsdf).unwrap();
        for stage in stages {
            let blocks: Vec<_> = stage.iter().map(|&(g, d, w)| set_voxel(&mut tsdf, g, d, w)).collect();
            integ.update(&tsdf, &mut esdf, &blocks).unwrap();
            let fresh = integ.rebuild(&tsdf).unwrap();
            prop_assert!(grids_equal(&esdf, &fresh));
            let oracle = brute_force_esdf(&tsdf, &config).unwrap();
            for (vi, v) in esdf.iter_voxels() {
                prop_assert_eq!(Some(v.distance), oracle.get(vi.to_global(8)));
            }
        }
    }
}

#[test]
fn thread_count_does_not_change_the_field() {
    let mut tsdf = free_space(cfg(), 4);
    for g in [[3, 4, 5], [20, 20, 2], [10, 30, 17]] {
        set_voxel(&mut tsdf, g, 0.0, 1.0);
    }
    let integ = EsdfIntegrator::new(EsdfConfig { max_distance: 1.5 });
    let build = |t: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap().install(|| integ.rebuild(&tsdf).unwrap())
    };
    let base = build(1);
    for t in [2, 4] {
        assert!(grids_equal(&base, &build(t)));
    }
}
