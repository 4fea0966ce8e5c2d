use matheron_bench::{analysis_fixture, instance};

#[test]
fn fixtures_have_requested_shapes() {
    let f = analysis_fixture(60, 12, 15).unwrap();
    assert_eq!(f.ensemble.dim(), 60);
    assert_eq!(f.ensemble.size(), 15);
    assert_eq!(f.observation.obs_dim(), 12);
    assert_eq!(f.instance.y_star().len(), 12);
    assert!(instance(5, 1, 10).is_err());
}
