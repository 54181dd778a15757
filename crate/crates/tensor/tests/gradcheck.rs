use blurwarp_tensor::gradcheck::{self, Case};

#[test]
fn every_op_passes_finite_differences() {
    let reports = gradcheck::run_suite(5, 1e-4, 2024).unwrap();
    assert_eq!(reports.len(), Case::all().len());
    let mut failed = Vec::new();
    for r in &reports {
        println!("{:<32} instances={} max_rel_err={:.3e}", r.name, r.instances, r.max_rel_err);
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
