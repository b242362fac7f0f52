use hybridseg::harness::{run_gradcheck, GradCheckModule};

fn check(module: GradCheckModule) {
    for seed in 0..3 {
        let out = run_gradcheck(module, seed).unwrap();
        println!(
            "{module} seed {seed}: max rel error {:.3e} (floor 1e-8: {:.3e}) over {} elements, {} refined",
            out.max_rel_error, out.max_rel_error_default_floor, out.checked, out.refined
        );
        assert!(out.passed, "{module} seed {seed}: {out:?}");
    }
}

#[test]
fn atw_gradients() {
    check(GradCheckModule::Atw);
}

#[test]
fn eds_gradients() {
    check(GradCheckModule::Eds);
}

#[test]
fn csf_gradients() {
    check(GradCheckModule::Csf);
}

#[test]
fn lif_gradients() {
    check(GradCheckModule::Lif);
}

#[test]
fn whole_network_gradients() {
    check(GradCheckModule::Net);
}
