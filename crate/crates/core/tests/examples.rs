//! Every example under `examples/` runs to completion.

macro_rules! example {
    ($module:ident, $file:literal) => {
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $module() {
            $module::run_example().expect(concat!($file, " should run"));
        }
    };
}

example!(teacher, "teacher.rs");
example!(dof_curve, "dof_curve.rs");
example!(discretize, "discretize.rs");
example!(bounds, "bounds.rs");
example!(train, "train.rs");
example!(rate_sweep, "rate_sweep.rs");
example!(bias_variance, "bias_variance.rs");
