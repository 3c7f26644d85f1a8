fn main() {
    for (name, var) in [("SCENEFIT_BUILD_TARGET", "TARGET"), ("SCENEFIT_BUILD_PROFILE", "PROFILE")] {
        let value = std::env::var(var).unwrap_or_else(|_| "unknown".into());
        println!("cargo:rustc-env={name}={value}");
    }
    println!("cargo:rerun-if-changed=build.rs");
}
