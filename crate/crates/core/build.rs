use std::env;

fn main() {
    // torch-sys exports the libtorch directory it linked against; bake it into the
    // rpath so test and CLI binaries start without LD_LIBRARY_PATH.
    if let Ok(dir) = env::var("DEP_TCH_LIBTORCH_LIB") {
        println!("cargo:rustc-link-arg=-Wl,-rpath,{dir}");
    }
    println!("cargo:rerun-if-env-changed=DEP_TCH_LIBTORCH_LIB");
}
