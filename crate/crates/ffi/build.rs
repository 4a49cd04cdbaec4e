use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let header = crate_dir.join("include").join("sranklab.h");

    let mut config = cbindgen::Config::default();
    config.language = cbindgen::Language::C;
    config.header =
        Some("/* C interface for the sranklab effective-rank laboratory. */".into());
    config.include_guard = Some("SRANKLAB_H".into());
    config.cpp_compat = true;
    config.documentation = true;

    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        Ok(bindings) => {
            bindings.write_to_file(&header);
        }
        // Header generation is best-effort during doc builds and vendored
        // environments; the committed header stays in place.
        Err(err) => println!("cargo:warning=cbindgen failed: {err}"),
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
}
