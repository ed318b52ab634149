fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(format!("{crate_dir}/include/nncompress.h"));
        }
        Err(cbindgen::Error::ParseSyntaxError { .. }) => {} // lib.rs mid-edit; keep the old header
        Err(e) => panic!("cbindgen: {e:?}"),
    }
}
