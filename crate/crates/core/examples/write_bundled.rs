fn main() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    for b in apc_core::io::Bundled::ALL {
        b.write(&dir).unwrap();
    }
}
