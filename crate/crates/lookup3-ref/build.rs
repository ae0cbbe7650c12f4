fn main() {
    println!("cargo:rerun-if-changed=csrc/lookup3.c");
    cc::Build::new()
        .file("csrc/lookup3.c")
        .flag_if_supported("-Wno-implicit-fallthrough")
        .opt_level(2)
        .compile("lookup3ref");
}
