fn main() {
    // The dense eigensolver and LU routines come from LAPACK as bundled in
    // the system OpenBLAS library (zgeev/zgetrf/zgetrs/zgemm).
    println!("cargo:rustc-link-lib=dylib=openblas");
}
