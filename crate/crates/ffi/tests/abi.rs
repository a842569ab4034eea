use std::ffi::{c_int, c_void, CStr, CString};
use std::process::Command;
use std::ptr;

use mkgc_ffi::*;

fn last_error() -> String {
    let p = mkgc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn synth(seed: u64) -> *mut MkgcStore {
    let langs = CString::new("en,fr").unwrap();
    let mut store = ptr::null_mut();
    let st = unsafe { mkgc_store_synth(60, 10, langs.as_ptr(), 0.7, seed, &mut store) };
    assert_eq!(st, MkgcStatus::Ok, "{}", last_error());
    store
}

#[test]
fn store_and_transe_lifecycle() {
    let store = synth(1);
    let (mut ne, mut nr, mut nt) = (0usize, 0usize, 0usize);
    assert_eq!(unsafe { mkgc_store_counts(store, &mut ne, &mut nr, &mut nt) }, MkgcStatus::Ok);
    assert_eq!((ne, nr), (60, 10));
    assert!(nt > 0);

    let mut model = ptr::null_mut();
    assert_eq!(unsafe { mkgc_transe_train(store, 16, 5, 1, &mut model) }, MkgcStatus::Ok);
    let mut ids = [0u64; 10];
    let mut scores = [0f64; 10];
    let mut len = 0usize;
    let st = unsafe {
        mkgc_transe_retrieve(model, store, 0, 0, 10, 1, u64::MAX, ids.as_mut_ptr(), scores.as_mut_ptr(), 10, &mut len)
    };
    assert_eq!(st, MkgcStatus::Ok);
    assert_eq!(len, 10);
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    // Too small a buffer reports the size needed.
    let st = unsafe {
        mkgc_transe_retrieve(model, store, 0, 0, 10, 0, 0, ids.as_mut_ptr(), scores.as_mut_ptr(), 4, &mut len)
    };
    assert_eq!((st, len), (MkgcStatus::BufferTooSmall, 10));

    let st = unsafe {
        mkgc_transe_retrieve(model, store, 999_999, 0, 10, 0, 0, ids.as_mut_ptr(), scores.as_mut_ptr(), 10, &mut len)
    };
    assert_eq!(st, MkgcStatus::NotFound);
    assert!(last_error().contains("999999"));

    unsafe {
        mkgc_transe_free(model);
        mkgc_store_free(store);
        mkgc_store_free(ptr::null_mut());
    }
}

#[test]
fn null_and_bad_arguments_map_to_codes() {
    let mut store = ptr::null_mut();
    assert_eq!(unsafe { mkgc_store_synth(10, 2, ptr::null(), 0.5, 0, &mut store) }, MkgcStatus::NullPointer);
    assert!(last_error().contains("languages"));
    let empty = CString::new(" , ").unwrap();
    assert_eq!(unsafe { mkgc_store_synth(10, 2, empty.as_ptr(), 0.5, 0, &mut store) }, MkgcStatus::InvalidArgument);
    let langs = CString::new("en").unwrap();
    let missing = CString::new("/nonexistent/triples.tsv").unwrap();
    let st = unsafe { mkgc_store_ingest(missing.as_ptr(), missing.as_ptr(), langs.as_ptr(), &mut store) };
    assert_eq!(st, MkgcStatus::Io);
    let (mut t, mut a) = (0u64, 0u64);
    assert_eq!(unsafe { mkgc_count_params(0, 2, 4, 8, 8, 1, &mut t, &mut a) }, MkgcStatus::Config);
}

unsafe extern "C" fn take_last(
    _: *mut c_void,
    _: u64,
    _: u64,
    remaining: *const u64,
    n: usize,
    pick: *mut u64,
) -> c_int {
    *pick = *remaining.add(n - 1);
    0
}

unsafe extern "C" fn rogue(_: *mut c_void, _: u64, _: u64, _: *const u64, _: usize, pick: *mut u64) -> c_int {
    *pick = 12345;
    0
}

unsafe extern "C" fn counting(
    user: *mut c_void,
    _: u64,
    _: u64,
    remaining: *const u64,
    _: usize,
    pick: *mut u64,
) -> c_int {
    *(user as *mut usize) += 1;
    *pick = *remaining;
    0
}

#[test]
fn rerank_through_callbacks() {
    let cands = [u64::MAX, 7, 1 << 40];
    let mut out = [0u64; 3];
    let st = unsafe { mkgc_rerank(1, 2, cands.as_ptr(), 3, 3, Some(take_last), ptr::null_mut(), out.as_mut_ptr()) };
    assert_eq!(st, MkgcStatus::Ok);
    assert_eq!(out, [1 << 40, 7, u64::MAX]);

    let mut calls = 0usize;
    let user = &mut calls as *mut usize as *mut c_void;
    let st = unsafe { mkgc_rerank(1, 2, cands.as_ptr(), 3, 2, Some(counting), user, out.as_mut_ptr()) };
    assert_eq!((st, calls), (MkgcStatus::Ok, 2));
    assert_eq!(out, cands);

    let st = unsafe { mkgc_rerank(1, 2, cands.as_ptr(), 3, 1, Some(rogue), ptr::null_mut(), out.as_mut_ptr()) };
    assert_eq!(st, MkgcStatus::ContractViolation);
    let st = unsafe { mkgc_rerank(1, 2, cands.as_ptr(), 3, 4, Some(take_last), ptr::null_mut(), out.as_mut_ptr()) };
    assert_eq!(st, MkgcStatus::InvalidArgument);
    let st = unsafe { mkgc_rerank(1, 2, cands.as_ptr(), 3, 1, None, ptr::null_mut(), out.as_mut_ptr()) };
    assert_eq!(st, MkgcStatus::NullPointer);
}

#[test]
fn metrics_and_param_counts() {
    let mut m = MkgcMetrics::default();
    assert_eq!(unsafe { mkgc_metrics([2usize, 4].as_ptr(), 2, &mut m) }, MkgcStatus::Ok);
    assert_eq!(m, MkgcMetrics { h1: 0.0, h3: 0.5, h10: 1.0, mrr: 0.375 });
    assert_eq!(unsafe { mkgc_metrics(ptr::null(), 0, &mut m) }, MkgcStatus::InvalidArgument);

    let (mut t, mut a) = (0u64, 0u64);
    assert_eq!(unsafe { mkgc_count_params(1, 1, 4, 8, 8, 1, &mut t, &mut a) }, MkgcStatus::Ok);
    assert_eq!(t, a);
    assert_eq!(unsafe { mkgc_count_params(4, 2, 4, 8, 8, 1, &mut t, &mut a) }, MkgcStatus::Ok);
    assert!(t > a);
}

#[test]
fn header_declares_the_exports_and_compiles() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mkgc.h")).unwrap();
    for f in [
        "mkgc_last_error",
        "mkgc_version",
        "mkgc_store_synth",
        "mkgc_store_ingest",
        "mkgc_store_counts",
        "mkgc_store_free",
        "mkgc_transe_train",
        "mkgc_transe_retrieve",
        "mkgc_transe_free",
        "mkgc_rerank",
        "mkgc_metrics",
        "mkgc_count_params",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    let src = std::env::temp_dir().join(format!("mkgc_header_{}.c", std::process::id()));
    std::fs::write(
        &src,
        "#include \"mkgc.h\"\n\
         static int first(void *u, uint64_t h, uint64_t r, const uint64_t *rem, size_t n, uint64_t *pick) {\n\
           (void)u; (void)h; (void)r; (void)n; *pick = rem[0]; return 0; }\n\
         int use(void) { uint64_t c[2] = {1, 2}, o[2]; MkgcScorer s = first;\n\
           return mkgc_rerank(0, 0, c, 2, 1, s, 0, o) == MKGC_STATUS_OK; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .status();
    std::fs::remove_file(&src).ok();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile as C99"),
        Err(e) => eprintln!("no C compiler available ({e}); skipped the compile check"),
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(mkgc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
