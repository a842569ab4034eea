//! C ABI over the `mkgc` library.
//!
//! Objects cross the boundary as opaque handles created by `mkgc_*_new`-style
//! calls and released with the matching `*_free`. Every fallible call returns
//! an [`MkgcStatus`]; on failure the message is available from
//! [`mkgc_last_error`] on the same thread until the next failing call.
//! Entities and relations are addressed by their external ids.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mkgc::harness::compute_metrics;
use mkgc::ier::rerank;
use mkgc::kg::{gen_synthetic, ingest, EntityIx, IngestConfig, KgStore, LangIx, Query, RelationIx, SynthConfig};
use mkgc::kge::{train, EmbeddingTable, Filter, KnownTails, TransEConfig};
use mkgc::klgmoe::{count_params, AdapterShape};
use mkgc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MkgcStatus {
    Ok = 0,
    InvalidArgument = 1,
    NotFound = 2,
    Config = 3,
    Parse = 4,
    ContractViolation = 5,
    Usage = 6,
    NonFinite = 7,
    Io = 8,
    Json = 9,
    NullPointer = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

impl From<&Error> for MkgcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => MkgcStatus::InvalidArgument,
            Error::NotFound(_) => MkgcStatus::NotFound,
            Error::Config(_) => MkgcStatus::Config,
            Error::Parse { .. } => MkgcStatus::Parse,
            Error::ContractViolation(_) => MkgcStatus::ContractViolation,
            Error::Usage(_) => MkgcStatus::Usage,
            Error::NonFinite(_) => MkgcStatus::NonFinite,
            Error::Io { .. } => MkgcStatus::Io,
            Error::Json(_) => MkgcStatus::Json,
        }
    }
}

/// A knowledge graph.
pub struct MkgcStore(KgStore);

/// Trained TransE embeddings together with the filter index of their store.
pub struct MkgcTransE {
    table: EmbeddingTable,
    known: KnownTails,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MkgcMetrics {
    pub h1: f64,
    pub h3: f64,
    pub h10: f64,
    pub mrr: f64,
}

/// Picks one id out of `remaining[0..n]` into `*pick`. A nonzero return
/// aborts the rerank.
pub type MkgcScorer = Option<
    unsafe extern "C" fn(
        user: *mut c_void,
        head: u64,
        relation: u64,
        remaining: *const u64,
        n: usize,
        pick: *mut u64,
    ) -> c_int,
>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(MkgcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(MkgcStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MkgcStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MkgcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MkgcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MkgcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(MkgcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn languages_arg(p: *const c_char) -> Result<Vec<String>, Fail> {
    let langs: Vec<String> =
        str_arg(p, "languages")?.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if langs.is_empty() {
        return Err(Fail(MkgcStatus::InvalidArgument, "no languages given".into()));
    }
    Ok(langs)
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library; valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn mkgc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn mkgc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates a synthetic KG. `languages` is a comma-separated list of codes.
///
/// # Safety
/// `languages` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mkgc_store_synth(
    n_entities: usize,
    n_relations: usize,
    languages: *const c_char,
    shared_fraction: f64,
    seed: u64,
    out: *mut *mut MkgcStore,
) -> MkgcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = SynthConfig {
            n_entities,
            n_relations,
            languages: languages_arg(languages)?,
            shared_fraction,
            seed,
            ..Default::default()
        };
        *out = Box::into_raw(Box::new(MkgcStore(gen_synthetic(&cfg)?.store)));
        Ok(())
    })
}

/// Loads TSV triples and JSONL labels.
///
/// # Safety
/// String arguments must be nul-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mkgc_store_ingest(
    triples_path: *const c_char,
    labels_path: *const c_char,
    languages: *const c_char,
    out: *mut *mut MkgcStore,
) -> MkgcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let t = str_arg(triples_path, "triples_path")?;
        let l = str_arg(labels_path, "labels_path")?;
        let cfg = IngestConfig { languages: languages_arg(languages)? };
        *out = Box::into_raw(Box::new(MkgcStore(ingest(Path::new(t), Path::new(l), &cfg)?.0)));
        Ok(())
    })
}

/// Entity, relation and triple counts; any output may be null.
///
/// # Safety
/// `store` must come from this library; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn mkgc_store_counts(
    store: *const MkgcStore,
    n_entities: *mut usize,
    n_relations: *mut usize,
    n_triples: *mut usize,
) -> MkgcStatus {
    guard(|| {
        let s = &store.as_ref().ok_or_else(|| null("store"))?.0;
        for (p, v) in [(n_entities, s.n_entities()), (n_relations, s.n_relations()), (n_triples, s.triples().len())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `store` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mkgc_store_free(store: *mut MkgcStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Trains TransE on every triple of `store`.
///
/// # Safety
/// `store` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mkgc_transe_train(
    store: *const MkgcStore,
    dim: usize,
    epochs: usize,
    seed: u64,
    out: *mut *mut MkgcTransE,
) -> MkgcStatus {
    guard(|| {
        let s = &store.as_ref().ok_or_else(|| null("store"))?.0;
        let out = out_arg(out, "out")?;
        let cfg = TransEConfig { dim, epochs, seed, ..Default::default() };
        let (table, _) = train(s, s.triples(), &cfg)?;
        let known = KnownTails::new(s.triples());
        *out = Box::into_raw(Box::new(MkgcTransE { table, known }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mkgc_transe_free(model: *mut MkgcTransE) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Top-`m` tails for `(head, relation)` into `ids` and `scores` (each of
/// capacity `cap`), best first; `*len` receives the count written. With
/// `filtered` nonzero, known tails other than `keep` are skipped (`keep` may
/// be any id not in the store to skip all of them).
///
/// # Safety
/// Handles must come from this library, `model` trained on `store`; buffers
/// must hold `cap` elements.
#[no_mangle]
pub unsafe extern "C" fn mkgc_transe_retrieve(
    model: *const MkgcTransE,
    store: *const MkgcStore,
    head: u64,
    relation: u64,
    m: usize,
    filtered: c_int,
    keep: u64,
    ids: *mut u64,
    scores: *mut f64,
    cap: usize,
    len: *mut usize,
) -> MkgcStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let s = &store.as_ref().ok_or_else(|| null("store"))?.0;
        let len = out_arg(len, "len")?;
        if model.table.n_entities() != s.n_entities() || model.table.n_relations() != s.n_relations() {
            return Err(Fail(MkgcStatus::InvalidArgument, "model was not trained on this store".into()));
        }
        let q = Query { head: s.entity(head)?, relation: s.relation(relation)?, lang: LangIx(0) };
        let filter =
            if filtered != 0 { Filter::Known { known: &model.known, keep: s.entity(keep).ok() } } else { Filter::Raw };
        let list = model.table.retrieve(&q, m, filter)?;
        if list.len() > cap {
            *len = list.len();
            return Err(Fail(MkgcStatus::BufferTooSmall, format!("need {} slots, have {cap}", list.len())));
        }
        if !list.is_empty() && (ids.is_null() || scores.is_null()) {
            return Err(null("ids or scores"));
        }
        for (i, (e, sc)) in list.entities.iter().zip(&list.scores).enumerate() {
            *ids.add(i) = s.entity_id(*e);
            *scores.add(i) = *sc;
        }
        *len = list.len();
        Ok(())
    })
}

/// Iterative reranking of `candidates[0..n]` for `n_t` rounds, asking
/// `scorer` for one pick per round. The final order goes to `out[0..n]`.
///
/// # Safety
/// `candidates` and `out` must hold `n` elements; `scorer` must be non-null
/// and honor its contract.
#[no_mangle]
pub unsafe extern "C" fn mkgc_rerank(
    head: u64,
    relation: u64,
    candidates: *const u64,
    n: usize,
    n_t: usize,
    scorer: MkgcScorer,
    user: *mut c_void,
    out: *mut u64,
) -> MkgcStatus {
    guard(|| {
        let cands = slice_arg(candidates, n, "candidates")?;
        let scorer = scorer.ok_or_else(|| null("scorer"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        // Candidates travel as positions so any u64 id fits.
        let initial: Vec<EntityIx> = (0..n as u32).map(EntityIx).collect();
        let q = Query { head: EntityIx(0), relation: RelationIx(0), lang: LangIx(0) };
        let mut pick_one = |_: &Query, remaining: &[EntityIx]| -> mkgc::Result<EntityIx> {
            let ids: Vec<u64> = remaining.iter().map(|e| cands[e.idx()]).collect();
            let mut pick = 0u64;
            let rc = scorer(user, head, relation, ids.as_ptr(), ids.len(), &mut pick);
            if rc != 0 {
                return Err(Error::ContractViolation(format!("scorer returned {rc}")));
            }
            let at = ids.iter().position(|id| *id == pick).ok_or_else(|| {
                Error::ContractViolation(format!("scorer picked {pick}, which is not a remaining candidate"))
            })?;
            Ok(remaining[at])
        };
        if cands.iter().enumerate().any(|(i, c)| cands[..i].contains(c)) {
            return Err(Fail(MkgcStatus::InvalidArgument, "candidate ids repeat".into()));
        }
        let list = rerank(&q, &initial, &mut pick_one, n_t)?;
        for (i, e) in list.entities.iter().enumerate() {
            *out.add(i) = cands[e.idx()];
        }
        Ok(())
    })
}

/// Hits@1/3/10 and MRR of 1-based `ranks[0..n]`.
///
/// # Safety
/// `ranks` must hold `n` elements and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn mkgc_metrics(ranks: *const usize, n: usize, out: *mut MkgcMetrics) -> MkgcStatus {
    guard(|| {
        let ranks = slice_arg(ranks, n, "ranks")?;
        let out = out_arg(out, "out")?;
        let tagged: Vec<(usize, String)> = ranks.iter().map(|r| (*r, String::new())).collect();
        let m = compute_metrics(&tagged)?.avg;
        *out = MkgcMetrics { h1: m.h1, h3: m.h3, h10: m.h10, mrr: m.mrr };
        Ok(())
    })
}

/// Trainable and per-sample activated adapter parameters over `n_layers`.
///
/// # Safety
/// Outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mkgc_count_params(
    n_groups: usize,
    n_experts: usize,
    rank: usize,
    din: usize,
    dout: usize,
    n_layers: usize,
    trainable: *mut u64,
    activated: *mut u64,
) -> MkgcStatus {
    guard(|| {
        let shape = AdapterShape { n_groups, n_experts, rank, din, dout };
        shape.validate()?;
        let c = count_params(&shape, n_layers);
        *out_arg(trainable, "trainable")? = c.trainable;
        *out_arg(activated, "activated")? = c.activated;
        Ok(())
    })
}
