//! C ABI over the regretforge core: design-spec parsing, website rendering,
//! navigation episodes and the regret objectives.
//!
//! Every fallible function returns an [`RfStatus`]. On failure the message is
//! kept per thread and can be read with [`rf_last_error_message`]. Handles are
//! opaque and owned by the caller, who releases them with the matching
//! `*_free` function. Strings returned through `char **` are released with
//! [`rf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use regretforge::env::{reset, EnvConfig, EpisodeState, NavAction};
use regretforge::site::{render, DesignSpec, Website};
use regretforge::trainer::{flexible_regret, paired_regret};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Render = 4,
    InvalidAction = 5,
    EpisodeDone = 6,
    Panic = 7,
}

/// A parsed design spec.
pub struct RfSpec(DesignSpec);

/// A rendered website.
pub struct RfWebsite(Website);

/// A running navigation episode; owns a copy of its website.
pub struct RfEpisode {
    state: EpisodeState,
    rewards: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn fail(status: RfStatus, msg: impl Into<String>) -> RfStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting panics into [`RfStatus::Panic`] and clearing the
/// last error on success.
fn guard(f: impl FnOnce() -> RfStatus) -> RfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == RfStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(RfStatus::Panic, msg)
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, RfStatus> {
    if p.is_null() {
        return Err(fail(RfStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(RfStatus::InvalidArgument, "string is not valid UTF-8"))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> RfStatus {
    if out.is_null() {
        return fail(RfStatus::NullPointer, "output pointer is null");
    }
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            RfStatus::Ok
        }
        Err(_) => fail(RfStatus::InvalidArgument, "string contains a nul byte"),
    }
}

macro_rules! deref {
    ($p:expr) => {
        match $p.as_ref() {
            Some(v) => v,
            None => return fail(RfStatus::NullPointer, concat!(stringify!($p), " is null")),
        }
    };
}

macro_rules! deref_mut {
    ($p:expr) => {
        match $p.as_mut() {
            Some(v) => v,
            None => return fail(RfStatus::NullPointer, concat!(stringify!($p), " is null")),
        }
    };
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn rf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `max(a, p) - mean(a, p)` for the two agents' mean returns. `antagonist`
/// (optional) receives 0 when A is the better agent and 1 when P is.
///
/// # Safety
/// `out` must be writable; `antagonist` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rf_flexible_regret(mean_a: f64, mean_p: f64, out: *mut f64, antagonist: *mut u8) -> RfStatus {
    guard(|| {
        let o = deref_mut!(out);
        if !mean_a.is_finite() || !mean_p.is_finite() {
            return fail(RfStatus::InvalidArgument, "returns must be finite");
        }
        let (r, tag) = flexible_regret(mean_a, mean_p);
        *o = r;
        if let Some(t) = antagonist.as_mut() {
            *t = u8::from(tag == regretforge::trainer::AgentTag::P);
        }
        RfStatus::Ok
    })
}

/// `max(returns_a) - mean(returns_p)`. Both lists must be non-empty.
///
/// # Safety
/// `returns_a` and `returns_p` must point to `len_a` and `len_p` doubles.
#[no_mangle]
pub unsafe extern "C" fn rf_paired_regret(returns_a: *const f64, len_a: usize, returns_p: *const f64, len_p: usize, out: *mut f64) -> RfStatus {
    guard(|| {
        let o = deref_mut!(out);
        if returns_a.is_null() || returns_p.is_null() {
            return fail(RfStatus::NullPointer, "return list is null");
        }
        let a = std::slice::from_raw_parts(returns_a, len_a);
        let p = std::slice::from_raw_parts(returns_p, len_p);
        match paired_regret(a, p) {
            Some(r) => {
                *o = r;
                RfStatus::Ok
            }
            None => fail(RfStatus::InvalidArgument, "return lists must be non-empty"),
        }
    })
}

/// Parses GMDS/1 spec text.
///
/// # Safety
/// `text` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_spec_parse(text: *const c_char, out: *mut *mut RfSpec) -> RfStatus {
    guard(|| {
        let o = deref_mut!(out);
        let text = tri!(read_str(text));
        match DesignSpec::from_text(text) {
            Ok(spec) => {
                *o = Box::into_raw(Box::new(RfSpec(spec)));
                RfStatus::Ok
            }
            Err(e) => fail(RfStatus::Parse, e.to_string()),
        }
    })
}

/// Canonical text of a spec.
///
/// # Safety
/// `spec` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_spec_to_text(spec: *const RfSpec, out: *mut *mut c_char) -> RfStatus {
    guard(|| write_string(out, deref!(spec).0.to_text()))
}

/// # Safety
/// `spec` must be NULL or a live handle from [`rf_spec_parse`].
#[no_mangle]
pub unsafe extern "C" fn rf_spec_free(spec: *mut RfSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Renders a spec into a website.
///
/// # Safety
/// `spec` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_website_render(spec: *const RfSpec, out: *mut *mut RfWebsite) -> RfStatus {
    guard(|| {
        let o = deref_mut!(out);
        match render(&deref!(spec).0) {
            Ok(w) => {
                *o = Box::into_raw(Box::new(RfWebsite(w)));
                RfStatus::Ok
            }
            Err(e) => fail(RfStatus::Render, e.to_string()),
        }
    })
}

/// Parses the GMWB/1 website serialization.
///
/// # Safety
/// `text` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_website_parse(text: *const c_char, out: *mut *mut RfWebsite) -> RfStatus {
    guard(|| {
        let o = deref_mut!(out);
        let text = tri!(read_str(text));
        match Website::deserialize(text) {
            Ok(w) => {
                *o = Box::into_raw(Box::new(RfWebsite(w)));
                RfStatus::Ok
            }
            Err(e) => fail(RfStatus::Parse, e.to_string()),
        }
    })
}

/// GMWB/1 serialization of a website.
///
/// # Safety
/// `site` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_website_serialize(site: *const RfWebsite, out: *mut *mut c_char) -> RfStatus {
    guard(|| write_string(out, deref!(site).0.serialize()))
}

/// HTML of page `page`.
///
/// # Safety
/// `site` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_website_page_html(site: *const RfWebsite, page: usize, out: *mut *mut c_char) -> RfStatus {
    guard(|| {
        let pages = deref!(site).0.export_html();
        match pages.into_iter().nth(page) {
            Some(html) => write_string(out, html),
            None => fail(RfStatus::InvalidArgument, format!("page {page} out of range")),
        }
    })
}

/// Page count, or 0 for NULL.
///
/// # Safety
/// `site` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_website_pages(site: *const RfWebsite) -> usize {
    site.as_ref().map_or(0, |s| s.0.k())
}

/// Number of instruction fields, or 0 for NULL.
///
/// # Safety
/// `site` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_website_n_fields(site: *const RfWebsite) -> usize {
    site.as_ref().map_or(0, |s| s.0.n_fields())
}

/// # Safety
/// `site` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_website_free(site: *mut RfWebsite) {
    if !site.is_null() {
        drop(Box::from_raw(site));
    }
}

/// Starts an episode on a copy of `site`. The website handle may be freed
/// afterwards.
///
/// # Safety
/// `site` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_episode_new(site: *const RfWebsite, seed: u64, gamma: f64, out: *mut *mut RfEpisode) -> RfStatus {
    guard(|| {
        let o = deref_mut!(out);
        let site = deref!(site);
        if !(0.0..=1.0).contains(&gamma) {
            return fail(RfStatus::InvalidArgument, format!("gamma {gamma} outside [0, 1]"));
        }
        let (state, _) = reset(&site.0, seed, &EnvConfig { gamma });
        *o = Box::into_raw(Box::new(RfEpisode { state, rewards: Vec::new() }));
        RfStatus::Ok
    })
}

/// Current observation as JSON.
///
/// # Safety
/// `ep` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_episode_observation_json(ep: *const RfEpisode, out: *mut *mut c_char) -> RfStatus {
    guard(|| {
        let obs = deref!(ep).state.observe();
        write_string(out, serde_json::to_string(&obs).expect("observations serialize"))
    })
}

/// Types instruction field `field` into `element` (or clicks it).
/// `reward` and `done` may be NULL.
///
/// # Safety
/// `ep` must be a live handle; `reward` and `done` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn rf_episode_step(ep: *mut RfEpisode, element: usize, field: usize, reward: *mut f64, done: *mut bool) -> RfStatus {
    guard(|| {
        let ep = deref_mut!(ep);
        if ep.state.done {
            return fail(RfStatus::EpisodeDone, "episode already finished");
        }
        match ep.state.step(NavAction { element, field }) {
            Ok(o) => {
                ep.rewards.push(o.reward);
                if let Some(r) = reward.as_mut() {
                    *r = o.reward;
                }
                if let Some(d) = done.as_mut() {
                    *d = o.done;
                }
                RfStatus::Ok
            }
            Err(e) => fail(RfStatus::InvalidAction, e.to_string()),
        }
    })
}

/// The scripted oracle's next action.
///
/// # Safety
/// `ep` must be a live handle; `element` and `field` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_episode_oracle_action(ep: *const RfEpisode, element: *mut usize, field: *mut usize) -> RfStatus {
    guard(|| {
        let ep = deref!(ep);
        let (e, f) = (deref_mut!(element), deref_mut!(field));
        if ep.state.done {
            return fail(RfStatus::EpisodeDone, "episode already finished");
        }
        let a = ep.state.oracle_policy();
        *e = a.element;
        *f = a.field;
        RfStatus::Ok
    })
}

/// Discounted return of the rewards so far.
///
/// # Safety
/// `ep` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_episode_return(ep: *const RfEpisode, out: *mut f64) -> RfStatus {
    guard(|| {
        let ep = deref!(ep);
        *deref_mut!(out) = regretforge::env::episode_return(&ep.rewards, ep.state.gamma);
        RfStatus::Ok
    })
}

/// True once the episode ended by submission with every field correct.
///
/// # Safety
/// `ep` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_episode_succeeded(ep: *const RfEpisode) -> bool {
    ep.as_ref().is_some_and(|e| e.state.terminal_kind == regretforge::env::TerminalKind::Success)
}

/// # Safety
/// `ep` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_episode_free(ep: *mut RfEpisode) {
    if !ep.is_null() {
        drop(Box::from_raw(ep));
    }
}
